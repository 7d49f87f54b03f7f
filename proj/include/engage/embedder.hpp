#ifndef ENGAGE_EMBEDDER_HPP
#define ENGAGE_EMBEDDER_HPP

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "hashing.hpp"

/**
 * @file embedder.hpp
 *
 * @brief Sentence embeddings: a remote `/v1/embeddings` client with a content-addressed disk
 * cache, and a deterministic feature-hashing embedder for offline runs and tests.
 */

namespace engage {

/**
 * Row-major float32 embeddings; row `i` belongs to the i-th input text.
 */
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<float> values;

    std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }

    Matrix to_matrix() const {
        Matrix out(rows, dim);
        std::copy(values.begin(), values.end(), out.values.begin());
        return out;
    }

    bool operator==(const EmbeddingMatrix&) const = default;
};

class EmbedError : public Error {
public:
    EmbedError(const std::string& what, std::size_t completed) : Error(what), completed_rows(completed) {}
    std::size_t completed_rows;
};

/**
 * Deterministic offline embedding. Lower-cased whitespace tokens and adjacent-token bigrams are
 * hashed (FNV-1a 64) into `dim` buckets with a hash-derived sign; the count vector is then
 * L2-normalised.
 */
inline std::vector<double> hash_embed(std::string_view text, std::size_t dim) {
    if (dim < 2) {
        throw Error("hash_embed: dimension must be at least 2");
    }
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c);
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    if (tokens.empty()) {
        throw Error("hash_embed: empty text");
    }

    std::vector<double> out(dim, 0.0);
    auto add = [&](const std::string& feature) {
        const std::uint64_t h = fnv1a64(feature);
        const double sign = (h >> 63) != 0 ? -1.0 : 1.0;
        out[(h & 0x7fffffffffffffffULL) % dim] += sign;
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        add("u\x1f" + tokens[i]);
        if (i + 1 < tokens.size()) {
            add("b\x1f" + tokens[i] + "\x1f" + tokens[i + 1]);
        }
    }

    double norm = 0;
    for (double v : out) {
        norm += v * v;
    }
    if (norm == 0) {
        // Every feature cancelled; fall back to a fixed unit vector so the row stays finite.
        out[fnv1a64(text) % dim] = 1.0;
        return out;
    }
    norm = std::sqrt(norm);
    for (double& v : out) {
        v /= norm;
    }
    return out;
}

inline EmbeddingMatrix hash_embed_all(std::span<const std::string> texts, std::size_t dim) {
    EmbeddingMatrix m{texts.size(), dim, std::vector<float>(texts.size() * dim)};
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto v = hash_embed(texts[i], dim);
        std::copy(v.begin(), v.end(), m.values.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    return m;
}

/**
 * Persistent content-addressed embedding cache.
 *
 * `vectors.dat` is an append-only sequence of records `key[32] dim:u32 float32[dim]`;
 * `vectors.idx` is a sidecar of `key[32] offset:u64 dim:u32` entries pointing into it. Keys are
 * SHA-256 of `model '\0' text`. Lookups go through an immutable index snapshot; appends are
 * serialised through one writer and become visible after `publish()`.
 */
class EmbeddingCache {
public:
    using Key = Sha256Digest;

    struct Entry {
        std::uint64_t offset = 0;
        std::uint32_t dim = 0;
    };

    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            std::size_t h;
            std::memcpy(&h, k.data(), sizeof(h));
            return h;
        }
    };
    using Index = std::unordered_map<Key, Entry, KeyHash>;

    explicit EmbeddingCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
        load_index();
    }

    static Key key_for(std::string_view model, std::string_view text) {
        return Sha256().update(model).update(std::string_view("\0", 1)).update(text).finish();
    }

    std::shared_ptr<const Index> snapshot() const { return std::atomic_load(&snapshot_); }

    /// Reads a cached vector, or nullopt when the key is absent from `index`.
    std::optional<std::vector<float>> load(const Index& index, const Key& key) const {
        auto it = index.find(key);
        if (it == index.end()) {
            return std::nullopt;
        }
        std::ifstream in(data_path(), std::ios::binary);
        in.seekg(static_cast<std::streamoff>(it->second.offset + key.size() + sizeof(std::uint32_t)));
        std::vector<float> v(it->second.dim);
        std::string raw(v.size() * sizeof(float), '\0');
        in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
        if (!in) {
            throw Error("embedding cache: truncated record in " + data_path().string());
        }
        ByteReader r(raw);
        for (auto& x : v) {
            x = r.get<float>();
        }
        return v;
    }

    void store(const Key& key, std::span<const float> vec) {
        std::lock_guard lock(writer_);
        std::uint64_t offset = 0;
        {
            std::ofstream data(data_path(), std::ios::binary | std::ios::app);
            data.seekp(0, std::ios::end);
            offset = static_cast<std::uint64_t>(data.tellp());
            ByteWriter w;
            w.put<std::uint32_t>(static_cast<std::uint32_t>(vec.size()));
            for (float x : vec) {
                w.put(x);
            }
            data.write(reinterpret_cast<const char*>(key.data()), static_cast<std::streamsize>(key.size()));
            data.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
            if (!data.flush()) {
                throw Error("embedding cache: write failed");
            }
        }
        {
            std::ofstream idx(index_path(), std::ios::binary | std::ios::app);
            ByteWriter w;
            w.put<std::uint64_t>(offset);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(vec.size()));
            idx.write(reinterpret_cast<const char*>(key.data()), static_cast<std::streamsize>(key.size()));
            idx.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
            if (!idx.flush()) {
                throw Error("embedding cache: index write failed");
            }
        }
        pending_.emplace_back(key, Entry{offset, static_cast<std::uint32_t>(vec.size())});
    }

    /// Makes everything stored so far visible to new snapshots.
    void publish() {
        std::lock_guard lock(writer_);
        if (pending_.empty()) {
            return;
        }
        auto next = std::make_shared<Index>(*snapshot());
        for (const auto& [k, e] : pending_) {
            next->emplace(k, e);
        }
        pending_.clear();
        std::atomic_store(&snapshot_, std::shared_ptr<const Index>(std::move(next)));
    }

    std::size_t size() const { return snapshot()->size(); }

    std::filesystem::path data_path() const { return dir_ / "vectors.dat"; }
    std::filesystem::path index_path() const { return dir_ / "vectors.idx"; }

private:
    void load_index() {
        auto index = std::make_shared<Index>();
        std::uint64_t data_size = 0;
        if (std::filesystem::exists(data_path())) {
            data_size = std::filesystem::file_size(data_path());
        }
        if (std::filesystem::exists(index_path())) {
            const std::string raw = read_file(index_path().string());
            constexpr std::size_t entry = 32 + 8 + 4;
            for (std::size_t pos = 0; pos + entry <= raw.size(); pos += entry) {
                Key k;
                std::memcpy(k.data(), raw.data() + pos, k.size());
                ByteReader r(std::string_view(raw).substr(pos + 32, 12));
                Entry e;
                e.offset = r.get<std::uint64_t>();
                e.dim = r.get<std::uint32_t>();
                // A record whose data never fully landed is ignored.
                if (e.offset + 32 + 4 + std::uint64_t{e.dim} * 4 <= data_size) {
                    index->insert_or_assign(k, e);
                }
            }
        }
        snapshot_ = std::move(index);
    }

    std::filesystem::path dir_;
    std::shared_ptr<const Index> snapshot_;
    std::mutex writer_;
    std::vector<std::pair<Key, Entry>> pending_;
};

struct TransportResponse {
    int status = 0;
    std::string body;
};

/// Network-level failure (connection refused, timeout); always retried.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Sends one JSON request body to the embeddings endpoint.
using Transport = std::function<TransportResponse(const std::string& body)>;

struct ServiceConfig {
    std::string endpoint = "https://api.openai.com/v1/embeddings";
    std::string model = "text-embedding-ada-002";
    std::size_t batch_size = 256;
    std::size_t max_retries = 4;
    std::chrono::milliseconds initial_backoff{500};
    std::size_t max_in_flight = 4;
    std::chrono::seconds timeout{60};
    /// Injected for tests; defaults to `std::this_thread::sleep_for`.
    std::function<void(std::chrono::milliseconds)> sleep;
};

struct EmbedStats {
    std::size_t cache_hits = 0;
    std::size_t requests = 0;
    std::size_t retries = 0;
};

/**
 * Builds a transport that POSTs to `config.endpoint` with cpp-httplib, sending
 * `Authorization: Bearer $EMBED_API_KEY` when the variable is set.
 */
Transport http_transport(const ServiceConfig& config);

namespace detail {

inline std::vector<std::vector<float>> parse_embedding_response(const std::string& body, std::size_t expected) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("embedding response is not JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("data") || !doc["data"].is_array()) {
        throw Error("embedding response lacks a 'data' array");
    }
    const auto& data = doc["data"];
    if (data.size() != expected) {
        throw Error("embedding response has " + std::to_string(data.size()) + " vectors for " +
                    std::to_string(expected) + " inputs");
    }
    std::vector<std::vector<float>> out(expected);
    std::vector<bool> filled(expected, false);
    for (const auto& item : data) {
        if (!item.contains("index") || !item["index"].is_number_integer() || !item.contains("embedding") ||
            !item["embedding"].is_array()) {
            throw Error("embedding response item malformed");
        }
        const auto idx = item["index"].get<std::int64_t>();
        if (idx < 0 || static_cast<std::size_t>(idx) >= expected || filled[idx]) {
            throw Error("embedding response index out of range or repeated");
        }
        filled[idx] = true;
        auto& vec = out[idx];
        vec.reserve(item["embedding"].size());
        for (const auto& x : item["embedding"]) {
            if (!x.is_number()) {
                throw Error("embedding value is not a number");
            }
            const double v = x.get<double>();
            if (!std::isfinite(v)) {
                throw Error("embedding value is not finite");
            }
            vec.push_back(static_cast<float>(v));
        }
        if (vec.empty()) {
            throw Error("embedding response contains an empty vector");
        }
    }
    for (const auto& v : out) {
        if (v.size() != out[0].size()) {
            throw Error("embedding response vectors have inconsistent dimensions");
        }
    }
    return out;
}

}  // namespace detail

/**
 * Embeds `texts` in input order. Texts already cached under `config.model` are served from
 * `cache` and never requested again; the remaining distinct texts are sent in batches of
 * `config.batch_size`, with up to `config.max_in_flight` batches outstanding. Transport failures
 * and HTTP 429/5xx responses are retried with exponential backoff; a malformed response is a
 * protocol error and fails immediately. On failure an `EmbedError` reports how many rows were
 * already available.
 */
inline EmbeddingMatrix embed_batch(std::span<const std::string> texts, const ServiceConfig& config,
                                   const Transport& transport, EmbeddingCache* cache = nullptr,
                                   EmbedStats* stats = nullptr) {
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i].empty()) {
            throw Error("embed_batch: text " + std::to_string(i) + " is empty");
        }
    }
    if (config.batch_size == 0) {
        throw Error("embed_batch: batch size must be positive");
    }

    EmbedStats local;
    std::vector<EmbeddingCache::Key> keys(texts.size());
    std::vector<std::optional<std::vector<float>>> rows(texts.size());
    std::unordered_map<EmbeddingCache::Key, std::size_t, EmbeddingCache::KeyHash> first_of;
    std::vector<std::size_t> missing;  // first occurrence of each distinct uncached text

    const auto index = cache ? cache->snapshot() : nullptr;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        keys[i] = EmbeddingCache::key_for(config.model, texts[i]);
        if (index) {
            if (auto hit = cache->load(*index, keys[i])) {
                rows[i] = std::move(hit);
                ++local.cache_hits;
                continue;
            }
        }
        if (first_of.emplace(keys[i], i).second) {
            missing.push_back(i);
        }
    }

    const std::size_t nbatches = (missing.size() + config.batch_size - 1) / config.batch_size;
    std::atomic<std::size_t> completed{local.cache_hits};
    std::atomic<std::size_t> requests{0}, retries{0};
    std::mutex fail_lock;
    std::optional<std::string> failure;
    auto sleep = config.sleep ? config.sleep : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

    parallel_for(
        nbatches,
        [&](std::size_t b) {
            {
                std::lock_guard lock(fail_lock);
                if (failure) {
                    return;
                }
            }
            const std::size_t begin = b * config.batch_size;
            const std::size_t end = std::min(missing.size(), begin + config.batch_size);
            nlohmann::json request{{"model", config.model}, {"input", nlohmann::json::array()}};
            for (std::size_t j = begin; j < end; ++j) {
                request["input"].push_back(texts[missing[j]]);
            }
            const std::string body = request.dump();

            std::string last_error;
            auto backoff = config.initial_backoff;
            for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
                if (attempt > 0) {
                    ++retries;
                    sleep(backoff);
                    backoff *= 2;
                }
                TransportResponse resp;
                try {
                    ++requests;
                    resp = transport(body);
                } catch (const TransportError& e) {
                    last_error = e.what();
                    continue;
                }
                if (resp.status == 429 || resp.status >= 500) {
                    last_error = "HTTP " + std::to_string(resp.status);
                    continue;
                }
                std::vector<std::vector<float>> vecs;
                try {
                    if (resp.status != 200) {
                        throw Error("HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200));
                    }
                    vecs = detail::parse_embedding_response(resp.body, end - begin);
                } catch (const Error& e) {
                    std::lock_guard lock(fail_lock);
                    if (!failure) {
                        failure = std::string("protocol error: ") + e.what();
                    }
                    return;
                }
                for (std::size_t j = begin; j < end; ++j) {
                    auto& vec = vecs[j - begin];
                    if (cache) {
                        cache->store(keys[missing[j]], vec);
                    }
                    rows[missing[j]] = std::move(vec);
                }
                completed += end - begin;
                return;
            }
            std::lock_guard lock(fail_lock);
            if (!failure) {
                failure = "batch " + std::to_string(b) + " failed after " + std::to_string(config.max_retries + 1) +
                          " attempts: " + last_error;
            }
        },
        std::max<std::size_t>(1, config.max_in_flight));

    if (cache) {
        cache->publish();
    }
    local.requests = requests;
    local.retries = retries;
    if (stats) {
        *stats = local;
    }
    if (failure) {
        throw EmbedError("embed_batch: " + *failure, completed.load());
    }

    // Duplicated texts share the first occurrence's vector.
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (!rows[i]) {
            rows[i] = rows[first_of.at(keys[i])];
        }
    }

    EmbeddingMatrix out;
    out.rows = texts.size();
    out.dim = texts.empty() ? 0 : rows[0]->size();
    out.values.reserve(out.rows * out.dim);
    for (const auto& r : rows) {
        if (r->size() != out.dim) {
            throw EmbedError("embed_batch: vectors of differing dimension", texts.size());
        }
        out.values.insert(out.values.end(), r->begin(), r->end());
    }
    return out;
}

/// Per-row provenance carried through embedding, reduction and clustering.
struct RowMeta {
    std::string doc_id;
    std::string user_id;
    Group group = Group::early;

    bool operator==(const RowMeta&) const = default;
};

/**
 * Embedded analysis documents plus the cohort sizes needed downstream.
 * `early_users`/`late_users` count distinct authors of each cohort in the analysis window.
 */
struct EmbeddingSet {
    std::string model;
    std::vector<RowMeta> rows;
    EmbeddingMatrix matrix;
    std::uint64_t early_users = 0;
    std::uint64_t late_users = 0;

    bool operator==(const EmbeddingSet&) const = default;
};

inline std::string serialize_embeddings(const EmbeddingSet& set, ContainerKind kind = ContainerKind::embeddings) {
    ByteWriter w;
    w.put_string(set.model);
    w.put<std::uint64_t>(set.early_users);
    w.put<std::uint64_t>(set.late_users);
    w.put<std::uint64_t>(set.matrix.rows);
    w.put<std::uint64_t>(set.matrix.dim);
    for (const auto& r : set.rows) {
        w.put_string(r.doc_id);
        w.put_string(r.user_id);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(r.group));
    }
    for (float v : set.matrix.values) {
        w.put(v);
    }
    return wrap_container(kind, w.bytes());
}

inline EmbeddingSet deserialize_embeddings(std::string_view bytes, ContainerKind kind = ContainerKind::embeddings) {
    const std::string payload = unwrap_container(bytes, kind);
    ByteReader r(payload);
    EmbeddingSet set;
    set.model = r.get_string();
    set.early_users = r.get<std::uint64_t>();
    set.late_users = r.get<std::uint64_t>();
    set.matrix.rows = r.get<std::uint64_t>();
    set.matrix.dim = r.get<std::uint64_t>();
    set.rows.resize(set.matrix.rows);
    for (auto& row : set.rows) {
        row.doc_id = r.get_string();
        row.user_id = r.get_string();
        const auto g = r.get<std::uint8_t>();
        if (g > 1) {
            throw FormatError("invalid group tag");
        }
        row.group = static_cast<Group>(g);
    }
    if (set.matrix.dim != 0 && set.matrix.rows > payload.size() / 4 / set.matrix.dim) {
        throw FormatError("embedding matrix larger than payload");
    }
    set.matrix.values.resize(set.matrix.rows * set.matrix.dim);
    for (auto& v : set.matrix.values) {
        v = r.get<float>();
        if (!std::isfinite(v)) {
            throw FormatError("non-finite embedding value");
        }
    }
    if (!r.exhausted()) {
        throw FormatError("trailing bytes in embedding payload");
    }
    return set;
}

/**
 * Documents eligible for topic modelling: inside the analysis window, not retweets, and with
 * non-empty cleaned text. Returns the row metadata and the cleaned texts, in corpus order.
 */
inline std::pair<std::vector<RowMeta>, std::vector<std::string>> embedding_inputs(const GroupedCorpus& corpus) {
    std::pair<std::vector<RowMeta>, std::vector<std::string>> out;
    for (const auto* d : corpus.analysis_documents()) {
        if (d->is_retweet) {
            continue;
        }
        auto cleaned = clean_text(d->text);
        if (cleaned.empty()) {
            continue;
        }
        out.first.push_back({d->doc_id, d->user_id, corpus.group(*d)});
        out.second.push_back(std::move(cleaned));
    }
    return out;
}

}  // namespace engage

#include "detail/http_transport.hpp"

#endif
