#ifndef ENGAGE_DETAIL_HTTP_TRANSPORT_HPP
#define ENGAGE_DETAIL_HTTP_TRANSPORT_HPP

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"
// <resolv.h> defines _res as a macro, which collides with identifiers in other headers.
#ifdef _res
#undef _res
#endif

#include <cstdlib>
#include <string>

namespace engage {

namespace detail {

struct EndpointParts {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline EndpointParts split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error("endpoint '" + url + "' has no scheme");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

inline Transport http_transport(const ServiceConfig& config) {
    const auto parts = detail::split_endpoint(config.endpoint);
    httplib::Headers headers;
    if (const char* key = std::getenv("EMBED_API_KEY"); key != nullptr && *key != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    return [parts, headers, timeout = config.timeout](const std::string& body) -> TransportResponse {
        // One client per request: httplib::Client must not be shared across in-flight batches.
        httplib::Client client(parts.origin);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        auto res = client.Post(parts.path, headers, body, "application/json");
        if (!res) {
            throw TransportError("HTTP request failed: " + httplib::to_string(res.error()));
        }
        return {res->status, res->body};
    };
}

}  // namespace engage

#endif
