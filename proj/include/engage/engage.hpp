#ifndef ENGAGE_ENGAGE_HPP
#define ENGAGE_ENGAGE_HPP

#include "binary_io.hpp"
#include "clusterer.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "divergence.hpp"
#include "embedder.hpp"
#include "hashing.hpp"
#include "pipeline.hpp"
#include "reducer.hpp"
#include "semantic_bias.hpp"
#include "stats.hpp"
#include "svg.hpp"
#include "synthetic.hpp"
#include "topic_filter.hpp"
#include "topics.hpp"

#endif
