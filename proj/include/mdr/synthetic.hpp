#pragma once

#include <cstdint>
#include <vector>

#include "mdr/corpus.hpp"

namespace mdr {

struct SyntheticCorpusOptions {
  int num_docs = 200;
  int body_tokens = 40;
  int topic_words_per_doc = 6;
  std::uint64_t rng_seed = 1;
};

// Deterministic toy corpus: each document mixes a mostly-private topic
// vocabulary with a small shared word pool. Every seventh document has no
// title, which exercises the leading-token DocID fallback.
std::vector<Document> synthetic_corpus(const SyntheticCorpusOptions& options);

}  // namespace mdr
