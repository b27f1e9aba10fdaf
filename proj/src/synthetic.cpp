#include "mdr/synthetic.hpp"

#include <random>
#include <set>
#include <stdexcept>

namespace mdr {

namespace {

std::vector<std::string> make_word_pool(int size, std::mt19937_64& rng) {
  static const char* syllables[] = {"ba", "ce", "di", "fo", "gu", "ka", "le",
                                    "mi", "no", "pu", "ra", "se", "ti", "vo",
                                    "wy", "za", "bren", "dor", "fil", "gom"};
  constexpr int n_syllables = 20;
  std::vector<std::string> pool;
  std::uniform_int_distribution<int> pick(0, n_syllables - 1);
  std::uniform_int_distribution<int> length(2, 4);
  std::set<std::string> seen;
  while (static_cast<int>(pool.size()) < size) {
    std::string word;
    const int n = length(rng);
    for (int i = 0; i < n; ++i) word += syllables[pick(rng)];
    if (seen.insert(word).second) pool.push_back(word);
  }
  return pool;
}

}  // namespace

std::vector<Document> synthetic_corpus(const SyntheticCorpusOptions& options) {
  if (options.num_docs < 1) {
    throw std::invalid_argument("synthetic_corpus: need at least one document");
  }
  std::mt19937_64 rng(options.rng_seed);
  const int pool_size = std::max(2 * options.num_docs, 64);
  std::vector<std::string> pool = make_word_pool(pool_size, rng);
  std::vector<std::string> common = make_word_pool(20, rng);

  std::vector<Document> docs;
  docs.reserve(options.num_docs);
  std::uniform_int_distribution<int> pool_pick(0, pool_size - 1);
  std::uniform_int_distribution<int> common_pick(0, 19);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int i = 0; i < options.num_docs; ++i) {
    // first topic word is private to the document, the rest may overlap
    std::vector<std::string> topic;
    topic.push_back(pool[i % pool_size]);
    while (static_cast<int>(topic.size()) < options.topic_words_per_doc) {
      topic.push_back(pool[pool_pick(rng)]);
    }

    Document doc;
    doc.doc_id = "doc" + std::to_string(i);
    std::string body;
    for (int t = 0; t < options.body_tokens; ++t) {
      if (!body.empty()) body += ' ';
      if (unit(rng) < 0.8) {
        std::uniform_int_distribution<int> topic_pick(
            0, static_cast<int>(topic.size()) - 1);
        body += topic[topic_pick(rng)];
      } else {
        body += common[common_pick(rng)];
      }
    }
    doc.body = body;
    if (i % 7 != 6) {
      doc.title = topic[0] + " " + topic[1 % topic.size()] + " " +
                  topic[2 % topic.size()];
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace mdr
