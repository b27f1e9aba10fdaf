#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mdr/corpus.hpp"
#include "mdr/denoiser.hpp"
#include "mdr/docid.hpp"

namespace mdr::testing {

// Temp directory that cleans up after itself.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("mdr_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// A vocabulary over a fixed word list, with optional code levels.
inline Vocabulary tiny_vocab(const std::vector<int>& codebook_sizes = {}) {
  std::vector<Document> docs = {
      {"d1", std::nullopt,
       "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo "
       "lima mike november oscar papa"}};
  return build_vocabulary(docs, {}, codebook_sizes);
}

// Trains a small model to memorize a handful of (query, docid) pairs.
struct MemorizedModel {
  Vocabulary vocab;
  DenoiserConfig config;
  DenoiserParams params;
  std::vector<TrainExample> examples;
};

inline MemorizedModel memorize_pairs(
    const std::vector<std::pair<std::string, TokenSeq>>& pairs, int docid_len,
    int epochs = 300, double lr = 5e-3) {
  MemorizedModel model;
  model.vocab = tiny_vocab();
  model.config.layers = 1;
  model.config.width = 32;
  model.config.heads = 2;
  model.config.ffn_multiplier = 2;
  model.config.max_query_len = 6;
  model.config.docid_len = docid_len;
  model.config.vocab_size = model.vocab.size();

  for (const auto& [query_text, target] : pairs) {
    TokenSeq condition = tokenize(query_text, model.vocab);
    if (static_cast<int>(condition.size()) > model.config.max_query_len) {
      condition.resize(model.config.max_query_len);
    }
    model.examples.push_back({condition, target});
  }

  TrainConfig train_config;
  train_config.learning_rate = lr;
  train_config.batch_size = 8;
  train_config.epochs = epochs;
  train_config.rng_seed = 17;
  TrainerT<float> trainer(init_parameters<float>(model.config, 5), train_config);
  trainer.train(model.examples);
  model.params = trainer.params();
  return model;
}

}  // namespace mdr::testing
