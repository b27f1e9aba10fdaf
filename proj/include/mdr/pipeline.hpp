#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdr/denoiser.hpp"
#include "mdr/eval.hpp"
#include "mdr/sampler.hpp"

namespace mdr {

enum class DocIdKind { learnable, linguistic };

DocIdKind docid_kind_from_string(const std::string& name);
std::string docid_kind_to_string(DocIdKind kind);

// One declarative file drives every command; it is fully validated before any
// work starts.
struct PipelineConfig {
  struct Paths {
    std::string corpus;
    std::string queries;  // optional
    std::string pairs;    // optional
    std::string workdir = "work";
  } paths;

  struct Corpus {
    int pseudo_queries_per_doc = 10;
    double holdout_fraction = 0.2;
  } corpus;

  struct DocId {
    DocIdKind kind = DocIdKind::learnable;
    std::vector<int> codebook_sizes = {512, 512, 512};
    int embedding_dim = 64;
    int kmeans_iters = 50;
    double kmeans_tol = 1e-6;
    int max_tokens = 12;
    int n_leading = 12;
  } docid;

  struct Denoiser {
    int layers = 2;
    int width = 128;
    int heads = 4;
    int ffn_multiplier = 2;
    int max_query_len = 12;
  } denoiser;

  TrainConfig train;
  bool train_on_documents = true;  // add (document, DocID) pairs to training

  struct Sampler {
    int steps = 0;  // 0 means "use the DocID length"
    std::string strategy = "maskgit_plus";
  } sampler;

  struct Eval {
    std::string split = "test";  // train | test
    std::string mode = "intermediate";
    int k = 10;
    int n_variants = 4;
    std::vector<int> steps_list = {1, 2, 4, 8};
  } eval;

  std::uint64_t seed = 7;

  void validate() const;
};

PipelineConfig load_config(const std::string& path);

// Lineage hashes: a stage hash covers everything that can change the bytes of
// that stage's artifacts, so edits to later sections never invalidate them.
std::string ingest_hash(const PipelineConfig& config);
std::string docids_hash(const PipelineConfig& config);
std::string train_hash(const PipelineConfig& config);

struct CommandContext {
  PipelineConfig config;
  bool force = false;
};

void cmd_ingest(const CommandContext& ctx);
void cmd_build_docids(const CommandContext& ctx);
void cmd_train(const CommandContext& ctx, bool resume = false);
void cmd_eval(const CommandContext& ctx);
void cmd_sweep(const CommandContext& ctx, const std::string& strategy_arg = "");

// Bundle access shared by commands and tests.
struct DatasetBundle {
  std::vector<Document> docs;
  std::vector<Query> queries;
  std::vector<RelevancePair> train_pairs;
  std::vector<RelevancePair> test_pairs;
  Vocabulary vocab;
};

DatasetBundle load_bundle(const std::string& workdir);

}  // namespace mdr
