#include "mdr/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "mdr/common.hpp"

namespace mdr {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void check_keys(const nlohmann::json& obj, const std::string& section,
                const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      fail("config: unknown key \"" + it.key() + "\" in " + section);
    }
  }
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

fs::path bundle_dir(const PipelineConfig& config) {
  return fs::path(config.paths.workdir) / "dataset.bundle";
}

fs::path reports_dir(const PipelineConfig& config) {
  return fs::path(config.paths.workdir) / "reports";
}

void write_json_file(const fs::path& path, const ordered_json& payload) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot open " + path.string() + " for writing");
  out << payload.dump(2) << "\n";
  if (!out) fail("write failed for " + path.string());
}

ordered_json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path.string());
  ordered_json payload = ordered_json::parse(in, nullptr, false);
  if (payload.is_discarded()) fail("malformed JSON in " + path.string());
  return payload;
}

ordered_json metrics_json(const MetricReport& metrics) {
  ordered_json out;
  out["recall@1"] = metrics.recall1;
  out["recall@5"] = metrics.recall5;
  out["recall@10"] = metrics.recall10;
  out["mrr@10"] = metrics.mrr10;
  out["mean_latency_ms"] = metrics.mean_latency_ms;
  out["throughput_qps"] = metrics.throughput_qps;
  return out;
}

struct EvalInputs {
  DatasetBundle bundle;
  DocIdRegistry registry;
  Trainer trainer;
  std::vector<EvalQuery> queries;
  Qrels qrels;
};

DenoiserConfig denoiser_config(const PipelineConfig& config, int vocab_size,
                               int docid_len) {
  DenoiserConfig cfg;
  cfg.layers = config.denoiser.layers;
  cfg.width = config.denoiser.width;
  cfg.heads = config.denoiser.heads;
  cfg.ffn_multiplier = config.denoiser.ffn_multiplier;
  cfg.max_query_len = config.denoiser.max_query_len;
  cfg.docid_len = docid_len;
  cfg.vocab_size = vocab_size;
  return cfg;
}

void require_hash(const std::string& found, const std::string& expected,
                  const std::string& artifact, bool force) {
  if (found == expected) return;
  if (force) {
    std::cerr << "warning: " << artifact
              << " was produced by a different configuration (hash " << found
              << ", expected " << expected << "); continuing because of --force\n";
    return;
  }
  fail(artifact + " was produced by a different configuration (hash " + found +
       ", expected " + expected + "); rerun the producing command or pass --force");
}

DocIdRegistry load_registry_checked(const PipelineConfig& config, bool force) {
  const fs::path path = fs::path(config.paths.workdir) / "registry.tsv";
  if (!fs::exists(path)) {
    fail("missing " + path.string() + "; run `build-docids` first");
  }
  std::string meta;
  DocIdRegistry registry = load_registry(path.string(), &meta);
  require_hash(meta, docids_hash(config), path.string(), force);
  const DocIdKind kind = registry.kind() == DocIdRegistry::Kind::learnable
                             ? DocIdKind::learnable
                             : DocIdKind::linguistic;
  if (kind != config.docid.kind) {
    fail(path.string() + " holds " + docid_kind_to_string(kind) +
         " DocIDs but the config asks for " +
         docid_kind_to_string(config.docid.kind));
  }
  if (registry.kind() == DocIdRegistry::Kind::learnable) {
    Codebook codebook =
        load_codebook((fs::path(config.paths.workdir) / "codebook.bin").string());
    if (codebook.dim() != registry.embedding_dim()) {
      fail("registry/codebook dimension mismatch: registry declares d=" +
           std::to_string(registry.embedding_dim()) + ", codebook has d=" +
           std::to_string(codebook.dim()));
    }
  }
  return registry;
}

EvalInputs load_eval_inputs(const PipelineConfig& config, bool force) {
  DatasetBundle bundle = load_bundle(config.paths.workdir);
  {
    ordered_json summary = read_json_file(bundle_dir(config) / "summary.json");
    require_hash(summary.value("hash", ""), ingest_hash(config),
                 (bundle_dir(config) / "summary.json").string(), force);
  }
  DocIdRegistry registry = load_registry_checked(config, force);

  const fs::path ckpt = fs::path(config.paths.workdir) / "checkpoint.bin";
  if (!fs::exists(ckpt)) {
    fail("missing " + ckpt.string() + "; run `train` first");
  }
  std::string meta;
  Trainer trainer = Trainer::load_checkpoint(ckpt.string(), &meta);
  require_hash(meta, train_hash(config), ckpt.string(), force);

  EvalInputs inputs{std::move(bundle), std::move(registry), std::move(trainer),
                    {}, {}};
  const auto& pairs = config.eval.split == "train" ? inputs.bundle.train_pairs
                                                   : inputs.bundle.test_pairs;
  if (pairs.empty()) fail("eval: the " + config.eval.split + " split is empty");

  std::unordered_map<std::string, const Query*> by_qid;
  for (const Query& q : inputs.bundle.queries) by_qid[q.query_id] = &q;

  std::set<std::string> seen;
  for (const RelevancePair& pair : pairs) {
    auto it = by_qid.find(pair.query_id);
    if (it == by_qid.end()) fail("eval: pair references unknown query \"" +
                                 pair.query_id + "\"");
    inputs.qrels[pair.query_id].insert(pair.doc_id);
    if (seen.insert(pair.query_id).second) {
      inputs.queries.push_back(
          {pair.query_id, tokenize(it->second->text, inputs.bundle.vocab)});
    }
  }
  return inputs;
}

SamplerConfig resolved_sampler(const PipelineConfig& config, int docid_len) {
  SamplerConfig sampler;
  sampler.steps = config.sampler.steps > 0 ? config.sampler.steps : docid_len;
  sampler.docid_len = docid_len;
  sampler.strategy = strategy_from_string(config.sampler.strategy);
  sampler.rng_seed = mix_seed(config.seed, 0xe7a1);
  return sampler;
}

ordered_json eval_config_snapshot(const PipelineConfig& config,
                                  const SamplerConfig& sampler,
                                  std::size_t n_queries) {
  ordered_json snap;
  snap["docid_kind"] = docid_kind_to_string(config.docid.kind);
  snap["split"] = config.eval.split;
  snap["mode"] = config.eval.mode;
  snap["steps"] = sampler.steps;
  snap["strategy"] = strategy_to_string(sampler.strategy);
  snap["k"] = config.eval.k;
  snap["seed"] = config.seed;
  snap["queries"] = n_queries;
  return snap;
}

}  // namespace

DocIdKind docid_kind_from_string(const std::string& name) {
  if (name == "learnable") return DocIdKind::learnable;
  if (name == "linguistic") return DocIdKind::linguistic;
  fail("unknown DocID kind \"" + name + "\"");
}

std::string docid_kind_to_string(DocIdKind kind) {
  return kind == DocIdKind::learnable ? "learnable" : "linguistic";
}

void PipelineConfig::validate() const {
  if (paths.corpus.empty()) fail("config: paths.corpus is required");
  if (paths.workdir.empty()) fail("config: paths.workdir is required");
  if (corpus.pseudo_queries_per_doc < 0) {
    fail("config: corpus.pseudo_queries_per_doc must be >= 0");
  }
  if (!(corpus.holdout_fraction > 0.0 && corpus.holdout_fraction < 1.0)) {
    fail("config: corpus.holdout_fraction must be in (0,1)");
  }
  if (docid.kind == DocIdKind::learnable) {
    if (docid.codebook_sizes.empty()) {
      fail("config: learnable DocIDs need docid.codebook_sizes");
    }
    for (int k : docid.codebook_sizes) {
      if (k < 2) fail("config: codebook sizes must be >= 2");
    }
    if (docid.embedding_dim < 1) fail("config: docid.embedding_dim must be >= 1");
    if (docid.kmeans_iters < 1) fail("config: docid.kmeans_iters must be >= 1");
  } else {
    if (docid.max_tokens < 1) fail("config: docid.max_tokens must be >= 1");
    if (docid.n_leading < 1) fail("config: docid.n_leading must be >= 1");
  }
  if (denoiser.layers < 1 || denoiser.width < 1 || denoiser.heads < 1 ||
      denoiser.width % denoiser.heads != 0) {
    fail("config: denoiser width must be a positive multiple of heads");
  }
  if (denoiser.max_query_len < 1) {
    fail("config: denoiser.max_query_len must be >= 1");
  }
  train.validate();
  if (sampler.steps < 0) fail("config: sampler.steps must be >= 0");
  strategy_from_string(sampler.strategy);
  if (eval.split != "train" && eval.split != "test") {
    fail("config: eval.split must be \"train\" or \"test\"");
  }
  beam_mode_from_string(eval.mode);
  if (eval.k < 1) fail("config: eval.k must be >= 1");
  if (eval.n_variants < 1) fail("config: eval.n_variants must be >= 1");
  if (eval.steps_list.empty()) fail("config: eval.steps_list must be non-empty");
  for (int steps : eval.steps_list) {
    if (steps < 1) fail("config: eval.steps_list entries must be >= 1");
  }
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open " + path);
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    fail("config: malformed JSON in " + path);
  }
  check_keys(doc, "the top level",
             {"paths", "corpus", "docid", "denoiser", "train", "sampler", "eval",
              "seed"});

  PipelineConfig config;
  if (auto it = doc.find("paths"); it != doc.end()) {
    check_keys(*it, "paths", {"corpus", "queries", "pairs", "workdir"});
    read_field(*it, "corpus", config.paths.corpus);
    read_field(*it, "queries", config.paths.queries);
    read_field(*it, "pairs", config.paths.pairs);
    read_field(*it, "workdir", config.paths.workdir);
  }
  if (auto it = doc.find("corpus"); it != doc.end()) {
    check_keys(*it, "corpus", {"pseudo_queries_per_doc", "holdout_fraction"});
    read_field(*it, "pseudo_queries_per_doc", config.corpus.pseudo_queries_per_doc);
    read_field(*it, "holdout_fraction", config.corpus.holdout_fraction);
  }
  if (auto it = doc.find("docid"); it != doc.end()) {
    check_keys(*it, "docid",
               {"kind", "codebook_sizes", "embedding_dim", "kmeans_iters",
                "kmeans_tol", "max_tokens", "n_leading"});
    std::string kind = docid_kind_to_string(config.docid.kind);
    read_field(*it, "kind", kind);
    config.docid.kind = docid_kind_from_string(kind);
    read_field(*it, "codebook_sizes", config.docid.codebook_sizes);
    read_field(*it, "embedding_dim", config.docid.embedding_dim);
    read_field(*it, "kmeans_iters", config.docid.kmeans_iters);
    read_field(*it, "kmeans_tol", config.docid.kmeans_tol);
    read_field(*it, "max_tokens", config.docid.max_tokens);
    read_field(*it, "n_leading", config.docid.n_leading);
  }
  if (auto it = doc.find("denoiser"); it != doc.end()) {
    check_keys(*it, "denoiser",
               {"layers", "width", "heads", "ffn_multiplier", "max_query_len"});
    read_field(*it, "layers", config.denoiser.layers);
    read_field(*it, "width", config.denoiser.width);
    read_field(*it, "heads", config.denoiser.heads);
    read_field(*it, "ffn_multiplier", config.denoiser.ffn_multiplier);
    read_field(*it, "max_query_len", config.denoiser.max_query_len);
  }
  if (auto it = doc.find("train"); it != doc.end()) {
    check_keys(*it, "train",
               {"learning_rate", "batch_size", "epochs", "beta1", "beta2",
                "grad_clip", "on_documents"});
    read_field(*it, "learning_rate", config.train.learning_rate);
    read_field(*it, "batch_size", config.train.batch_size);
    read_field(*it, "epochs", config.train.epochs);
    read_field(*it, "beta1", config.train.beta1);
    read_field(*it, "beta2", config.train.beta2);
    read_field(*it, "grad_clip", config.train.grad_clip);
    read_field(*it, "on_documents", config.train_on_documents);
  }
  if (auto it = doc.find("sampler"); it != doc.end()) {
    check_keys(*it, "sampler", {"steps", "strategy"});
    read_field(*it, "steps", config.sampler.steps);
    read_field(*it, "strategy", config.sampler.strategy);
  }
  if (auto it = doc.find("eval"); it != doc.end()) {
    check_keys(*it, "eval", {"split", "mode", "k", "n_variants", "steps_list"});
    read_field(*it, "split", config.eval.split);
    read_field(*it, "mode", config.eval.mode);
    read_field(*it, "k", config.eval.k);
    read_field(*it, "n_variants", config.eval.n_variants);
    read_field(*it, "steps_list", config.eval.steps_list);
  }
  read_field(doc, "seed", config.seed);
  config.validate();
  return config;
}

std::string ingest_hash(const PipelineConfig& config) {
  std::ostringstream os;
  os << "corpus=" << config.paths.corpus << "|queries=" << config.paths.queries
     << "|pairs=" << config.paths.pairs
     << "|pq=" << config.corpus.pseudo_queries_per_doc
     << "|holdout=" << fmt_double(config.corpus.holdout_fraction)
     << "|kind=" << docid_kind_to_string(config.docid.kind) << "|K=";
  if (config.docid.kind == DocIdKind::learnable) {
    for (int k : config.docid.codebook_sizes) os << k << ",";
  }
  os << "|seed=" << config.seed;
  return hex64(fnv1a(os.str()));
}

std::string docids_hash(const PipelineConfig& config) {
  std::ostringstream os;
  os << ingest_hash(config);
  if (config.docid.kind == DocIdKind::learnable) {
    os << "|dim=" << config.docid.embedding_dim
       << "|iters=" << config.docid.kmeans_iters
       << "|tol=" << fmt_double(config.docid.kmeans_tol);
  } else {
    os << "|max_tokens=" << config.docid.max_tokens
       << "|n_leading=" << config.docid.n_leading;
  }
  return hex64(fnv1a(os.str()));
}

std::string train_hash(const PipelineConfig& config) {
  std::ostringstream os;
  os << docids_hash(config) << "|layers=" << config.denoiser.layers
     << "|width=" << config.denoiser.width << "|heads=" << config.denoiser.heads
     << "|ffn=" << config.denoiser.ffn_multiplier
     << "|maxq=" << config.denoiser.max_query_len
     << "|lr=" << fmt_double(config.train.learning_rate)
     << "|batch=" << config.train.batch_size
     << "|b1=" << fmt_double(config.train.beta1)
     << "|b2=" << fmt_double(config.train.beta2)
     << "|clip=" << fmt_double(config.train.grad_clip)
     << "|ondocs=" << (config.train_on_documents ? 1 : 0);
  // epochs deliberately excluded: resuming with a larger budget must not
  // orphan the checkpoint
  return hex64(fnv1a(os.str()));
}

DatasetBundle load_bundle(const std::string& workdir) {
  const fs::path dir = fs::path(workdir) / "dataset.bundle";
  if (!fs::exists(dir / "summary.json")) {
    fail("missing dataset bundle in " + dir.string() + "; run `ingest` first");
  }
  DatasetBundle bundle;
  bundle.docs = load_corpus((dir / "docs.jsonl").string());
  bundle.queries = load_queries((dir / "queries.jsonl").string());
  bundle.train_pairs = load_pairs((dir / "train_pairs.jsonl").string());
  bundle.test_pairs = load_pairs((dir / "test_pairs.jsonl").string());
  bundle.vocab = load_vocabulary((dir / "vocab.tsv").string());
  return bundle;
}

void cmd_ingest(const CommandContext& ctx) {
  const PipelineConfig& config = ctx.config;
  std::vector<Document> docs = load_corpus(config.paths.corpus);
  std::vector<Query> queries;
  std::vector<RelevancePair> pairs;
  if (!config.paths.queries.empty()) {
    queries = load_queries(config.paths.queries);
  }
  if (!config.paths.pairs.empty()) {
    pairs = load_pairs(config.paths.pairs);
  }
  const std::size_t n_real_queries = queries.size();

  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (Query& q : generate_pseudo_queries(docs[i],
                                            config.corpus.pseudo_queries_per_doc,
                                            mix_seed(config.seed, i))) {
      pairs.push_back({q.query_id, docs[i].doc_id});
      queries.push_back(std::move(q));
    }
  }
  if (pairs.empty()) fail("ingest: no relevance pairs (provide pairs or enable pseudo queries)");

  {
    std::set<std::string> doc_ids;
    for (const Document& d : docs) doc_ids.insert(d.doc_id);
    std::set<std::string> query_ids;
    for (const Query& q : queries) query_ids.insert(q.query_id);
    for (const RelevancePair& pair : pairs) {
      if (!doc_ids.count(pair.doc_id)) {
        fail("ingest: pair references unknown doc \"" + pair.doc_id + "\"");
      }
      if (!query_ids.count(pair.query_id)) {
        fail("ingest: pair references unknown query \"" + pair.query_id + "\"");
      }
    }
  }

  Vocabulary vocab = build_vocabulary(
      docs, queries,
      config.docid.kind == DocIdKind::learnable ? config.docid.codebook_sizes
                                                : std::vector<int>{});
  DatasetSplit split = split_dataset(pairs, config.corpus.holdout_fraction,
                                     mix_seed(config.seed, 0x5b17));

  const fs::path dir = bundle_dir(config);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "docs.jsonl", std::ios::trunc);
    for (const Document& doc : docs) {
      ordered_json rec;
      rec["id"] = doc.doc_id;
      rec["title"] = doc.title ? ordered_json(*doc.title) : ordered_json(nullptr);
      rec["body"] = doc.body;
      out << rec.dump() << "\n";
    }
  }
  {
    std::ofstream out(dir / "queries.jsonl", std::ios::trunc);
    for (const Query& q : queries) {
      ordered_json rec;
      rec["qid"] = q.query_id;
      rec["text"] = q.text;
      out << rec.dump() << "\n";
    }
  }
  auto write_pairs = [&](const char* name, const std::vector<RelevancePair>& set) {
    std::ofstream out(dir / name, std::ios::trunc);
    for (const RelevancePair& pair : set) {
      ordered_json rec;
      rec["qid"] = pair.query_id;
      rec["doc_id"] = pair.doc_id;
      out << rec.dump() << "\n";
    }
  };
  write_pairs("train_pairs.jsonl", split.train);
  write_pairs("test_pairs.jsonl", split.test);
  save_vocabulary(vocab, (dir / "vocab.tsv").string());

  ordered_json summary;
  summary["docs"] = docs.size();
  summary["queries"] = queries.size();
  summary["real_queries"] = n_real_queries;
  summary["pseudo_queries"] = queries.size() - n_real_queries;
  summary["train_pairs"] = split.train.size();
  summary["test_pairs"] = split.test.size();
  summary["vocab_size"] = vocab.size();
  summary["hash"] = ingest_hash(config);
  write_json_file(dir / "summary.json", summary);

  std::cout << "ingest: " << docs.size() << " docs, " << queries.size()
            << " queries (" << summary["pseudo_queries"] << " pseudo), "
            << split.train.size() << " train pairs, " << split.test.size()
            << " test pairs, vocab " << vocab.size() << "\n";
}

void cmd_build_docids(const CommandContext& ctx) {
  const PipelineConfig& config = ctx.config;
  DatasetBundle bundle = load_bundle(config.paths.workdir);
  {
    ordered_json summary = read_json_file(bundle_dir(config) / "summary.json");
    require_hash(summary.value("hash", ""), ingest_hash(config),
                 (bundle_dir(config) / "summary.json").string(), ctx.force);
  }

  const fs::path registry_path = fs::path(config.paths.workdir) / "registry.tsv";
  const std::string stage_hash = docids_hash(config);

  if (config.docid.kind == DocIdKind::learnable) {
    DocumentEmbedder embedder(bundle.docs, bundle.vocab,
                              config.docid.embedding_dim,
                              mix_seed(config.seed, 0xe3bed));
    Eigen::MatrixXd embeddings = embedder.embed_all(bundle.docs);
    RqTrainOptions options;
    options.max_iters = config.docid.kmeans_iters;
    options.tol = config.docid.kmeans_tol;
    options.rng_seed = mix_seed(config.seed, 0xc0de);
    RqTrainResult fit =
        train_codebooks(embeddings, config.docid.codebook_sizes, options);

    std::vector<LearnableDocId> docids;
    docids.reserve(bundle.docs.size());
    for (int i = 0; i < embeddings.rows(); ++i) {
      docids.push_back(quantize(embeddings.row(i).transpose(), fit.codebook).first);
    }
    DocIdRegistry registry = build_registry(bundle.docs, docids, bundle.vocab,
                                            config.docid.embedding_dim);
    save_registry(registry, registry_path.string(), stage_hash);
    save_codebook(fit.codebook,
                  (fs::path(config.paths.workdir) / "codebook.bin").string(),
                  stage_hash);
    std::cout << "build-docids: learnable registry with " << registry.size()
              << " docs, codebook l=" << fit.codebook.num_levels() << "\n";
  } else {
    std::vector<LinguisticDocId> docids;
    docids.reserve(bundle.docs.size());
    for (const Document& doc : bundle.docs) {
      docids.push_back(assign_linguistic_docid(doc, bundle.vocab,
                                               config.docid.max_tokens,
                                               config.docid.n_leading));
    }
    DocIdRegistry registry =
        build_registry(bundle.docs, docids, bundle.vocab, config.docid.max_tokens);
    save_registry(registry, registry_path.string(), stage_hash);
    std::cout << "build-docids: linguistic registry with " << registry.size()
              << " docs\n";
  }
}

void cmd_train(const CommandContext& ctx, bool resume) {
  const PipelineConfig& config = ctx.config;
  DatasetBundle bundle = load_bundle(config.paths.workdir);
  DocIdRegistry registry = load_registry_checked(config, ctx.force);

  std::unordered_map<std::string, const Query*> by_qid;
  for (const Query& q : bundle.queries) by_qid[q.query_id] = &q;

  std::vector<TrainExample> examples;
  examples.reserve(bundle.train_pairs.size() +
                   (config.train_on_documents ? bundle.docs.size() : 0));
  for (const RelevancePair& pair : bundle.train_pairs) {
    auto it = by_qid.find(pair.query_id);
    if (it == by_qid.end()) {
      fail("train: pair references unknown query \"" + pair.query_id + "\"");
    }
    TokenSeq condition = tokenize(it->second->text, bundle.vocab);
    if (static_cast<int>(condition.size()) > config.denoiser.max_query_len) {
      condition.resize(config.denoiser.max_query_len);
    }
    examples.push_back({std::move(condition), registry.padded_docid_for(pair.doc_id)});
  }
  if (config.train_on_documents) {
    for (const Document& doc : bundle.docs) {
      TokenSeq condition = tokenize(doc.body, bundle.vocab);
      if (static_cast<int>(condition.size()) > config.denoiser.max_query_len) {
        condition.resize(config.denoiser.max_query_len);
      }
      examples.push_back({std::move(condition), registry.padded_docid_for(doc.doc_id)});
    }
  }

  DenoiserConfig model_config =
      denoiser_config(config, bundle.vocab.size(), registry.docid_len());
  TrainConfig train_config = config.train;
  train_config.rng_seed = mix_seed(config.seed, 0x7a21);

  const fs::path ckpt = fs::path(config.paths.workdir) / "checkpoint.bin";
  std::optional<Trainer> trainer;
  if (resume) {
    if (!fs::exists(ckpt)) fail("train --resume: missing " + ckpt.string());
    trainer.emplace(Trainer::load_checkpoint(ckpt.string(), model_config));
    trainer->config() = train_config;
    std::cout << "train: resuming from epoch " << trainer->epochs_done() << "\n";
  } else {
    trainer.emplace(init_parameters<float>(model_config, mix_seed(config.seed, 0x171a)),
                    train_config);
  }

  trainer->train(examples, [](int epoch, double loss) {
    std::cout << "epoch " << epoch << " loss " << loss << "\n";
  });
  trainer->save_checkpoint(ckpt.string(), train_hash(config));

  fs::create_directories(reports_dir(config));
  ordered_json trace;
  trace["epochs"] = trainer->loss_trace().size();
  trace["loss"] = trainer->loss_trace();
  write_json_file(reports_dir(config) / "train_loss.json", trace);
  std::cout << "train: " << examples.size() << " examples, final loss "
            << (trainer->loss_trace().empty() ? 0.0 : trainer->loss_trace().back())
            << "\n";
}

void cmd_eval(const CommandContext& ctx) {
  const PipelineConfig& config = ctx.config;
  EvalInputs inputs = load_eval_inputs(config, ctx.force);

  EvalOptions options;
  options.sampler = resolved_sampler(config, inputs.registry.docid_len());
  options.mode = beam_mode_from_string(config.eval.mode);
  options.k = config.eval.k;
  options.n_variants = config.eval.n_variants;

  EvalOutcome outcome = evaluate(inputs.trainer.params(), inputs.registry,
                                 inputs.bundle.vocab, inputs.queries,
                                 inputs.qrels, options);

  fs::create_directories(reports_dir(config));
  ordered_json report;
  report["config"] =
      eval_config_snapshot(config, options.sampler, inputs.queries.size());
  report.update(metrics_json(outcome.metrics));
  write_json_file(reports_dir(config) / "eval.json", report);
  std::cout << "eval: R@1 " << outcome.metrics.recall1 << ", R@5 "
            << outcome.metrics.recall5 << ", R@10 " << outcome.metrics.recall10
            << ", MRR@10 " << outcome.metrics.mrr10 << " over "
            << inputs.queries.size() << " queries\n";
}

void cmd_sweep(const CommandContext& ctx, const std::string& strategy_arg) {
  const PipelineConfig& config = ctx.config;
  EvalInputs inputs = load_eval_inputs(config, ctx.force);
  const SamplerConfig base = resolved_sampler(config, inputs.registry.docid_len());

  fs::create_directories(reports_dir(config));
  if (strategy_arg == "all") {
    std::vector<AblationRow> rows =
        strategy_ablation(inputs.trainer.params(), inputs.registry,
                          inputs.bundle.vocab, inputs.queries, inputs.qrels, base);
    ordered_json report = ordered_json::array();
    for (const AblationRow& row : rows) {
      ordered_json entry;
      entry["strategy"] = strategy_to_string(row.strategy);
      entry.update(metrics_json(row.metrics));
      report.push_back(entry);
    }
    write_json_file(reports_dir(config) / "ablation.json", report);
    std::cout << "sweep: strategy ablation with " << rows.size() << " rows\n";
    return;
  }

  DenoisingStrategy strategy = strategy_arg.empty()
                                   ? base.strategy
                                   : strategy_from_string(strategy_arg);
  std::vector<SweepPoint> points = tradeoff_sweep(
      inputs.trainer.params(), inputs.registry, inputs.bundle.vocab,
      inputs.queries, inputs.qrels, config.eval.steps_list, strategy,
      base.rng_seed);
  ordered_json report = ordered_json::array();
  for (const SweepPoint& point : points) {
    ordered_json entry;
    entry["steps"] = point.steps;
    entry.update(metrics_json(point.metrics));
    report.push_back(entry);
  }
  write_json_file(reports_dir(config) / "sweep.json", report);
  std::cout << "sweep: " << points.size() << " step budgets with strategy "
            << strategy_to_string(strategy) << "\n";
}

}  // namespace mdr
