#include "mdr/docid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mdr {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// Squared distances from every point (rows) to every center (rows).
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& points,
                                  const Eigen::MatrixXd& centers) {
  Eigen::VectorXd pn = points.rowwise().squaredNorm();
  Eigen::VectorXd cn = centers.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * points * centers.transpose();
  d2.colwise() += pn;
  d2.rowwise() += cn.transpose();
  return d2.cwiseMax(0.0);
}

// Row-wise argmin with ties broken toward the smallest index.
int argmin_row(const Eigen::MatrixXd& d2, int row) {
  int best = 0;
  double best_val = d2(row, 0);
  for (int k = 1; k < d2.cols(); ++k) {
    if (d2(row, k) < best_val) {
      best_val = d2(row, k);
      best = k;
    }
  }
  return best;
}

Eigen::MatrixXd kmeans_pp_init(const Eigen::MatrixXd& points, int k,
                               std::mt19937_64& rng) {
  const int n = static_cast<int>(points.rows());
  Eigen::MatrixXd centers(k, points.cols());
  std::uniform_int_distribution<int> first(0, n - 1);
  centers.row(0) = points.row(first(rng));
  Eigen::VectorXd d2 =
      (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    double total = d2.sum();
    int chosen = -1;
    if (total > 0.0) {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      double u = unit(rng) * total;
      for (int i = 0; i < n; ++i) {
        u -= d2(i);
        if (u <= 0.0) {
          chosen = i;
          break;
        }
      }
      if (chosen < 0) chosen = n - 1;
    } else {
      // all remaining distances zero (duplicate points): deterministic pick
      chosen = c % n;
    }
    centers.row(c) = points.row(chosen);
    d2 = d2.cwiseMin(
        (points.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

struct LloydResult {
  Eigen::MatrixXd centers;
  std::vector<double> objective_trace;
};

LloydResult lloyd(const Eigen::MatrixXd& points, int k, int max_iters,
                  double tol, std::mt19937_64& rng) {
  const int n = static_cast<int>(points.rows());
  LloydResult result;
  result.centers = kmeans_pp_init(points, k, rng);
  double prev = -1.0;
  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::MatrixXd d2 = squared_distances(points, result.centers);
    std::vector<int> assign(n);
    double objective = 0.0;
    Eigen::VectorXd point_d2(n);
    for (int i = 0; i < n; ++i) {
      assign[i] = argmin_row(d2, i);
      point_d2(i) = d2(i, assign[i]);
      objective += point_d2(i);
    }
    result.objective_trace.push_back(objective);
    if (prev >= 0.0 && prev - objective < tol) break;
    prev = objective;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        result.centers.row(c) = sums.row(c) / counts[c];
      } else {
        // re-seed an empty cluster to the farthest point
        int far = 0;
        point_d2.maxCoeff(&far);
        result.centers.row(c) = points.row(far);
        point_d2(far) = 0.0;
      }
    }
  }
  return result;
}

std::string ids_to_text(const TokenSeq& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(tokens[i]);
  }
  return out;
}

void write_bytes(std::ofstream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* data, std::size_t n,
                const std::string& path) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    fail("load_codebook: " + path + " is truncated");
  }
}

}  // namespace

DocumentEmbedder::DocumentEmbedder(const std::vector<Document>& docs,
                                   const Vocabulary& vocab, int dim,
                                   std::uint64_t rng_seed)
    : vocab_(&vocab) {
  if (dim < 1) fail("DocumentEmbedder: dimension must be positive");
  const int n_words = vocab.num_words();
  const int n_docs = static_cast<int>(docs.size());

  Eigen::VectorXd df = Eigen::VectorXd::Zero(n_words);
  std::vector<char> seen(n_words);
  for (const Document& doc : docs) {
    std::fill(seen.begin(), seen.end(), 0);
    auto mark = [&](const std::string& text) {
      for (TokenId id : tokenize(text, vocab)) {
        if (vocab.is_word(id)) seen[id - vocab.word_base()] = 1;
      }
    };
    if (doc.title) mark(*doc.title);
    mark(doc.body);
    for (int w = 0; w < n_words; ++w) df(w) += seen[w];
  }
  idf_ = ((1.0 + n_docs) / (1.0 + df.array())).log() + 1.0;

  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(dim)));
  projection_.resize(dim, n_words);
  for (int w = 0; w < n_words; ++w) {
    for (int r = 0; r < dim; ++r) projection_(r, w) = gauss(rng);
  }
}

Embedding DocumentEmbedder::embed(const Document& doc) const {
  std::unordered_map<int, double> tf;
  auto count = [&](const std::string& text) {
    for (TokenId id : tokenize(text, *vocab_)) {
      if (vocab_->is_word(id)) tf[id - vocab_->word_base()] += 1.0;
    }
  };
  if (doc.title) count(*doc.title);
  count(doc.body);

  Embedding e = Embedding::Zero(dim());
  for (const auto& [w, c] : tf) e += c * idf_(w) * projection_.col(w);
  double norm = e.norm();
  if (norm > 1e-12) e /= norm;
  return e;
}

Eigen::MatrixXd DocumentEmbedder::embed_all(const std::vector<Document>& docs) const {
  Eigen::MatrixXd out(docs.size(), dim());
  for (std::size_t i = 0; i < docs.size(); ++i) out.row(i) = embed(docs[i]);
  return out;
}

std::vector<int> Codebook::level_sizes() const {
  std::vector<int> sizes;
  sizes.reserve(levels.size());
  for (const auto& level : levels) sizes.push_back(static_cast<int>(level.rows()));
  return sizes;
}

RqTrainResult train_codebooks(const Eigen::MatrixXd& embeddings,
                              const std::vector<int>& level_sizes,
                              const RqTrainOptions& options) {
  if (level_sizes.empty()) fail("train_codebooks: need at least one level");
  const int n = static_cast<int>(embeddings.rows());
  for (std::size_t i = 0; i < level_sizes.size(); ++i) {
    if (level_sizes[i] < 2) fail("train_codebooks: level sizes must be >= 2");
    if (n < level_sizes[i]) {
      fail("train_codebooks: level " + std::to_string(i) + " needs at least " +
           std::to_string(level_sizes[i]) + " points, have " + std::to_string(n));
    }
  }

  std::mt19937_64 rng(options.rng_seed);
  RqTrainResult result;
  Eigen::MatrixXd residuals = embeddings;
  for (int k : level_sizes) {
    LloydResult fit = lloyd(residuals, k, options.max_iters, options.tol, rng);
    // residuals for the next level come from the fitted centers
    Eigen::MatrixXd d2 = squared_distances(residuals, fit.centers);
    for (int i = 0; i < n; ++i) {
      residuals.row(i) -= fit.centers.row(argmin_row(d2, i));
    }
    result.codebook.levels.push_back(std::move(fit.centers));
    result.objective_trace.push_back(std::move(fit.objective_trace));
  }
  return result;
}

std::pair<LearnableDocId, double> quantize(const Embedding& embedding,
                                           const Codebook& codebook) {
  if (codebook.num_levels() == 0) fail("quantize: empty codebook");
  if (embedding.size() != codebook.dim()) {
    fail("quantize: embedding dimension " + std::to_string(embedding.size()) +
         " does not match codebook dimension " + std::to_string(codebook.dim()));
  }
  LearnableDocId docid;
  Eigen::VectorXd residual = embedding;
  for (const Eigen::MatrixXd& level : codebook.levels) {
    int best = 0;
    double best_val = (residual.transpose() - level.row(0)).squaredNorm();
    for (int k = 1; k < level.rows(); ++k) {
      double v = (residual.transpose() - level.row(k)).squaredNorm();
      if (v < best_val) {
        best_val = v;
        best = k;
      }
    }
    docid.codes.push_back(best);
    residual -= level.row(best).transpose();
  }
  return {docid, residual.norm()};
}

Embedding reconstruct(const LearnableDocId& docid, const Codebook& codebook) {
  if (static_cast<int>(docid.codes.size()) != codebook.num_levels()) {
    fail("reconstruct: code count does not match codebook levels");
  }
  Embedding out = Embedding::Zero(codebook.dim());
  for (int i = 0; i < codebook.num_levels(); ++i) {
    int code = docid.codes[i];
    if (code < 0 || code >= codebook.levels[i].rows()) {
      fail("reconstruct: code " + std::to_string(code) + " out of range at level " +
           std::to_string(i));
    }
    out += codebook.levels[i].row(code).transpose();
  }
  return out;
}

double rq_objective(const Eigen::MatrixXd& embeddings, const Codebook& codebook) {
  double total = 0.0;
  for (int i = 0; i < embeddings.rows(); ++i) {
    Eigen::VectorXd residual = embeddings.row(i).transpose();
    for (const Eigen::MatrixXd& level : codebook.levels) {
      int best = 0;
      double best_val = (residual.transpose() - level.row(0)).squaredNorm();
      for (int k = 1; k < level.rows(); ++k) {
        double v = (residual.transpose() - level.row(k)).squaredNorm();
        if (v < best_val) {
          best_val = v;
          best = k;
        }
      }
      total += best_val;
      residual -= level.row(best).transpose();
    }
  }
  return total;
}

LinguisticDocId assign_linguistic_docid(const Document& doc, const Vocabulary& vocab,
                                        int max_tokens, int n_leading) {
  if (doc.title) {
    TokenSeq ids = tokenize(*doc.title, vocab);
    if (!ids.empty()) {
      if (static_cast<int>(ids.size()) > max_tokens) ids.resize(max_tokens);
      return {std::move(ids), LinguisticDocId::Source::title};
    }
  }
  TokenSeq ids = tokenize(doc.body, vocab);
  if (static_cast<int>(ids.size()) > n_leading) ids.resize(n_leading);
  if (ids.empty()) fail("assign_linguistic_docid: document \"" + doc.doc_id +
                        "\" has no tokens");
  return {std::move(ids), LinguisticDocId::Source::leading};
}

DocIdRegistry::DocIdRegistry(Kind kind, int docid_len,
                             std::vector<int> codebook_sizes, int embedding_dim)
    : kind_(kind),
      docid_len_(docid_len),
      codebook_sizes_(std::move(codebook_sizes)),
      embedding_dim_(embedding_dim) {}

std::optional<std::string> DocIdRegistry::lookup(const TokenSeq& tokens) const {
  TokenSeq key = tokens;
  while (!key.empty() && key.back() == Vocabulary::kPad) key.pop_back();
  if (key.empty()) return std::nullopt;
  for (TokenId id : key) {
    if (id == Vocabulary::kMask || id == Vocabulary::kPad) return std::nullopt;
  }
  auto it = by_sequence_.find(key);
  if (it == by_sequence_.end()) return std::nullopt;
  return it->second;
}

const TokenSeq& DocIdRegistry::docid_for(const std::string& doc_id) const {
  auto it = by_doc_.find(doc_id);
  if (it == by_doc_.end()) fail("DocIdRegistry: unknown doc \"" + doc_id + "\"");
  return entries_[it->second].second;
}

TokenSeq DocIdRegistry::padded_docid_for(const std::string& doc_id) const {
  TokenSeq out = docid_for(doc_id);
  out.resize(docid_len_, Vocabulary::kPad);
  return out;
}

void DocIdRegistry::insert(const std::string& doc_id, TokenSeq tokens) {
  if (tokens.empty() || static_cast<int>(tokens.size()) > docid_len_) {
    fail("DocIdRegistry: DocID for \"" + doc_id + "\" has invalid length");
  }
  for (TokenId id : tokens) {
    if (id == Vocabulary::kMask || id == Vocabulary::kPad) {
      fail("DocIdRegistry: DocID for \"" + doc_id + "\" contains a reserved token");
    }
  }
  if (by_doc_.count(doc_id)) {
    fail("DocIdRegistry: duplicate doc \"" + doc_id + "\"");
  }
  auto [it, inserted] = by_sequence_.emplace(tokens, doc_id);
  if (!inserted) {
    fail("DocIdRegistry: DocID collision between \"" + it->second + "\" and \"" +
         doc_id + "\"");
  }
  by_doc_[doc_id] = static_cast<int>(entries_.size());
  entries_.emplace_back(doc_id, std::move(tokens));
}

bool DocIdRegistry::contains_sequence(const TokenSeq& tokens) const {
  return by_sequence_.count(tokens) > 0;
}

DocIdRegistry build_registry(const std::vector<Document>& docs,
                             const std::vector<LearnableDocId>& docids,
                             const Vocabulary& vocab, int embedding_dim) {
  if (docs.size() != docids.size()) {
    fail("build_registry: need exactly one DocID per document");
  }
  DocIdRegistry registry(DocIdRegistry::Kind::learnable, vocab.num_levels(),
                         vocab.codebook_sizes(), embedding_dim);
  std::map<TokenSeq, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (static_cast<int>(docids[i].codes.size()) != vocab.num_levels()) {
      fail("build_registry: DocID for \"" + docs[i].doc_id +
           "\" has wrong number of levels");
    }
    TokenSeq tokens;
    for (int level = 0; level < vocab.num_levels(); ++level) {
      tokens.push_back(vocab.code_id(level, docids[i].codes[level]));
    }
    groups[tokens].push_back(docs[i].doc_id);
  }
  std::string colliding;
  for (const auto& [tokens, members] : groups) {
    if (members.size() > 1) {
      for (const std::string& doc : members) {
        if (!colliding.empty()) colliding += ", ";
        colliding += doc;
      }
    }
  }
  if (!colliding.empty()) {
    fail("build_registry: learnable DocID collision between docs [" + colliding +
         "]; regenerate codebooks or raise the number of levels");
  }
  for (std::size_t i = 0; i < docs.size(); ++i) {
    TokenSeq tokens;
    for (int level = 0; level < vocab.num_levels(); ++level) {
      tokens.push_back(vocab.code_id(level, docids[i].codes[level]));
    }
    registry.insert(docs[i].doc_id, std::move(tokens));
  }
  return registry;
}

DocIdRegistry build_registry(const std::vector<Document>& docs,
                             const std::vector<LinguisticDocId>& docids,
                             const Vocabulary& vocab, int max_tokens) {
  if (docs.size() != docids.size()) {
    fail("build_registry: need exactly one DocID per document");
  }
  DocIdRegistry registry(DocIdRegistry::Kind::linguistic, max_tokens, {}, 0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    TokenSeq candidate = docids[i].tokens;
    if (static_cast<int>(candidate.size()) > max_tokens) candidate.resize(max_tokens);
    if (!registry.contains_sequence(candidate)) {
      registry.insert(docs[i].doc_id, std::move(candidate));
      continue;
    }
    // ordinal disambiguation: "title" -> "title 2", "title 3", ...
    bool placed = false;
    for (int ordinal = 2; ordinal <= 99; ++ordinal) {
      auto suffix = vocab.find_word(std::to_string(ordinal));
      if (!suffix) {
        fail("build_registry: ordinal token \"" + std::to_string(ordinal) +
             "\" missing from vocabulary");
      }
      TokenSeq attempt = candidate;
      if (static_cast<int>(attempt.size()) >= max_tokens) {
        attempt.resize(max_tokens - 1);
      }
      if (attempt.empty()) break;
      attempt.push_back(*suffix);
      if (!registry.contains_sequence(attempt)) {
        registry.insert(docs[i].doc_id, std::move(attempt));
        placed = true;
        break;
      }
    }
    if (!placed) {
      fail("build_registry: disambiguation budget exhausted for doc \"" +
           docs[i].doc_id + "\"");
    }
  }
  return registry;
}

std::optional<std::string> lookup(const DocIdRegistry& registry,
                                  const TokenSeq& tokens) {
  return registry.lookup(tokens);
}

void save_registry(const DocIdRegistry& registry, const std::string& path,
                   const std::string& meta) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("save_registry: cannot open " + path);
  out << "#mdr-registry\tv1\tkind="
      << (registry.kind() == DocIdRegistry::Kind::learnable ? "learnable"
                                                            : "linguistic")
      << "\tl=" << registry.docid_len();
  if (registry.kind() == DocIdRegistry::Kind::learnable) {
    out << "\tK=";
    const auto& sizes = registry.codebook_sizes();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (i) out << ',';
      out << sizes[i];
    }
    out << "\td=" << registry.embedding_dim();
  }
  out << "\tn=" << registry.size();
  if (!meta.empty()) out << "\thash=" << meta;
  out << "\n";
  for (const auto& [doc_id, tokens] : registry.entries()) {
    out << doc_id << '\t' << ids_to_text(tokens) << "\n";
  }
  if (!out) fail("save_registry: write failed for " + path);
}

DocIdRegistry load_registry(const std::string& path, std::string* meta) {
  std::ifstream in(path);
  if (!in) fail("load_registry: cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("#mdr-registry\tv1\t", 0) != 0) {
    fail("load_registry: bad header in " + path);
  }
  std::string kind_str;
  int docid_len = -1;
  long expected = -1;
  int dim = 0;
  std::vector<int> sizes;
  std::string hash;
  {
    std::istringstream hs(header);
    std::string field;
    while (std::getline(hs, field, '\t')) {
      if (field.rfind("kind=", 0) == 0) kind_str = field.substr(5);
      else if (field.rfind("l=", 0) == 0) docid_len = std::stoi(field.substr(2));
      else if (field.rfind("d=", 0) == 0) dim = std::stoi(field.substr(2));
      else if (field.rfind("n=", 0) == 0) expected = std::stol(field.substr(2));
      else if (field.rfind("hash=", 0) == 0) hash = field.substr(5);
      else if (field.rfind("K=", 0) == 0) {
        std::istringstream ls(field.substr(2));
        std::string item;
        while (std::getline(ls, item, ',')) {
          if (!item.empty()) sizes.push_back(std::stoi(item));
        }
      }
    }
  }
  if (kind_str.empty() || docid_len < 1 || expected < 0) {
    fail("load_registry: incomplete header in " + path);
  }
  DocIdRegistry registry(kind_str == "learnable" ? DocIdRegistry::Kind::learnable
                                                 : DocIdRegistry::Kind::linguistic,
                         docid_len, std::move(sizes), dim);
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      fail("load_registry: " + path + ":" + std::to_string(line_no) +
           ": malformed record");
    }
    TokenSeq tokens;
    std::istringstream ts(line.substr(tab + 1));
    std::string item;
    while (ts >> item) tokens.push_back(std::stoi(item));
    registry.insert(line.substr(0, tab), std::move(tokens));
  }
  if (static_cast<long>(registry.size()) != expected) {
    fail("load_registry: " + path + " is truncated (expected " +
         std::to_string(expected) + " records, found " +
         std::to_string(registry.size()) + ")");
  }
  if (meta) *meta = hash;
  return registry;
}

void save_codebook(const Codebook& codebook, const std::string& path,
                   const std::string& meta) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail("save_codebook: cannot open " + path);
  const char magic[8] = {'M', 'D', 'R', 'C', 'B', 'K', '1', '\0'};
  write_bytes(out, magic, sizeof(magic));
  std::int32_t l = codebook.num_levels();
  std::int32_t d = codebook.dim();
  write_bytes(out, &l, sizeof(l));
  write_bytes(out, &d, sizeof(d));
  for (const auto& level : codebook.levels) {
    std::int32_t k = static_cast<std::int32_t>(level.rows());
    write_bytes(out, &k, sizeof(k));
  }
  std::int32_t meta_len = static_cast<std::int32_t>(meta.size());
  write_bytes(out, &meta_len, sizeof(meta_len));
  write_bytes(out, meta.data(), meta.size());
  for (const auto& level : codebook.levels) {
    for (int r = 0; r < level.rows(); ++r) {
      for (int c = 0; c < level.cols(); ++c) {
        double v = level(r, c);
        write_bytes(out, &v, sizeof(v));
      }
    }
  }
  if (!out) fail("save_codebook: write failed for " + path);
}

Codebook load_codebook(const std::string& path, std::string* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_codebook: cannot open " + path);
  char magic[8];
  read_bytes(in, magic, sizeof(magic), path);
  if (std::memcmp(magic, "MDRCBK1\0", 8) != 0) {
    fail("load_codebook: bad magic in " + path);
  }
  std::int32_t l = 0, d = 0;
  read_bytes(in, &l, sizeof(l), path);
  read_bytes(in, &d, sizeof(d), path);
  if (l < 1 || l > 64 || d < 1) fail("load_codebook: bad header in " + path);
  std::vector<std::int32_t> sizes(l);
  for (auto& k : sizes) read_bytes(in, &k, sizeof(k), path);
  std::int32_t meta_len = 0;
  read_bytes(in, &meta_len, sizeof(meta_len), path);
  std::string hash(meta_len, '\0');
  if (meta_len > 0) read_bytes(in, hash.data(), meta_len, path);
  Codebook cb;
  for (std::int32_t k : sizes) {
    if (k < 2) fail("load_codebook: bad level size in " + path);
    Eigen::MatrixXd level(k, d);
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < d; ++c) {
        double v;
        read_bytes(in, &v, sizeof(v), path);
        level(r, c) = v;
      }
    }
    cb.levels.push_back(std::move(level));
  }
  if (meta) *meta = hash;
  return cb;
}

}  // namespace mdr
