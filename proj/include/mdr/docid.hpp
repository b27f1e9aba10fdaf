#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mdr/corpus.hpp"

namespace mdr {

using Embedding = Eigen::VectorXd;

// TF-IDF over word tokens, projected to a fixed dimension by a seed-fixed
// random matrix and L2-normalized. Deterministic; no external model.
class DocumentEmbedder {
 public:
  DocumentEmbedder(const std::vector<Document>& docs, const Vocabulary& vocab,
                   int dim, std::uint64_t rng_seed);

  Embedding embed(const Document& doc) const;
  Eigen::MatrixXd embed_all(const std::vector<Document>& docs) const;  // rows
  int dim() const { return static_cast<int>(projection_.rows()); }

 private:
  Eigen::MatrixXd projection_;  // dim x num_words
  Eigen::VectorXd idf_;
  const Vocabulary* vocab_;
};

struct Codebook {
  std::vector<Eigen::MatrixXd> levels;  // level i: K_i x d

  int num_levels() const { return static_cast<int>(levels.size()); }
  int dim() const { return levels.empty() ? 0 : static_cast<int>(levels[0].cols()); }
  std::vector<int> level_sizes() const;
};

struct LearnableDocId {
  std::vector<int> codes;  // codes[i] in [0, K_i)
};

struct LinguisticDocId {
  enum class Source { title, leading, disambiguated };
  TokenSeq tokens;
  Source source = Source::title;
};

struct RqTrainOptions {
  int max_iters = 50;
  double tol = 1e-6;
  std::uint64_t rng_seed = 0;
};

struct RqTrainResult {
  Codebook codebook;
  // Per level, the within-level objective after each Lloyd assignment;
  // non-increasing by construction.
  std::vector<std::vector<double>> objective_trace;
};

// Level-by-level Lloyd's k-means with k-means++ seeding on the residuals of
// the previous levels. Empty clusters are re-seeded to the farthest point.
RqTrainResult train_codebooks(const Eigen::MatrixXd& embeddings,
                              const std::vector<int>& level_sizes,
                              const RqTrainOptions& options = {});

// Greedy per-level nearest code; ties break toward the smallest code index.
// Returns the codes and the norm of the final residual.
std::pair<LearnableDocId, double> quantize(const Embedding& embedding,
                                           const Codebook& codebook);

Embedding reconstruct(const LearnableDocId& docid, const Codebook& codebook);

// Sum over documents and levels of the squared residual quantization error.
double rq_objective(const Eigen::MatrixXd& embeddings, const Codebook& codebook);

LinguisticDocId assign_linguistic_docid(const Document& doc, const Vocabulary& vocab,
                                        int max_tokens = 12, int n_leading = 12);

// Strict bijection between DocID token sequences and documents.
class DocIdRegistry {
 public:
  enum class Kind { learnable, linguistic };

  DocIdRegistry() = default;
  DocIdRegistry(Kind kind, int docid_len, std::vector<int> codebook_sizes,
                int embedding_dim);

  Kind kind() const { return kind_; }
  int docid_len() const { return docid_len_; }
  const std::vector<int>& codebook_sizes() const { return codebook_sizes_; }
  int embedding_dim() const { return embedding_dim_; }
  std::size_t size() const { return entries_.size(); }

  // Exact-sequence match; trailing pad tokens are ignored, sequences
  // containing mask or interior pad never match.
  std::optional<std::string> lookup(const TokenSeq& tokens) const;

  const TokenSeq& docid_for(const std::string& doc_id) const;
  TokenSeq padded_docid_for(const std::string& doc_id) const;
  const std::vector<std::pair<std::string, TokenSeq>>& entries() const {
    return entries_;
  }

  void insert(const std::string& doc_id, TokenSeq tokens);
  bool contains_sequence(const TokenSeq& tokens) const;

 private:
  Kind kind_ = Kind::linguistic;
  int docid_len_ = 0;
  std::vector<int> codebook_sizes_;
  int embedding_dim_ = 0;
  std::vector<std::pair<std::string, TokenSeq>> entries_;
  std::map<TokenSeq, std::string> by_sequence_;
  std::unordered_map<std::string, int> by_doc_;
};

// Learnable DocIDs: collisions are a hard error naming every colliding doc.
DocIdRegistry build_registry(const std::vector<Document>& docs,
                             const std::vector<LearnableDocId>& docids,
                             const Vocabulary& vocab, int embedding_dim);

// Linguistic DocIDs: collisions get an ordinal suffix word ("2", "3", ...),
// truncating first when the token budget is full.
DocIdRegistry build_registry(const std::vector<Document>& docs,
                             const std::vector<LinguisticDocId>& docids,
                             const Vocabulary& vocab, int max_tokens = 12);

std::optional<std::string> lookup(const DocIdRegistry& registry,
                                  const TokenSeq& tokens);

void save_registry(const DocIdRegistry& registry, const std::string& path,
                   const std::string& meta = "");
DocIdRegistry load_registry(const std::string& path, std::string* meta = nullptr);

void save_codebook(const Codebook& codebook, const std::string& path,
                   const std::string& meta = "");
Codebook load_codebook(const std::string& path, std::string* meta = nullptr);

}  // namespace mdr
