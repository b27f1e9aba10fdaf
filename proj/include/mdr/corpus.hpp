#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mdr {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

struct Document {
  std::string doc_id;
  std::optional<std::string> title;
  std::string body;
};

struct Query {
  std::string query_id;
  std::string text;
};

struct RelevancePair {
  std::string query_id;
  std::string doc_id;
};

// Token-id layout: [4 specials | per-level code ranges | word tokens].
// Word ids are assigned in sorted order so construction is deterministic.
// Linguistic-mode vocabularies (no code ranges) additionally reserve the
// ordinal words "2".."99" used to disambiguate colliding DocIDs.
class Vocabulary {
 public:
  static constexpr TokenId kMask = 0;
  static constexpr TokenId kPad = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kNumSpecials = 4;

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> sorted_words, std::vector<int> codebook_sizes);

  int size() const { return word_base() + static_cast<int>(words_.size()); }
  int num_words() const { return static_cast<int>(words_.size()); }
  int num_levels() const { return static_cast<int>(codebook_sizes_.size()); }
  const std::vector<int>& codebook_sizes() const { return codebook_sizes_; }

  // Word lookup; absent words map to kUnk.
  TokenId word_id(std::string_view token) const;
  std::optional<TokenId> find_word(std::string_view token) const;
  const std::vector<std::string>& words() const { return words_; }

  TokenId word_base() const { return kNumSpecials + total_codes_; }
  bool is_word(TokenId id) const { return id >= word_base() && id < size(); }

  TokenId code_id(int level, int code) const;
  bool is_code(TokenId id) const {
    return id >= kNumSpecials && id < kNumSpecials + total_codes_;
  }
  std::pair<int, int> code_of(TokenId id) const;  // (level, code)

  std::string token_text(TokenId id) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> word_index_;
  std::vector<int> codebook_sizes_;
  std::vector<TokenId> code_offsets_;  // absolute id of code 0 per level
  TokenId total_codes_ = 0;
};

// Lowercases and splits on everything that is not [a-z0-9].
std::vector<std::string> split_words(std::string_view text);

// JSON Lines loaders; errors report the offending line number.
std::vector<Document> load_corpus(const std::string& path);
std::vector<Query> load_queries(const std::string& path);
std::vector<RelevancePair> load_pairs(const std::string& path);

Vocabulary build_vocabulary(const std::vector<Document>& docs,
                            const std::vector<Query>& queries,
                            const std::vector<int>& codebook_sizes);

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab);
std::string detokenize(const TokenSeq& tokens, const Vocabulary& vocab);

// Contiguous body spans of 4..12 tokens, start positions weighted toward the
// beginning of the document. Bodies shorter than 4 tokens yield the single
// whole-body query.
std::vector<Query> generate_pseudo_queries(const Document& doc, int n,
                                           std::uint64_t rng_seed);

struct DatasetSplit {
  std::vector<RelevancePair> train;
  std::vector<RelevancePair> test;
};

// Disjoint split; every document keeps at least one training pair.
DatasetSplit split_dataset(const std::vector<RelevancePair>& pairs,
                           double holdout_fraction, std::uint64_t rng_seed);

void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace mdr
