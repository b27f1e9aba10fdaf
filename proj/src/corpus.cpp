#include "mdr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mdr/common.hpp"

namespace mdr {

namespace {

constexpr int kMinSpan = 4;
constexpr int kMaxSpan = 12;
constexpr int kMaxOrdinal = 99;  // disambiguation reserve, linguistic mode

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string join_words(const std::vector<std::string>& words, int begin, int end) {
  std::string out;
  for (int i = begin; i < end; ++i) {
    if (i > begin) out += ' ';
    out += words[i];
  }
  return out;
}

nlohmann::json parse_record(const std::string& path, int line_no,
                            const std::string& line) {
  nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) {
    fail(path + ":" + std::to_string(line_no) + ": malformed record");
  }
  return rec;
}

std::string require_string(const nlohmann::json& rec, const char* field,
                           const std::string& path, int line_no) {
  auto it = rec.find(field);
  if (it == rec.end() || !it->is_string()) {
    fail(path + ":" + std::to_string(line_no) + ": missing string field \"" +
         field + "\"");
  }
  return it->get<std::string>();
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> sorted_words,
                       std::vector<int> codebook_sizes)
    : words_(std::move(sorted_words)), codebook_sizes_(std::move(codebook_sizes)) {
  code_offsets_.reserve(codebook_sizes_.size());
  TokenId next = kNumSpecials;
  for (int k : codebook_sizes_) {
    if (k < 2) fail("Vocabulary: codebook sizes must be >= 2");
    code_offsets_.push_back(next);
    next += k;
  }
  total_codes_ = next - kNumSpecials;
  word_index_.reserve(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    auto [it, inserted] =
        word_index_.emplace(words_[i], word_base() + static_cast<TokenId>(i));
    if (!inserted) fail("Vocabulary: duplicate word \"" + words_[i] + "\"");
  }
}

TokenId Vocabulary::word_id(std::string_view token) const {
  auto it = word_index_.find(std::string(token));
  return it == word_index_.end() ? kUnk : it->second;
}

std::optional<TokenId> Vocabulary::find_word(std::string_view token) const {
  auto it = word_index_.find(std::string(token));
  if (it == word_index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::code_id(int level, int code) const {
  if (level < 0 || level >= num_levels() || code < 0 ||
      code >= codebook_sizes_[level]) {
    fail("Vocabulary: code (" + std::to_string(level) + "," +
         std::to_string(code) + ") out of range");
  }
  return code_offsets_[level] + code;
}

std::pair<int, int> Vocabulary::code_of(TokenId id) const {
  for (int level = num_levels() - 1; level >= 0; --level) {
    if (id >= code_offsets_[level]) return {level, id - code_offsets_[level]};
  }
  fail("Vocabulary: id " + std::to_string(id) + " is not a code token");
}

std::string Vocabulary::token_text(TokenId id) const {
  switch (id) {
    case kMask: return "<mask>";
    case kPad: return "<pad>";
    case kSep: return "<sep>";
    case kUnk: return "<unk>";
    default: break;
  }
  if (is_code(id)) {
    auto [level, code] = code_of(id);
    return "<c" + std::to_string(level) + ":" + std::to_string(code) + ">";
  }
  if (is_word(id)) return words_[id - word_base()];
  fail("Vocabulary: id " + std::to_string(id) + " out of range");
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current += static_cast<char>(std::tolower(c));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<Document> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_corpus: cannot open " + path);
  std::vector<Document> docs;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec = parse_record(path, line_no, line);
    Document doc;
    doc.doc_id = require_string(rec, "id", path, line_no);
    doc.body = require_string(rec, "body", path, line_no);
    if (auto it = rec.find("title"); it != rec.end() && it->is_string()) {
      doc.title = it->get<std::string>();
    }
    if (doc.body.empty() || split_words(doc.body).empty()) {
      fail(path + ":" + std::to_string(line_no) + ": document \"" + doc.doc_id +
           "\" has an empty body");
    }
    if (!seen.insert(doc.doc_id).second) {
      fail(path + ":" + std::to_string(line_no) + ": duplicate doc id \"" +
           doc.doc_id + "\"");
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<Query> load_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_queries: cannot open " + path);
  std::vector<Query> queries;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec = parse_record(path, line_no, line);
    Query q;
    q.query_id = require_string(rec, "qid", path, line_no);
    q.text = require_string(rec, "text", path, line_no);
    if (split_words(q.text).empty()) {
      fail(path + ":" + std::to_string(line_no) + ": query \"" + q.query_id +
           "\" has empty text");
    }
    if (!seen.insert(q.query_id).second) {
      fail(path + ":" + std::to_string(line_no) + ": duplicate query id \"" +
           q.query_id + "\"");
    }
    queries.push_back(std::move(q));
  }
  return queries;
}

std::vector<RelevancePair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_pairs: cannot open " + path);
  std::vector<RelevancePair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json rec = parse_record(path, line_no, line);
    pairs.push_back({require_string(rec, "qid", path, line_no),
                     require_string(rec, "doc_id", path, line_no)});
  }
  return pairs;
}

Vocabulary build_vocabulary(const std::vector<Document>& docs,
                            const std::vector<Query>& queries,
                            const std::vector<int>& codebook_sizes) {
  if (docs.empty()) fail("build_vocabulary: corpus is empty");
  std::set<std::string> words;
  for (const Document& doc : docs) {
    if (doc.title) {
      for (auto& w : split_words(*doc.title)) words.insert(w);
    }
    for (auto& w : split_words(doc.body)) words.insert(w);
  }
  for (const Query& q : queries) {
    for (auto& w : split_words(q.text)) words.insert(w);
  }
  if (codebook_sizes.empty()) {
    // Linguistic mode: reserve ordinal suffix words for DocID disambiguation.
    for (int i = 2; i <= kMaxOrdinal; ++i) words.insert(std::to_string(i));
  }
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()),
                    codebook_sizes);
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSeq out;
  for (const std::string& w : split_words(text)) out.push_back(vocab.word_id(w));
  return out;
}

std::string detokenize(const TokenSeq& tokens, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += vocab.token_text(tokens[i]);
  }
  return out;
}

std::vector<Query> generate_pseudo_queries(const Document& doc, int n,
                                           std::uint64_t rng_seed) {
  std::vector<std::string> words = split_words(doc.body);
  const int len = static_cast<int>(words.size());
  std::vector<Query> out;
  if (n <= 0 || len == 0) return out;
  if (len < kMinSpan) {
    out.push_back({doc.doc_id + "::pq0", join_words(words, 0, len)});
    return out;
  }
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<int> span_dist(kMinSpan, std::min(kMaxSpan, len));
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    int span = span_dist(rng);
    int max_start = len - span;
    int start = 0;
    if (max_start > 0) {
      std::vector<double> weights(max_start + 1);
      for (int s = 0; s <= max_start; ++s) weights[s] = 1.0 / (1.0 + s);
      std::discrete_distribution<int> start_dist(weights.begin(), weights.end());
      start = start_dist(rng);
    }
    out.push_back({doc.doc_id + "::pq" + std::to_string(k),
                   join_words(words, start, start + span)});
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<RelevancePair>& pairs,
                           double holdout_fraction, std::uint64_t rng_seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: holdout fraction must be in (0,1)");
  }
  const int n = static_cast<int>(pairs.size());
  if (n == 0) fail("split_dataset: no pairs");

  std::map<std::string, std::vector<int>> by_doc;
  for (int i = 0; i < n; ++i) by_doc[pairs[i].doc_id].push_back(i);

  std::mt19937_64 rng(rng_seed);
  std::vector<char> pinned(n, 0);
  for (auto& [doc, idxs] : by_doc) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(idxs.size()) - 1);
    pinned[idxs[pick(rng)]] = 1;
  }

  std::vector<int> pool;
  for (int i = 0; i < n; ++i) {
    if (!pinned[i]) pool.push_back(i);
  }
  const int n_test = static_cast<int>(std::llround(holdout_fraction * n));
  if (n_test > static_cast<int>(pool.size())) {
    std::string blockers;
    for (auto& [doc, idxs] : by_doc) {
      if (idxs.size() == 1) {
        if (!blockers.empty()) blockers += ", ";
        blockers += doc;
      }
    }
    fail("split_dataset: cannot hold out " + std::to_string(n_test) +
         " of " + std::to_string(n) +
         " pairs while keeping every document covered; single-pair docs: [" +
         blockers + "]");
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<char> in_test(n, 0);
  for (int i = 0; i < n_test; ++i) in_test[pool[i]] = 1;

  DatasetSplit split;
  for (int i = 0; i < n; ++i) {
    (in_test[i] ? split.test : split.train).push_back(pairs[i]);
  }
  return split;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("save_vocabulary: cannot open " + path);
  out << "#mdr-vocab\tv1\tlevels=" << vocab.num_levels() << "\tsizes=";
  for (int i = 0; i < vocab.num_levels(); ++i) {
    if (i) out << ',';
    out << vocab.codebook_sizes()[i];
  }
  out << "\twords=" << vocab.num_words() << "\n";
  for (const std::string& w : vocab.words()) out << w << "\n";
  if (!out) fail("save_vocabulary: write failed for " + path);
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("load_vocabulary: cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("#mdr-vocab\tv1\t", 0) != 0) {
    fail("load_vocabulary: bad header in " + path);
  }
  std::vector<int> sizes;
  int n_words = -1;
  std::istringstream hs(header);
  std::string field;
  while (std::getline(hs, field, '\t')) {
    if (field.rfind("sizes=", 0) == 0) {
      std::istringstream ls(field.substr(6));
      std::string item;
      while (std::getline(ls, item, ',')) {
        if (!item.empty()) sizes.push_back(std::stoi(item));
      }
    } else if (field.rfind("words=", 0) == 0) {
      n_words = std::stoi(field.substr(6));
    }
  }
  if (n_words < 0) fail("load_vocabulary: missing word count in " + path);
  std::vector<std::string> words;
  words.reserve(n_words);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) words.push_back(line);
  }
  if (static_cast<int>(words.size()) != n_words) {
    fail("load_vocabulary: " + path + " is truncated (expected " +
         std::to_string(n_words) + " words, found " +
         std::to_string(words.size()) + ")");
  }
  return Vocabulary(std::move(words), std::move(sizes));
}

}  // namespace mdr
