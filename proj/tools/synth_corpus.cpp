// Writes a deterministic synthetic corpus in the JSON Lines layout the
// `ingest` command expects. Handy for demos and benchmarks.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdr/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic corpus generator"};
  std::string out_path = "corpus.jsonl";
  mdr::SyntheticCorpusOptions options;
  app.add_option("--out", out_path, "output JSONL path");
  app.add_option("--docs", options.num_docs, "number of documents");
  app.add_option("--body-tokens", options.body_tokens, "tokens per body");
  app.add_option("--seed", options.rng_seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) {
      std::cerr << "error: cannot open " << out_path << "\n";
      return 1;
    }
    for (const mdr::Document& doc : mdr::synthetic_corpus(options)) {
      nlohmann::ordered_json rec;
      rec["id"] = doc.doc_id;
      rec["title"] = doc.title ? nlohmann::ordered_json(*doc.title)
                               : nlohmann::ordered_json(nullptr);
      rec["body"] = doc.body;
      out << rec.dump() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << "wrote " << options.num_docs << " documents to " << out_path << "\n";
  return 0;
}
