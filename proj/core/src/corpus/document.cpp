#include "debias/corpus/document.hpp"

#include <fstream>

namespace debias::corpus {

char label_char(Ideology label) noexcept { return label == Ideology::Liberal ? 'L' : 'C'; }

Ideology parse_label(std::string_view text) {
  if (text == "L") return Ideology::Liberal;
  if (text == "C") return Ideology::Conservative;
  throw std::invalid_argument("unknown ideology label '" + std::string(text) + "' (expected L or C)");
}

void write_tsv(const std::filesystem::path& path, const std::vector<TextDocument>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& d : docs) {
    if (d.text.find_first_of("\t\n") != std::string::npos) {
      throw std::invalid_argument("write_tsv: document text contains a tab or newline");
    }
    out << label_char(d.label) << '\t' << d.text << '\n';
  }
}

std::vector<TextDocument> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  std::vector<TextDocument> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected label<TAB>text");
    }
    docs.push_back({line.substr(tab + 1), parse_label(std::string_view(line).substr(0, tab))});
  }
  return docs;
}

std::vector<Document> encode(const std::vector<TextDocument>& docs, const Vocab& vocab, std::size_t max_length) {
  std::vector<Document> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    Document doc{vocab.encode(d.text), d.label};
    if (max_length > 0 && doc.tokens.size() > max_length) doc.tokens.resize(max_length);
    if (doc.tokens.empty()) throw std::invalid_argument("encode: empty document");
    out.push_back(std::move(doc));
  }
  return out;
}

}  // namespace debias::corpus
