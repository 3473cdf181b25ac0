#include "anople/tokenizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>

namespace anople {

namespace {

constexpr const char* kBuiltinWords[] = {
    // state words
    "normal", "abnormal", "anomalous", "damaged", "flawless", "perfect", "broken", "defective", "object", "a",
    "photo", "of", "the",
    // MVTec-AD
    "bottle", "cable", "capsule", "carpet", "grid", "hazelnut", "leather", "metal", "nut", "pill", "screw",
    "tile", "toothbrush", "transistor", "wood", "zipper",
    // VisA
    "candle", "capsules", "cashew", "chewinggum", "chewing", "gum", "fryum", "macaroni1", "macaroni2", "macaroni",
    "pcb1", "pcb2", "pcb3", "pcb4", "pcb", "pipe", "fryum",
    // synthetic dataset
    "stripes", "checker", "weave", "dots", "texture", "fabric"};

}  // namespace

std::vector<std::string> split_words(std::string_view phrase) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : phrase) {
    if (ch == ' ' || ch == '_' || ch == '\t') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

WordTokenizer::WordTokenizer(std::map<std::string, std::vector<int>> table, int sot, int eot)
    : table_(std::move(table)), sot_(sot), eot_(eot) {}

WordTokenizer WordTokenizer::builtin() {
  std::map<std::string, std::vector<int>> table;
  int next = 0;
  for (const char* w : kBuiltinWords) {
    if (!table.count(w)) table[w] = {next++};
  }
  return WordTokenizer(std::move(table), next, next + 1);
}

WordTokenizer WordTokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TokenizerError("cannot open vocabulary file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    std::map<std::string, std::vector<int>> table;
    for (auto& [word, ids] : j.at("words").items()) table[word] = ids.get<std::vector<int>>();
    return WordTokenizer(std::move(table), j.at("sot").get<int>(), j.at("eot").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw TokenizerError("malformed vocabulary file " + path.string() + ": " + e.what());
  }
}

void WordTokenizer::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["sot"] = sot_;
  j["eot"] = eot_;
  j["words"] = table_;
  std::ofstream out(path);
  out << j.dump(1);
}

std::vector<int> WordTokenizer::encode_words(std::string_view phrase) const {
  std::vector<int> ids;
  for (const auto& word : split_words(phrase)) {
    auto it = table_.find(word);
    if (it == table_.end()) {
      throw TokenizerError("unknown token '" + word + "' in \"" + std::string(phrase) + "\"");
    }
    ids.insert(ids.end(), it->second.begin(), it->second.end());
  }
  return ids;
}

int WordTokenizer::vocab_size() const {
  int top = std::max(sot_, eot_);
  for (const auto& [w, ids] : table_)
    for (int id : ids) top = std::max(top, id);
  return top + 1;
}

}  // namespace anople
