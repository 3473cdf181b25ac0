#pragma once

#include "anople/errors.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace anople {

// Word-table tokenizer. Each known word maps to one or more token ids; the
// table for a pretrained text encoder is exported once from its native BPE
// tokenizer, the tiny test encoder gets a synthetic table.
class WordTokenizer {
 public:
  WordTokenizer() = default;
  WordTokenizer(std::map<std::string, std::vector<int>> table, int sot, int eot);

  // Synthetic vocabulary covering the state words, the MVTec-AD / VisA
  // class names and the synthetic dataset's categories.
  static WordTokenizer builtin();
  // JSON: {"sot": int, "eot": int, "words": {"bottle": [ids...], ...}}
  static WordTokenizer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Splits on spaces and underscores, lowercases, and maps every word.
  // Throws TokenizerError naming the phrase when a word is unknown.
  std::vector<int> encode_words(std::string_view phrase) const;

  int sot() const { return sot_; }
  int eot() const { return eot_; }
  // One past the largest id in use.
  int vocab_size() const;
  bool contains(const std::string& word) const { return table_.count(word) != 0; }

 private:
  std::map<std::string, std::vector<int>> table_;
  int sot_ = 0;
  int eot_ = 0;
};

std::vector<std::string> split_words(std::string_view phrase);

}  // namespace anople
