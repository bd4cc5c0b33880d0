#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace convrnnt {

// Token inventory. Line 0 of the file is `<blank>` (id 0); `<unk>` must be
// present. A literal space is written as "▁" in the file.
class Vocab {
 public:
  static constexpr const char* kBlank = "<blank>";
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kSpace = "\xE2\x96\x81";  // U+2581

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Greedy longest match; characters no token covers become <unk>.
  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

  // Number of non-blank tokens.
  std::size_t size() const { return tokens_.size() - 1; }
  int unk_id() const { return unk_; }
  int id(const std::string& token) const;
  const std::string& token(int id) const;

 private:
  std::vector<std::string> tokens_;  // stored with spaces already decoded
  std::unordered_map<std::string, int> index_;
  std::size_t longest_ = 0;
  int unk_ = -1;
};

// Word error rate helpers: Levenshtein distance over whitespace-separated words.
std::vector<std::string> split_words(const std::string& text);
std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
// Total word errors / total reference words over a corpus.
double corpus_wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps);

}  // namespace convrnnt
