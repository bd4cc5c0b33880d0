#include "convrnnt/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "convrnnt/errors.hpp"

namespace convrnnt {

namespace {

std::string decode_spaces(const std::string& token) {
  std::string out;
  const std::string marker = Vocab::kSpace;
  for (std::size_t i = 0; i < token.size();) {
    if (token.compare(i, marker.size(), marker) == 0) {
      out += ' ';
      i += marker.size();
    } else {
      out += token[i++];
    }
  }
  return out;
}

std::string encode_spaces(const std::string& token) {
  std::string out;
  for (char c : token) {
    if (c == ' ') {
      out += Vocab::kSpace;
    } else {
      out += c;
    }
  }
  return out;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) {
  if (tokens.empty() || tokens.front() != kBlank) throw DataError("vocab: first token must be <blank>");
  for (auto& t : tokens) {
    if (t.empty()) throw DataError("vocab: empty token");
    const std::string decoded = (t == kBlank || t == kUnk) ? t : decode_spaces(t);
    const int id = static_cast<int>(tokens_.size());
    if (!index_.emplace(decoded, id).second) throw DataError("vocab: duplicate token '" + t + "'");
    tokens_.push_back(decoded);
    if (id != 0 && decoded != kUnk) longest_ = std::max(longest_, decoded.size());
  }
  const auto it = index_.find(kUnk);
  if (it == index_.end()) throw DataError("vocab: missing <unk>");
  unk_ = it->second;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocab file " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    out << ((t == kBlank || t == kUnk) ? t : encode_spaces(t)) << "\n";
  }
}

int Vocab::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? unk_ : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InputError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
  std::vector<int> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    int match = -1;
    std::size_t match_len = 0;
    for (std::size_t len = std::min(longest_, text.size() - i); len > 0; --len) {
      const auto it = index_.find(text.substr(i, len));
      if (it != index_.end() && it->second != 0 && it->second != unk_) {
        match = it->second;
        match_len = len;
        break;
      }
    }
    if (match < 0) {
      match = unk_;
      match_len = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
    }
    ids.push_back(match);
    i += match_len;
  }
  if (ids.empty()) throw DataError("tokenize: empty transcript");
  return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == 0) continue;
    out += token(id);
  }
  return out;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

std::size_t edit_distance(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

double corpus_wer(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  if (refs.size() != hyps.size()) throw InputError("corpus_wer: reference/hypothesis count mismatch");
  std::size_t errors = 0, words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto r = split_words(refs[i]);
    errors += edit_distance(r, split_words(hyps[i]));
    words += r.size();
  }
  return words == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(words);
}

}  // namespace convrnnt
