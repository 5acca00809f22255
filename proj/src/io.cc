#include "alnbeam/io.h"

#include <fstream>
#include <sstream>

#include "alnbeam/error.h"

namespace alnbeam {

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  v.tokens_ = tokens;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    if (!v.index_.emplace(tokens[i], i).second)
      throw Error::data("duplicate vocabulary token: " + tokens[i]);
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::data("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(tokens);
}

void Vocab::save(const std::string& path) const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  write_file(path, out);
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw Error::data("vocabulary id out of range: " + std::to_string(id));
  return tokens_[id];
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

int Vocab::require(const std::string& token) const {
  int i = id(token);
  if (i < 0) throw Error::data("token not in vocabulary: " + token);
  return i;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(require(w));
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int i : ids) words.push_back(token(i));
  return words;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> words;
  std::istringstream ss(line);
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

std::string join_ws(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::vector<std::string>> read_token_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::data("cannot open file: " + path);
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(split_ws(line));
  return lines;
}

void write_token_lines(const std::string& path, const std::vector<std::vector<std::string>>& lines) {
  std::string out;
  for (const auto& l : lines) {
    out += join_ws(l);
    out += '\n';
  }
  write_file(path, out);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error::data("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error::data("cannot write file: " + path);
  out << content;
  if (!out) throw Error::data("write failed: " + path);
}

}  // namespace alnbeam
