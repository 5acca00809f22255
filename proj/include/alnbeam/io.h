#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace alnbeam {

// Token inventory. File format: one token per line, id = line number.
class Vocab {
 public:
  Vocab() = default;
  static Vocab from_tokens(const std::vector<std::string>& tokens);
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  int id(const std::string& token) const;       // -1 when absent
  int require(const std::string& token) const;  // data error when absent
  bool contains(const std::string& token) const { return id(token) >= 0; }

  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_ws(const std::string& line);
std::string join_ws(const std::vector<std::string>& words);

// One sentence per line, whitespace tokens.
std::vector<std::vector<std::string>> read_token_lines(const std::string& path);
void write_token_lines(const std::string& path, const std::vector<std::vector<std::string>>& lines);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace alnbeam
