#include "alnbeam/constraints.h"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "alnbeam/error.h"
#include "alnbeam/rng.h"

namespace alnbeam {

using nlohmann::json;

int ConstraintSet::total_tokens() const {
  int n = 0;
  for (int i = 0; i < size(); ++i)
    if (is_feasible(i)) n += items[i].length();
  return n;
}

void ConstraintSet::validate() const {
  if (size() > 32) throw Error::config("at most 32 constraints per sentence are supported");
  if (!feasible.empty() && feasible.size() != items.size())
    throw Error::config("feasible flags do not match constraint count");
  for (int i = 0; i < size(); ++i) {
    const Constraint& c = items[i];
    if (c.tgt_tokens.empty()) throw Error::data("constraint has an empty target phrase");
    if (c.src_begin < 0 || c.src_end < c.src_begin)
      throw Error::data("constraint has an invalid source span");
    for (int j = i + 1; j < size(); ++j)
      if (c.src_begin <= items[j].src_end && items[j].src_begin <= c.src_end)
        throw Error::data("constraint source spans overlap");
  }
}

bool ConstraintProgress::all_met(const ConstraintSet& cs) const {
  for (int i = 0; i < cs.size(); ++i)
    if (cs.is_feasible(i) && !is_met(i)) return false;
  return true;
}

std::vector<ProgressSuccessor> advance(const ConstraintProgress& p, const ConstraintSet& cs,
                                       int y) {
  std::vector<ProgressSuccessor> out;

  // Continue the in-progress constraint.
  if (p.in_progress >= 0) {
    const Constraint& c = cs.items[p.in_progress];
    if (c.tgt_tokens[p.offset] == y) {
      ConstraintProgress next = p;
      ++next.offset;
      ++next.met_token_count;
      if (next.offset == c.length()) {
        next.met |= 1u << p.in_progress;
        next.in_progress = -1;
        next.offset = 0;
      }
      out.push_back({next, p.in_progress});
    }
  }

  // Abandoning the in-progress constraint resets it to unmet.
  ConstraintProgress base = p;
  if (base.in_progress >= 0) {
    base.met_token_count -= base.offset;
    base.in_progress = -1;
    base.offset = 0;
  }

  // Start any unmet constraint whose first token matches.
  for (int j = 0; j < cs.size(); ++j) {
    if (!cs.is_feasible(j) || base.is_met(j)) continue;
    const Constraint& c = cs.items[j];
    if (c.tgt_tokens[0] != y) continue;
    ConstraintProgress next = base;
    ++next.met_token_count;
    if (c.length() == 1) {
      next.met |= 1u << j;
    } else {
      next.in_progress = j;
      next.offset = 1;
    }
    out.push_back({next, j});
  }

  out.push_back({base, -1});
  return out;
}

namespace {

bool subseq_at(std::span<const int> hay, size_t pos, std::span<const int> needle) {
  if (pos + needle.size() > hay.size()) return false;
  for (size_t i = 0; i < needle.size(); ++i)
    if (hay[pos + i] != needle[i]) return false;
  return true;
}

bool contains_phrase(std::span<const int> hay, std::span<const int> needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (size_t pos = 0; pos + needle.size() <= hay.size(); ++pos)
    if (subseq_at(hay, pos, needle)) return true;
  return false;
}

}  // namespace

std::vector<Constraint> extract_constraints(const Alignment& gold, std::span<const int> src,
                                            std::span<const int> ref,
                                            std::span<const int> greedy_hyp,
                                            const ExtractParams& params) {
  const int S = static_cast<int>(src.size());
  const int T = static_cast<int>(ref.size());

  // Sure links only, indexed both ways.
  std::vector<std::vector<int>> tgt_to_src(T);
  std::vector<std::vector<int>> src_to_tgt(S);
  for (const auto& [s, t] : gold.sure()) {
    if (s >= S || t >= T) throw Error::data("gold alignment link outside sentence bounds");
    tgt_to_src[t].push_back(s);
    src_to_tgt[s].push_back(t);
  }

  struct Candidate {
    int tgt_begin, tgt_end;
    int src_begin, src_end;
  };
  std::vector<Candidate> eligible;
  for (int a = 0; a < T; ++a) {
    for (int b = a; b < std::min(T, a + params.max_phrase_len); ++b) {
      int lo = S, hi = -1;
      bool aligned = true;
      for (int t = a; t <= b && aligned; ++t) {
        if (tgt_to_src[t].empty()) aligned = false;
        for (int s : tgt_to_src[t]) {
          lo = std::min(lo, s);
          hi = std::max(hi, s);
        }
      }
      if (!aligned) continue;
      // Consistency: nothing inside the source span may link outside [a, b].
      bool consistent = true;
      for (int s = lo; s <= hi && consistent; ++s)
        for (int t : src_to_tgt[s])
          if (t < a || t > b) {
            consistent = false;
            break;
          }
      if (!consistent) continue;
      // Skip spans the greedy decode already translated correctly.
      if (contains_phrase(greedy_hyp, ref.subspan(a, b - a + 1))) continue;
      eligible.push_back({a, b, lo, hi});
    }
  }

  Rng rng(params.seed);
  rng.shuffle(eligible);

  std::vector<Constraint> chosen;
  std::vector<std::pair<int, int>> used_src, used_tgt;
  for (const Candidate& c : eligible) {
    if (static_cast<int>(chosen.size()) >= params.max_constraints) break;
    bool clash = false;
    for (const auto& [lo, hi] : used_src)
      if (c.src_begin <= hi && lo <= c.src_end) clash = true;
    for (const auto& [lo, hi] : used_tgt)
      if (c.tgt_begin <= hi && lo <= c.tgt_end) clash = true;
    if (clash) continue;
    Constraint out;
    out.src_begin = c.src_begin;
    out.src_end = c.src_end;
    out.tgt_tokens.assign(ref.begin() + c.tgt_begin, ref.begin() + c.tgt_end + 1);
    chosen.push_back(std::move(out));
    used_src.push_back({c.src_begin, c.src_end});
    used_tgt.push_back({c.tgt_begin, c.tgt_end});
  }

  std::sort(chosen.begin(), chosen.end(),
            [](const Constraint& a, const Constraint& b) { return a.src_begin < b.src_begin; });
  return chosen;
}

ConstraintFile read_constraints_jsonl(const std::string& path) {
  ConstraintFile file;
  std::string content = read_file(path);
  size_t pos = 0;
  int line_no = 0;
  while (pos < content.size()) {
    size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    std::vector<ConstraintFile::Item> items;
    if (!line.empty()) {
      json j;
      try {
        j = json::parse(line);
        for (const json& cj : j.at("constraints")) {
          ConstraintFile::Item item;
          item.src_begin = cj.at("src_span").at(0).get<int>();
          item.src_end = cj.at("src_span").at(1).get<int>();
          item.tgt_tokens = cj.at("tgt_tokens").get<std::vector<std::string>>();
          items.push_back(std::move(item));
        }
      } catch (const json::exception& e) {
        throw Error::format("bad constraint line " + std::to_string(line_no) + " in " + path +
                            ": " + e.what());
      }
    }
    file.sentences.push_back(std::move(items));
  }
  return file;
}

void write_constraints_jsonl(const std::string& path, const ConstraintFile& file) {
  std::string out;
  for (const auto& items : file.sentences) {
    json arr = json::array();
    for (const auto& item : items) {
      arr.push_back(
          {{"src_span", {item.src_begin, item.src_end}}, {"tgt_tokens", item.tgt_tokens}});
    }
    out += json{{"constraints", arr}}.dump();
    out += '\n';
  }
  write_file(path, out);
}

ConstraintSet to_constraint_set(const std::vector<ConstraintFile::Item>& items, const Vocab& tgt,
                                int bos_id, int eos_id) {
  ConstraintSet cs;
  for (const auto& item : items) {
    Constraint c;
    c.src_begin = item.src_begin;
    c.src_end = item.src_end;
    bool ok = !item.tgt_tokens.empty();
    for (const auto& w : item.tgt_tokens) {
      const int id = tgt.id(w);
      if (id < 0 || id == bos_id || id == eos_id) ok = false;
      c.tgt_tokens.push_back(id);
    }
    cs.items.push_back(std::move(c));
    cs.feasible.push_back(ok);
  }
  cs.validate();
  return cs;
}

std::vector<ConstraintFile::Item> to_file_items(std::span<const Constraint> constraints,
                                                const Vocab& tgt) {
  std::vector<ConstraintFile::Item> items;
  for (const auto& c : constraints) {
    ConstraintFile::Item item;
    item.src_begin = c.src_begin;
    item.src_end = c.src_end;
    item.tgt_tokens = tgt.decode(c.tgt_tokens);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace alnbeam
