/* Copyright 2026 The varmt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "varmt/subword.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "varmt/error.hpp"
#include "varmt/hash.hpp"
#include "varmt/utf8.hpp"

namespace varmt {

namespace {

const std::vector<std::string>& special_units() {
  static const std::vector<std::string> units = {"<pad>", "<s>", "</s>", "<unk>", "<2A>", "<2B>"};
  return units;
}

// Characters of a token followed by the end-of-word marker.
std::vector<std::string> initial_symbols(std::string_view token) {
  std::vector<std::string> symbols = utf8::characters(token);
  if (symbols.empty() && !token.empty()) {
    // Invalid UTF-8 falls back to bytes.
    for (char c : token) symbols.emplace_back(1, c);
  }
  symbols.emplace_back(SubwordModel::kEndOfWord);
  return symbols;
}

bool ends_with_marker(std::string_view unit) {
  const auto m = SubwordModel::kEndOfWord;
  return unit.size() >= m.size() && unit.substr(unit.size() - m.size()) == m;
}

}  // namespace

std::size_t SubwordModel::PairHash::operator()(const Merge& m) const {
  return static_cast<std::size_t>(fnv1a(m.second, fnv1a_byte(0x1f, fnv1a(m.first))));
}

SubwordModel::SubwordModel(std::vector<Merge> merges, std::vector<std::string> symbols,
                           std::size_t target_vocab_size)
    : merges_(std::move(merges)), target_vocab_size_(target_vocab_size) {
  units_ = special_units();
  units_.insert(units_.end(), std::make_move_iterator(symbols.begin()),
                std::make_move_iterator(symbols.end()));
  index();
}

void SubwordModel::index() {
  ids_.clear();
  ranks_.clear();
  for (std::size_t i = 0; i < units_.size(); ++i) {
    if (!ids_.emplace(units_[i], static_cast<TokenId>(i)).second)
      throw FormatError("duplicate subword unit '" + units_[i] + "'");
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) ranks_.emplace(merges_[r], r);
}

TokenId SubwordModel::id(std::string_view unit) const {
  auto it = ids_.find(std::string(unit));
  return it == ids_.end() ? kUnk : it->second;
}

TokenId SubwordModel::variety_token(VarietyTag tag) {
  switch (tag) {
    case VarietyTag::A:
      return kVarietyA;
    case VarietyTag::B:
      return kVarietyB;
    case VarietyTag::Unlabeled:
      break;
  }
  throw ConfigError("no variety token for an unlabeled tag");
}

std::vector<std::string> SubwordModel::apply_merges(std::string_view token) const {
  std::vector<std::string> symbols = initial_symbols(token);
  while (symbols.size() > 1) {
    std::size_t best_rank = merges_.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks_.find(Merge{symbols[i], symbols[i + 1]});
      if (it != ranks_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == merges_.size()) break;
    const Merge& m = merges_[best_rank];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == m.first && symbols[i + 1] == m.second) {
        next.push_back(m.first + m.second);
        i += 2;
      } else {
        next.push_back(std::move(symbols[i]));
        ++i;
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

std::vector<std::string> SubwordModel::segment_units(const Tokens& tokens) const {
  std::vector<std::string> out;
  for (const auto& t : tokens) {
    auto units = apply_merges(t);
    out.insert(out.end(), std::make_move_iterator(units.begin()), std::make_move_iterator(units.end()));
  }
  return out;
}

std::vector<TokenId> SubwordModel::segment(const Tokens& tokens) const {
  std::vector<TokenId> out;
  for (const auto& t : tokens)
    for (const auto& u : apply_merges(t)) out.push_back(id(u));
  return out;
}

Tokens SubwordModel::desegment(std::span<const TokenId> ids) const {
  Tokens out;
  std::string pending;
  bool open = false;
  for (TokenId i : ids) {
    if (is_special(i) || i < 0 || static_cast<std::size_t>(i) >= units_.size()) continue;
    std::string_view u = units_[static_cast<std::size_t>(i)];
    if (ends_with_marker(u)) {
      pending.append(u.substr(0, u.size() - kEndOfWord.size()));
      out.push_back(std::move(pending));
      pending.clear();
      open = false;
    } else {
      pending.append(u);
      open = true;
    }
  }
  if (open) out.push_back(std::move(pending));
  return out;
}

std::string SubwordModel::serialize() const {
  std::ostringstream out;
  out << "varmt-bpe 1 " << units_.size() << ' ' << target_vocab_size_ << ' ' << merges_.size()
      << '\n';
  for (const auto& [l, r] : merges_) out << l << ' ' << r << '\n';
  for (std::size_t i = kNumSpecials; i < units_.size(); ++i) out << units_[i] << '\n';
  return out.str();
}

SubwordModel SubwordModel::deserialize(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw FormatError("subword model: missing final newline");
    lines.emplace_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty()) throw FormatError("subword model: empty file");
  std::istringstream header(lines[0]);
  std::string magic;
  int version = 0;
  std::size_t vocab = 0;
  std::size_t target = 0;
  std::size_t n_merges = 0;
  if (!(header >> magic >> version >> vocab >> target >> n_merges) || magic != "varmt-bpe")
    throw FormatError("subword model: bad header '" + lines[0] + "'");
  if (version != 1) throw FormatError("subword model: unsupported version " + std::to_string(version));
  if (vocab < static_cast<std::size_t>(kNumSpecials) ||
      lines.size() != 1 + n_merges + (vocab - kNumSpecials))
    throw FormatError("subword model: line count disagrees with header");
  std::vector<Merge> merges;
  for (std::size_t i = 0; i < n_merges; ++i) {
    const auto& l = lines[1 + i];
    const auto sp = l.find(' ');
    if (sp == std::string::npos || l.find(' ', sp + 1) != std::string::npos)
      throw FormatError("subword model: malformed merge at line " + std::to_string(i + 2));
    merges.emplace_back(l.substr(0, sp), l.substr(sp + 1));
  }
  std::vector<std::string> symbols(lines.begin() + 1 + static_cast<std::ptrdiff_t>(n_merges), lines.end());
  return SubwordModel(std::move(merges), std::move(symbols), target);
}

void SubwordModel::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

SubwordModel SubwordModel::load(const std::filesystem::path& path) {
  std::string buf;
  for (const auto& l : read_lines(path)) {
    buf += l;
    buf.push_back('\n');
  }
  return deserialize(buf);
}

std::uint64_t SubwordModel::fingerprint() const { return fnv1a(serialize()); }

// ---------------------------------------------------------------------------
// Training

namespace {

class BpeTrainer {
 public:
  explicit BpeTrainer(const std::unordered_map<std::string, std::int64_t>& word_counts) {
    std::vector<std::pair<std::string, std::int64_t>> sorted(word_counts.begin(), word_counts.end());
    std::sort(sorted.begin(), sorted.end());
    std::set<std::string> alphabet;
    for (const auto& [w, c] : sorted)
      for (auto& s : initial_symbols(w)) alphabet.insert(s);
    for (const auto& s : alphabet) symbol_id(s);
    alphabet_size_ = symbols_.size();
    for (const auto& [w, c] : sorted) {
      std::vector<int> ids;
      for (auto& s : initial_symbols(w)) ids.push_back(symbol_id(s));
      words_.push_back(std::move(ids));
      counts_.push_back(c);
    }
    for (std::size_t w = 0; w < words_.size(); ++w) add_word(w, +1);
  }

  std::size_t alphabet_size() const { return alphabet_size_; }
  const std::deque<std::string>& symbols() const { return symbols_; }

  // Performs one merge; returns false when no adjacent pair is left.
  bool step(SubwordModel::Merge& merged) {
    if (queue_.empty()) return false;
    const Entry best = *queue_.begin();
    const PairKey key = best.key;
    merged = {symbols_[static_cast<std::size_t>(key.first)], symbols_[static_cast<std::size_t>(key.second)]};
    const int fused = symbol_id(merged.first + merged.second);
    auto affected_it = occurrences_.find(key);
    std::vector<std::size_t> affected(affected_it->second.begin(), affected_it->second.end());
    std::sort(affected.begin(), affected.end());
    for (std::size_t w : affected) {
      add_word(w, -1);
      auto& sym = words_[w];
      std::vector<int> next;
      next.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size();) {
        if (i + 1 < sym.size() && sym[i] == key.first && sym[i + 1] == key.second) {
          next.push_back(fused);
          i += 2;
        } else {
          next.push_back(sym[i++]);
        }
      }
      sym = std::move(next);
      add_word(w, +1);
    }
    return true;
  }

 private:
  using PairKey = std::pair<int, int>;
  struct PairKeyHash {
    std::size_t operator()(const PairKey& k) const {
      return std::hash<std::uint64_t>()((static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.first)) << 32) |
                                        static_cast<std::uint32_t>(k.second));
    }
  };
  struct Entry {
    std::int64_t count;
    const std::string* left;
    const std::string* right;
    PairKey key;
    bool operator<(const Entry& o) const {
      if (count != o.count) return count > o.count;
      if (*left != *o.left) return *left < *o.left;
      if (*right != *o.right) return *right < *o.right;
      return key < o.key;
    }
  };

  int symbol_id(const std::string& s) {
    auto [it, inserted] = symbol_ids_.emplace(s, static_cast<int>(symbols_.size()));
    if (inserted) symbols_.push_back(s);
    return it->second;
  }

  Entry entry(const PairKey& k, std::int64_t count) const {
    return {count, &symbols_[static_cast<std::size_t>(k.first)], &symbols_[static_cast<std::size_t>(k.second)], k};
  }

  void add_word(std::size_t w, int sign) {
    const auto& sym = words_[w];
    for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
      const PairKey k{sym[i], sym[i + 1]};
      std::int64_t& c = pair_counts_[k];
      if (c > 0) queue_.erase(entry(k, c));
      c += sign * counts_[w];
      if (c > 0) {
        queue_.insert(entry(k, c));
        occurrences_[k].insert(w);
      } else {
        pair_counts_.erase(k);
        occurrences_.erase(k);
      }
    }
    if (sign < 0) {
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        auto it = occurrences_.find({sym[i], sym[i + 1]});
        if (it != occurrences_.end()) it->second.erase(w);
      }
    }
  }

  std::deque<std::string> symbols_;  // stable addresses for Entry
  std::unordered_map<std::string, int> symbol_ids_;
  std::size_t alphabet_size_ = 0;
  std::vector<std::vector<int>> words_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<PairKey, std::int64_t, PairKeyHash> pair_counts_;
  std::unordered_map<PairKey, std::unordered_set<std::size_t>, PairKeyHash> occurrences_;
  std::set<Entry> queue_;
};

}  // namespace

SubwordModel train_subword(std::span<const ParallelCorpus* const> corpora, std::size_t target_vocab_size) {
  if (corpora.empty()) throw ConfigError("train_subword: no corpora given");
  std::unordered_map<std::string, std::int64_t> counts;
  for (const ParallelCorpus* c : corpora)
    for (const auto& p : c->pairs) {
      for (const auto& t : p.source) ++counts[t];
      for (const auto& t : p.target) ++counts[t];
    }
  BpeTrainer trainer(counts);
  const std::size_t floor = static_cast<std::size_t>(SubwordModel::kNumSpecials) + trainer.alphabet_size();
  if (target_vocab_size < floor) {
    throw ConfigError("subword vocabulary size " + std::to_string(target_vocab_size) +
                      " is below the floor of " + std::to_string(floor) + " (" +
                      std::to_string(SubwordModel::kNumSpecials) + " specials + " +
                      std::to_string(trainer.alphabet_size()) +
                      " distinct characters including the end-of-word marker)");
  }
  std::vector<SubwordModel::Merge> merges;
  std::size_t vocab = floor;
  SubwordModel::Merge m;
  std::unordered_set<std::string> known(trainer.symbols().begin(), trainer.symbols().end());
  while (vocab < target_vocab_size && trainer.step(m)) {
    if (known.insert(m.first + m.second).second) ++vocab;
    merges.push_back(std::move(m));
  }
  // Alphabet symbols first (already byte-sorted), then fused symbols in merge order.
  std::vector<std::string> symbols(trainer.symbols().begin(),
                                   trainer.symbols().begin() + static_cast<std::ptrdiff_t>(trainer.alphabet_size()));
  std::unordered_set<std::string> seen(symbols.begin(), symbols.end());
  for (const auto& [l, r] : merges) {
    std::string fused = l + r;
    if (seen.insert(fused).second) symbols.push_back(std::move(fused));
  }
  return SubwordModel(std::move(merges), std::move(symbols), target_vocab_size);
}

}  // namespace varmt
