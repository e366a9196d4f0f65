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

#include "varmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "varmt/error.hpp"
#include "varmt/rng.hpp"
#include "varmt/utf8.hpp"

namespace varmt {

namespace fs = std::filesystem;

std::string_view to_string(VarietyTag tag) {
  switch (tag) {
    case VarietyTag::A:
      return "A";
    case VarietyTag::B:
      return "B";
    case VarietyTag::Unlabeled:
      return "U";
  }
  return "?";
}

VarietyTag parse_variety_tag(std::string_view text) {
  if (text == "A" || text == "a") return VarietyTag::A;
  if (text == "B" || text == "b") return VarietyTag::B;
  if (text == "U" || text == "u" || text == "none") return VarietyTag::Unlabeled;
  throw ConfigError("unknown variety tag '" + std::string(text) + "' (expected A, B or U)");
}

std::string_view to_string(Scenario scenario) {
  switch (scenario) {
    case Scenario::Supervised:
      return "supervised";
    case Scenario::Unsupervised:
      return "unsupervised";
    case Scenario::SemiSupervised:
      return "semi";
  }
  return "?";
}

Scenario parse_scenario(std::string_view text) {
  if (text == "supervised" || text == "sup") return Scenario::Supervised;
  if (text == "unsupervised" || text == "unsup") return Scenario::Unsupervised;
  if (text == "semi" || text == "semi-supervised" || text == "semisupervised")
    return Scenario::SemiSupervised;
  throw ConfigError("unknown scenario '" + std::string(text) +
                    "' (expected supervised, unsupervised or semi)");
}

Fraction parse_fraction(std::string_view text) {
  Fraction f{0, 1};
  const auto slash = text.find('/');
  try {
    if (slash == std::string_view::npos) {
      f.num = std::stoll(std::string(text));
      f.den = 1;
    } else {
      f.num = std::stoll(std::string(text.substr(0, slash)));
      f.den = std::stoll(std::string(text.substr(slash + 1)));
    }
  } catch (const std::exception&) {
    throw ConfigError("malformed fraction '" + std::string(text) + "' (expected p/q)");
  }
  if (f.den <= 0 || f.num < 0 || f.num > f.den)
    throw ConfigError("fraction '" + std::string(text) + "' outside [0, 1]");
  return f;
}

std::size_t labeled_count(std::size_t n, Fraction fraction) {
  const auto num = static_cast<unsigned __int128>(n) * static_cast<unsigned __int128>(fraction.num);
  const auto den = static_cast<unsigned __int128>(fraction.den);
  return static_cast<std::size_t>((2 * num + den) / (2 * den));
}

// ---------------------------------------------------------------------------
// Tokenization

bool is_space(char32_t cp) {
  switch (cp) {
    case U' ':
    case U'\t':
    case U'\n':
    case U'\v':
    case U'\f':
    case U'\r':
    case 0x85:
    case 0xA0:
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202F:
    case 0x205F:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_punctuation(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
           (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
  }
  switch (cp) {
    case 0xA1:
    case 0xA7:
    case 0xAB:
    case 0xB6:
    case 0xB7:
    case 0xBB:
    case 0xBF:
      return true;
    default:
      break;
  }
  return (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
         (cp >= 0x3001 && cp <= 0x3003) || (cp >= 0x3008 && cp <= 0x3011);
}

namespace {

// One lenient UTF-8 step: malformed bytes come back as single opaque units
// so that tokenization never drops or rewrites input bytes.
struct CodeUnit {
  char32_t cp;
  std::size_t len;
  bool valid;
};

CodeUnit next_unit(std::string_view text, std::size_t i) {
  for (std::size_t len = 1; len <= 4 && i + len <= text.size(); ++len) {
    const auto cps = utf8::decode(text.substr(i, len));
    if (cps && cps->size() == 1) return {(*cps)[0], len, true};
  }
  return {0, 1, false};
}

void split_word(std::string_view word, Tokens& out) {
  std::vector<CodeUnit> units;
  for (std::size_t i = 0; i < word.size();) {
    units.push_back(next_unit(word, i));
    i += units.back().len;
  }
  std::vector<std::size_t> offsets(units.size() + 1, 0);
  for (std::size_t k = 0; k < units.size(); ++k) offsets[k + 1] = offsets[k] + units[k].len;
  const auto punct = [&](std::size_t k) { return units[k].valid && is_punctuation(units[k].cp); };

  std::size_t begin = 0;
  std::size_t end = units.size();
  while (begin < end && punct(begin)) {
    out.emplace_back(word.substr(offsets[begin], units[begin].len));
    ++begin;
  }
  std::size_t trail = end;
  while (trail > begin && punct(trail - 1)) --trail;
  if (trail > begin) out.emplace_back(word.substr(offsets[begin], offsets[trail] - offsets[begin]));
  for (std::size_t k = trail; k < end; ++k) out.emplace_back(word.substr(offsets[k], units[k].len));
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t word_begin = std::string_view::npos;
  for (std::size_t i = 0; i < text.size();) {
    const CodeUnit u = next_unit(text, i);
    const bool space = u.valid && is_space(u.cp);
    if (space && word_begin != std::string_view::npos) {
      split_word(text.substr(word_begin, i - word_begin), out);
      word_begin = std::string_view::npos;
    } else if (!space && word_begin == std::string_view::npos) {
      word_begin = i;
    }
    i += u.len;
  }
  if (word_begin != std::string_view::npos) split_word(text.substr(word_begin), out);
  return out;
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

void write_lines(const std::vector<std::string>& lines, const fs::path& path) {
  std::string buf;
  for (const auto& l : lines) {
    buf += l;
    buf.push_back('\n');
  }
  write_file_atomic(path, buf);
}

ParallelCorpus load_parallel(const fs::path& source_path, const fs::path& target_path,
                             VarietyTag tag) {
  const auto src = read_lines(source_path);
  const auto tgt = read_lines(target_path);
  if (src.size() != tgt.size()) {
    throw AlignmentError("line count mismatch: " + source_path.string() + " has " +
                         std::to_string(src.size()) + " lines vs " + target_path.string() +
                         " has " + std::to_string(tgt.size()) + " (" + std::to_string(src.size()) +
                         " vs " + std::to_string(tgt.size()) + ")");
  }
  ParallelCorpus corpus;
  corpus.pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!utf8::valid(src[i]))
      throw DecodeError("invalid UTF-8 in " + source_path.string() + " at line " + std::to_string(i + 1));
    if (!utf8::valid(tgt[i]))
      throw DecodeError("invalid UTF-8 in " + target_path.string() + " at line " + std::to_string(i + 1));
    corpus.pairs.push_back({tokenize(src[i]), tokenize(tgt[i]), tag});
  }
  return corpus;
}

ParallelCorpus filter_by_length(const ParallelCorpus& corpus, std::size_t max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  ParallelCorpus out;
  out.variety_names = corpus.variety_names;
  for (const auto& p : corpus.pairs)
    if (p.source.size() <= max_len && p.target.size() <= max_len) out.pairs.push_back(p);
  return out;
}

ParallelCorpus drop_empty(const ParallelCorpus& corpus) {
  ParallelCorpus out;
  out.variety_names = corpus.variety_names;
  for (const auto& p : corpus.pairs)
    if (!p.source.empty() && !p.target.empty()) out.pairs.push_back(p);
  return out;
}

namespace {

std::string pair_key(const SentencePair& p) { return join(p.source) + '\t' + join(p.target); }

}  // namespace

ParallelCorpus deduplicate(const ParallelCorpus& corpus) {
  ParallelCorpus out;
  out.variety_names = corpus.variety_names;
  std::unordered_set<std::string> seen;
  for (const auto& p : corpus.pairs)
    if (seen.insert(pair_key(p)).second) out.pairs.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Serbian Cyrillic -> Latin

std::string transliterate_sr_cyrillic_to_latin(std::string_view text) {
  static const std::unordered_map<char32_t, std::u32string_view> table = {
      {U'А', U"A"},  {U'Б', U"B"}, {U'В', U"V"}, {U'Г', U"G"},  {U'Д', U"D"},  {U'Ђ', U"Đ"},
      {U'Е', U"E"},  {U'Ж', U"Ž"}, {U'З', U"Z"}, {U'И', U"I"},  {U'Ј', U"J"},  {U'К', U"K"},
      {U'Л', U"L"},  {U'Љ', U"Lj"}, {U'М', U"M"}, {U'Н', U"N"}, {U'Њ', U"Nj"}, {U'О', U"O"},
      {U'П', U"P"},  {U'Р', U"R"}, {U'С', U"S"}, {U'Т', U"T"},  {U'Ћ', U"Ć"},  {U'У', U"U"},
      {U'Ф', U"F"},  {U'Х', U"H"}, {U'Ц', U"C"}, {U'Ч', U"Č"},  {U'Џ', U"Dž"}, {U'Ш', U"Š"},
      {U'а', U"a"},  {U'б', U"b"}, {U'в', U"v"}, {U'г', U"g"},  {U'д', U"d"},  {U'ђ', U"đ"},
      {U'е', U"e"},  {U'ж', U"ž"}, {U'з', U"z"}, {U'и', U"i"},  {U'ј', U"j"},  {U'к', U"k"},
      {U'л', U"l"},  {U'љ', U"lj"}, {U'м', U"m"}, {U'н', U"n"}, {U'њ', U"nj"}, {U'о', U"o"},
      {U'п', U"p"},  {U'р', U"r"}, {U'с', U"s"}, {U'т', U"t"},  {U'ћ', U"ć"},  {U'у', U"u"},
      {U'ф', U"f"},  {U'х', U"h"}, {U'ц', U"c"}, {U'ч', U"č"},  {U'џ', U"dž"}, {U'ш', U"š"},
  };
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const CodeUnit u = next_unit(text, i);
    if (u.valid) {
      if (auto it = table.find(u.cp); it != table.end()) {
        for (char32_t c : it->second) utf8::append(out, c);
        i += u.len;
        continue;
      }
    }
    out.append(text.substr(i, u.len));
    i += u.len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

namespace {

ParallelCorpus retag(const ParallelCorpus& corpus, VarietyTag tag) {
  ParallelCorpus out = corpus;
  for (auto& p : out.pairs) p.tag = tag;
  return out;
}

}  // namespace

PartitionedDataset partition(const ParallelCorpus& corpus_a, const ParallelCorpus& corpus_b,
                             const ParallelCorpus& dev_a, const ParallelCorpus& dev_b,
                             const ParallelCorpus& test_a, const ParallelCorpus& test_b,
                             Scenario scenario, Fraction labeled_fraction, std::uint64_t seed) {
  if (labeled_fraction.den <= 0 || labeled_fraction.num < 0 ||
      labeled_fraction.num > labeled_fraction.den)
    throw ConfigError("labeled fraction " + labeled_fraction.str() + " outside [0, 1]");

  // Every pair may live in exactly one partition.
  std::unordered_map<std::string, std::string> owner;
  std::vector<std::string> offending;
  const auto claim = [&](const ParallelCorpus& c, const std::string& name, bool held_out) {
    for (const auto& p : c.pairs) {
      auto key = pair_key(p);
      auto [it, inserted] = owner.emplace(key, name);
      if (!inserted) {
        if (held_out || it->second.rfind("dev", 0) == 0 || it->second.rfind("test", 0) == 0)
          offending.push_back(name + "/" + it->second + ": " + key);
        else
          throw DataError("duplicate training pair in " + name + " and " + it->second + ": " +
                          key + " (deduplicate the corpora first)");
      }
    }
  };
  claim(corpus_a, "train_a", false);
  claim(corpus_b, "train_b", false);
  claim(dev_a, "dev_a", true);
  claim(dev_b, "dev_b", true);
  claim(test_a, "test_a", true);
  claim(test_b, "test_b", true);
  if (!offending.empty()) {
    std::ostringstream msg;
    msg << offending.size() << " held-out pair(s) overlap another partition:";
    for (std::size_t i = 0; i < offending.size() && i < 20; ++i) msg << "\n  " << offending[i];
    if (offending.size() > 20) msg << "\n  ...";
    throw ContaminationError(msg.str());
  }

  PartitionedDataset out;
  out.scenario = scenario;
  out.labeled_fraction = labeled_fraction;
  out.seed = seed;
  const auto names = corpus_a.variety_names;
  out.dev_a = retag(dev_a, VarietyTag::A);
  out.dev_b = retag(dev_b, VarietyTag::B);
  out.test_a = retag(test_a, VarietyTag::A);
  out.test_b = retag(test_b, VarietyTag::B);
  for (auto* c : {&out.labeled_a, &out.labeled_b, &out.unlabeled, &out.dev_a, &out.dev_b,
                  &out.test_a, &out.test_b})
    c->variety_names = names;

  std::size_t take_a = 0;
  std::size_t take_b = 0;
  switch (scenario) {
    case Scenario::Supervised:
      take_a = corpus_a.size();
      take_b = corpus_b.size();
      break;
    case Scenario::Unsupervised:
      break;
    case Scenario::SemiSupervised:
      take_a = labeled_count(corpus_a.size(), labeled_fraction);
      take_b = labeled_count(corpus_b.size(), labeled_fraction);
      break;
  }

  // Each variety gets its own stream so A's split does not depend on |B|.
  const auto split = [&](const ParallelCorpus& src, VarietyTag tag, std::size_t take,
                         std::uint64_t stream, ParallelCorpus& labeled) {
    std::vector<std::size_t> order(src.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (scenario == Scenario::SemiSupervised) {
      Rng rng(mix_seed(seed, stream));
      shuffle(std::span<std::size_t>(order), rng);
    }
    std::vector<bool> chosen(src.size(), false);
    for (std::size_t k = 0; k < take; ++k) chosen[order[k]] = true;
    // Both halves keep input order.
    for (std::size_t i = 0; i < src.size(); ++i) {
      SentencePair p = src.pairs[i];
      if (chosen[i]) {
        p.tag = tag;
        labeled.pairs.push_back(std::move(p));
      } else {
        p.tag = VarietyTag::Unlabeled;
        out.unlabeled.pairs.push_back(std::move(p));
        out.unlabeled_truth.push_back(tag);
      }
    }
  };
  split(corpus_a, VarietyTag::A, take_a, 0, out.labeled_a);
  split(corpus_b, VarietyTag::B, take_b, 1, out.labeled_b);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::string buf;
  for (const auto& [k, v] : manifest) buf += k + " = " + v + "\n";
  write_file_atomic(path, buf);
}

Manifest read_manifest(const fs::path& path) {
  Manifest m;
  std::size_t lineno = 0;
  for (const auto& raw : read_lines(path)) {
    ++lineno;
    std::string_view line = raw;
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    if (line.empty() || line.front() == '#' || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
      return std::string(s);
    };
    m[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return m;
}

void write_corpus_files(const ParallelCorpus& corpus, const fs::path& source_path,
                        const fs::path& target_path) {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
  src.reserve(corpus.size());
  tgt.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    src.push_back(join(p.source));
    tgt.push_back(join(p.target));
  }
  write_lines(src, source_path);
  write_lines(tgt, target_path);
}

namespace {

constexpr std::string_view kPartNames[] = {"labeled_a", "labeled_b", "unlabeled", "dev_a",
                                           "dev_b",     "test_a",    "test_b"};

Tokens split_spaces(const std::string& line) {
  Tokens out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

ParallelCorpus read_part(const fs::path& dir, std::string_view name, VarietyTag tag) {
  const auto src = read_lines(dir / (std::string(name) + ".src"));
  const auto tgt = read_lines(dir / (std::string(name) + ".tgt"));
  if (src.size() != tgt.size())
    throw AlignmentError(std::string(name) + ": " + std::to_string(src.size()) + " vs " +
                         std::to_string(tgt.size()) + " lines");
  ParallelCorpus c;
  for (std::size_t i = 0; i < src.size(); ++i)
    c.pairs.push_back({split_spaces(src[i]), split_spaces(tgt[i]), tag});
  return c;
}

}  // namespace

void save_dataset(const PartitionedDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  const ParallelCorpus* parts[] = {&data.labeled_a, &data.labeled_b, &data.unlabeled, &data.dev_a,
                                   &data.dev_b,     &data.test_a,    &data.test_b};
  Manifest m;
  for (std::size_t i = 0; i < std::size(kPartNames); ++i) {
    const std::string name(kPartNames[i]);
    write_corpus_files(*parts[i], dir / (name + ".src"), dir / (name + ".tgt"));
    m["count." + name] = std::to_string(parts[i]->size());
  }
  std::vector<std::string> truth;
  for (auto t : data.unlabeled_truth) truth.emplace_back(to_string(t));
  write_lines(truth, dir / "unlabeled.truth");
  m["format"] = "varmt-dataset 1";
  m["scenario"] = std::string(to_string(data.scenario));
  m["labeled_fraction"] = data.labeled_fraction.str();
  m["seed"] = std::to_string(data.seed);
  m["variety_a"] = data.labeled_a.variety_names[0];
  m["variety_b"] = data.labeled_a.variety_names[1];
  write_manifest(m, dir / "dataset.txt");
}

PartitionedDataset load_dataset(const fs::path& dir) {
  const Manifest m = read_manifest(dir / "dataset.txt");
  auto get = [&](const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("dataset manifest lacks '" + key + "'");
    return it->second;
  };
  if (get("format") != "varmt-dataset 1") throw FormatError("unsupported dataset format");
  PartitionedDataset d;
  d.scenario = parse_scenario(get("scenario"));
  d.labeled_fraction = parse_fraction(get("labeled_fraction"));
  d.seed = std::stoull(get("seed"));
  d.labeled_a = read_part(dir, "labeled_a", VarietyTag::A);
  d.labeled_b = read_part(dir, "labeled_b", VarietyTag::B);
  d.unlabeled = read_part(dir, "unlabeled", VarietyTag::Unlabeled);
  d.dev_a = read_part(dir, "dev_a", VarietyTag::A);
  d.dev_b = read_part(dir, "dev_b", VarietyTag::B);
  d.test_a = read_part(dir, "test_a", VarietyTag::A);
  d.test_b = read_part(dir, "test_b", VarietyTag::B);
  for (const auto& t : read_lines(dir / "unlabeled.truth")) d.unlabeled_truth.push_back(parse_variety_tag(t));
  if (d.unlabeled_truth.size() != d.unlabeled.size())
    throw FormatError("unlabeled.truth does not match unlabeled partition size");
  const std::array<std::string, 2> names{get("variety_a"), get("variety_b")};
  for (auto* c : {&d.labeled_a, &d.labeled_b, &d.unlabeled, &d.dev_a, &d.dev_b, &d.test_a, &d.test_b})
    c->variety_names = names;
  for (std::size_t i = 0; i < std::size(kPartNames); ++i) {
    const ParallelCorpus* parts[] = {&d.labeled_a, &d.labeled_b, &d.unlabeled, &d.dev_a,
                                     &d.dev_b,     &d.test_a,    &d.test_b};
    const std::string key = "count." + std::string(kPartNames[i]);
    if (std::to_string(parts[i]->size()) != get(key))
      throw FormatError("partition " + std::string(kPartNames[i]) + " count disagrees with manifest");
  }
  return d;
}

}  // namespace varmt
