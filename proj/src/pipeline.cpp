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

#include "varmt/pipeline.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "varmt/corpus.hpp"
#include "varmt/error.hpp"
#include "varmt/eval.hpp"
#include "varmt/nmt/checkpoint.hpp"
#include "varmt/recipes.hpp"
#include "varmt/subword.hpp"

namespace varmt::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// RunConfig

namespace {

std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
template <typename T>
  requires std::is_integral_v<T>
std::string format_value(T v) {
  return std::to_string(v);
}

template <typename T>
T parse_value(std::string_view text, const std::string& key) {
  const auto bad = [&] { return ConfigError("config key '" + key + "': cannot parse '" + std::string(text) + "'"); };
  if constexpr (std::is_same_v<T, std::string>) {
    return std::string(text);
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw bad();
  } else {
    T value{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), value);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size()) throw bad();
    return value;
  }
}

struct Field {
  std::string section;
  std::string name;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;

  std::string key() const { return section + "." + name; }
};

template <typename Access>
Field field(std::string section, std::string name, std::string doc, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  const std::string key = section + "." + name;
  return {std::move(section), std::move(name), std::move(doc),
          [access](const RunConfig& c) { return format_value(access(c)); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_value<T>(v, key); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field("run", "seed", "master seed; every random stream derives from it",
            [](auto& c) -> auto& { return c.seed; }),
      field("run", "threads", "worker threads (1 = sequential reference behaviour)",
            [](auto& c) -> auto& { return c.threads; }),

      field("data", "raw_dir", "directory with {train,dev,test}_{a,b}.{src,tgt}",
            [](auto& c) -> auto& { return c.raw_dir; }),
      field("data", "scenario", "supervised | unsupervised | semi", [](auto& c) -> auto& { return c.scenario; }),
      field("data", "labeled_fraction", "share of each variety kept labeled in the semi scenario (p/q)",
            [](auto& c) -> auto& { return c.labeled_fraction; }),
      field("data", "max_tokens", "drop training pairs longer than this many tokens",
            [](auto& c) -> auto& { return c.max_tokens; }),
      field("data", "transliterate", "Serbian Cyrillic to Latin on the target side: none | a | b | both",
            [](auto& c) -> auto& { return c.transliterate; }),
      field("data", "variety_a", "display name of variety A", [](auto& c) -> auto& { return c.variety_a; }),
      field("data", "variety_b", "display name of variety B", [](auto& c) -> auto& { return c.variety_b; }),

      field("synth", "vocab_size", "source lexicon size", [](auto& c) -> auto& { return c.synth.vocab_size; }),
      field("synth", "pairs_a", "training pairs in variety A", [](auto& c) -> auto& { return c.synth.n_pairs_a; }),
      field("synth", "pairs_b", "training pairs in variety B", [](auto& c) -> auto& { return c.synth.n_pairs_b; }),
      field("synth", "divergence_rate", "share of target words with variety-specific forms",
            [](auto& c) -> auto& { return c.synth.divergence_rate; }),
      field("synth", "min_len", "shortest sentence in words", [](auto& c) -> auto& { return c.synth.min_len; }),
      field("synth", "max_len", "longest sentence in words", [](auto& c) -> auto& { return c.synth.max_len; }),
      field("synth", "dev_size", "dev pairs per variety", [](auto& c) -> auto& { return c.synth.n_dev; }),
      field("synth", "test_size", "test pairs per variety", [](auto& c) -> auto& { return c.synth.n_test; }),

      field("subword", "vocab_size", "subword vocabulary size, special symbols included",
            [](auto& c) -> auto& { return c.subword_vocab; }),

      field("classifier", "word_ngram_max", "longest word n-gram feature",
            [](auto& c) -> auto& { return c.features.word_ngram_max; }),
      field("classifier", "char_ngram_min", "shortest character n-gram feature",
            [](auto& c) -> auto& { return c.features.char_ngram_min; }),
      field("classifier", "char_ngram_max", "longest character n-gram feature (0 disables)",
            [](auto& c) -> auto& { return c.features.char_ngram_max; }),
      field("classifier", "hash_buckets", "feature hash buckets",
            [](auto& c) -> auto& { return c.features.hash_buckets; }),
      field("classifier", "embed_dim", "feature embedding size", [](auto& c) -> auto& { return c.features.embed_dim; }),
      field("classifier", "epochs", "training epochs per member", [](auto& c) -> auto& { return c.classifier_epochs; }),
      field("classifier", "learning_rate", "initial SGD learning rate",
            [](auto& c) -> auto& { return c.classifier_lr; }),
      field("classifier", "data", "training sentences: auto | labeled | dev",
            [](auto& c) -> auto& { return c.classifier_data; }),

      field("recipe", "name", "gen | spec-a | spec-b | ada-a | ada-b | mul | mu | mc2 | mc3",
            [](auto& c) -> auto& { return c.recipe; }),

      field("nmt", "num_layers", "encoder and decoder layers", [](auto& c) -> auto& { return c.model.num_layers; }),
      field("nmt", "model_dim", "hidden size", [](auto& c) -> auto& { return c.model.model_dim; }),
      field("nmt", "num_heads", "attention heads", [](auto& c) -> auto& { return c.model.num_heads; }),
      field("nmt", "ffn_dim", "feed-forward inner size", [](auto& c) -> auto& { return c.model.ffn_dim; }),
      field("nmt", "dropout", "dropout rate", [](auto& c) -> auto& { return c.model.dropout; }),
      field("nmt", "max_positions", "longest sequence the model accepts",
            [](auto& c) -> auto& { return c.model.max_positions; }),
      field("nmt", "share_embeddings", "tie input embeddings and output projection",
            [](auto& c) -> auto& { return c.model.share_embeddings; }),
      field("nmt", "peak_lr_factor", "scale of the inverse square root schedule",
            [](auto& c) -> auto& { return c.training.peak_lr_factor; }),
      field("nmt", "warmup_steps", "linear warmup steps", [](auto& c) -> auto& { return c.training.warmup_steps; }),
      field("nmt", "batch_tokens", "tokens per batch", [](auto& c) -> auto& { return c.training.batch_tokens; }),
      field("nmt", "total_steps", "optimizer steps (the ada second stage runs half as many)",
            [](auto& c) -> auto& { return c.training.total_steps; }),
      field("nmt", "checkpoint_every", "steps between checkpoints",
            [](auto& c) -> auto& { return c.training.checkpoint_every; }),
      field("nmt", "label_smoothing", "label smoothing mass", [](auto& c) -> auto& { return c.training.label_smoothing; }),

      field("decode", "beam_size", "beam width (1 = greedy)", [](auto& c) -> auto& { return c.decode.beam_size; }),
      field("decode", "length_penalty", "length normalization exponent",
            [](auto& c) -> auto& { return c.decode.length_penalty; }),
      field("decode", "max_len", "output length cap (0 = 2 * source + 10)",
            [](auto& c) -> auto& { return c.decode.max_len; }),

      field("eval", "bootstrap_samples", "paired bootstrap resamples",
            [](auto& c) -> auto& { return c.bootstrap_samples; }),
      field("eval", "alpha", "significance level", [](auto& c) -> auto& { return c.alpha; }),
  };
  return all;
}

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key() == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string quote_if_needed(const std::string& v) {
  const bool plain = !v.empty() && v.find_first_of(" \t#;\"'=") == std::string::npos;
  return plain ? v : "\"" + v + "\"";
}

}  // namespace

RunConfig::RunConfig() { model.vocab_size = 0; }

void RunConfig::set(std::string_view key, std::string_view value) { find_field(key).set(*this, value); }

std::string RunConfig::get(std::string_view key) const { return find_field(key).get(*this); }

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key());
  return out;
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << "# " << f.doc << '\n' << f.name << " = " << quote_if_needed(f.get(*this)) << '\n';
  }
  return out.str();
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path.string());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (item.parents.empty()) throw ConfigError(path.string() + ": key '" + item.name + "' must sit inside a [section]");
    std::string key;
    for (const auto& p : item.parents) key += p + ".";
    key += item.name;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? " " : "") + item.inputs[i];
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct Context {
  RunConfig cfg;
  fs::path workspace;
  fs::path out;
  std::string stage;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : workspace / p; }
};

void log(const Context& ctx, const std::string& message) { std::cerr << "[" << ctx.stage << "] " << message << '\n'; }

// Writes the resolved config and a manifest naming every input, so the
// stage can be re-run from its output directory alone.
void finish_stage(const Context& ctx, const std::vector<std::pair<std::string, fs::path>>& inputs, Manifest facts) {
  fs::create_directories(ctx.out);
  write_file_atomic(ctx.out / "run.ini", ctx.cfg.to_ini());
  std::string rerun = "varmt " + ctx.stage + " --config " + (ctx.out / "run.ini").string() + " --workspace " +
                      ctx.workspace.string() + " --out-dir " + ctx.out.string();
  for (const auto& [flag, path] : inputs) {
    facts["input." + flag] = path.string();
    rerun += " --" + flag + " " + path.string();
  }
  facts["stage"] = ctx.stage;
  facts["config"] = "run.ini";
  facts["rerun"] = rerun;
  write_manifest(facts, ctx.out / "manifest.txt");
}

Context sub_context(const Context& parent, const std::string& stage, const std::string& dir) {
  Context c = parent;
  c.stage = stage;
  c.out = parent.out / dir;
  return c;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ParallelCorpus load_split(const fs::path& raw, const std::string& split, VarietyTag tag, const std::string& translit) {
  const std::string v = tag == VarietyTag::A ? "a" : "b";
  ParallelCorpus corpus = load_parallel(raw / (split + "_" + v + ".src"), raw / (split + "_" + v + ".tgt"), tag);
  if (translit == "both" || translit == v) {
    for (auto& p : corpus.pairs) p.target = tokenize(transliterate_sr_cyrillic_to_latin(join(p.target)));
  } else if (translit != "none" && translit != "a" && translit != "b") {
    throw ConfigError("data.transliterate must be none, a, b or both");
  }
  return corpus;
}

// prepare: raw corpora -> cleaned, partitioned dataset plus subword model.
void stage_prepare(const Context& ctx, const fs::path& raw) {
  const auto& c = ctx.cfg;
  const Scenario scenario = parse_scenario(c.scenario);
  const Fraction fraction = parse_fraction(c.labeled_fraction);
  auto clean = [&](const ParallelCorpus& corpus) {
    return deduplicate(filter_by_length(drop_empty(corpus), c.max_tokens));
  };
  const auto train_a = load_split(raw, "train", VarietyTag::A, c.transliterate);
  const auto train_b = load_split(raw, "train", VarietyTag::B, c.transliterate);
  auto data = partition(clean(train_a), clean(train_b), drop_empty(load_split(raw, "dev", VarietyTag::A, c.transliterate)),
                        drop_empty(load_split(raw, "dev", VarietyTag::B, c.transliterate)),
                        drop_empty(load_split(raw, "test", VarietyTag::A, c.transliterate)),
                        drop_empty(load_split(raw, "test", VarietyTag::B, c.transliterate)), scenario, fraction,
                        c.seed);
  for (auto* part : {&data.labeled_a, &data.labeled_b, &data.unlabeled, &data.dev_a, &data.dev_b, &data.test_a,
                     &data.test_b})
    part->variety_names = {c.variety_a, c.variety_b};
  const ParallelCorpus* parts[] = {&data.labeled_a, &data.labeled_b, &data.unlabeled};
  const SubwordModel subword = train_subword(parts, c.subword_vocab);

  save_dataset(data, ctx.out);
  subword.save(ctx.out / "subword.bpe");
  log(ctx, std::to_string(data.training_size()) + " training pairs (" + std::to_string(data.labeled_a.size()) + " A, " +
               std::to_string(data.labeled_b.size()) + " B, " + std::to_string(data.unlabeled.size()) +
               " unlabeled); subword vocabulary " + std::to_string(subword.vocab_size()));
  finish_stage(ctx, {{"raw-dir", raw}},
               {{"dropped_train_pairs", std::to_string(train_a.size() + train_b.size() - data.training_size())},
                {"subword_vocab", std::to_string(subword.vocab_size())},
                {"subword_fingerprint", std::to_string(subword.fingerprint())}});
}

void stage_synth(const Context& ctx) {
  SynthConfig s = ctx.cfg.synth;
  s.scenario = parse_scenario(ctx.cfg.scenario);
  s.labeled_fraction = parse_fraction(ctx.cfg.labeled_fraction);
  s.seed = ctx.cfg.seed;
  const SyntheticData synth = generate(s);
  save_synthetic(synth, ctx.out);
  log(ctx, std::to_string(synth.train_a.size() + synth.train_b.size()) + " training pairs, " +
               std::to_string(synth.lexicon.variants.size()) + " diverged words");
  finish_stage(ctx, {}, {{"diverged_words", std::to_string(synth.lexicon.variants.size())}});
}

std::vector<LabeledSentence> labeled_targets(const ParallelCorpus& a, const ParallelCorpus& b) {
  std::vector<LabeledSentence> out;
  for (const auto& p : a.pairs) out.push_back({join(p.target), VarietyTag::A});
  for (const auto& p : b.pairs) out.push_back({join(p.target), VarietyTag::B});
  return out;
}

double ensemble_auc(const VarietyEnsemble& ensemble, const std::vector<LabeledSentence>& held_out) {
  std::vector<double> scores;
  std::vector<VarietyTag> labels;
  for (const auto& s : held_out) {
    double b = 0.0;
    for (const auto& m : ensemble.member_probabilities(s.text)) b += m.b;
    scores.push_back(b / static_cast<double>(kEnsembleSize));
    labels.push_back(s.tag);
  }
  return roc_auc(scores, labels);
}

void stage_train_classifier(const Context& ctx, const fs::path& data_dir) {
  const auto& c = ctx.cfg;
  const PartitionedDataset data = load_dataset(data_dir);
  std::string source = c.classifier_data;
  if (source == "auto") source = data.labeled_a.empty() && data.labeled_b.empty() ? "dev" : "labeled";
  std::vector<LabeledSentence> train, held_out;
  if (source == "labeled") {
    train = labeled_targets(data.labeled_a, data.labeled_b);
    held_out = labeled_targets(data.dev_a, data.dev_b);
  } else if (source == "dev") {
    train = labeled_targets(data.dev_a, data.dev_b);
    held_out = labeled_targets(data.test_a, data.test_b);
  } else {
    throw ConfigError("classifier.data must be auto, labeled or dev");
  }
  const VarietyEnsemble ensemble =
      train_ensemble(train, c.features, c.classifier_epochs, c.classifier_lr, c.seed, c.threads);
  fs::create_directories(ctx.out);
  ensemble.save(ctx.out / "classifier.bin");
  Manifest facts{{"training_data", source}, {"training_sentences", std::to_string(train.size())}};
  if (!held_out.empty()) {
    const double auc = ensemble_auc(ensemble, held_out);
    facts["held_out_roc_auc"] = fixed(auc);
    log(ctx, "held-out ROC AUC " + fixed(auc, 4) + " on " + std::to_string(held_out.size()) + " sentences");
  }
  finish_stage(ctx, {{"data", data_dir}}, facts);
}

void save_training_set(const Context& ctx, const TrainingSet& set, const std::string& stem) {
  set.save(ctx.out / (stem + ".ids"), ctx.out / (stem + ".prov"));
}

Manifest training_set_facts(const TrainingSet& set, const SubwordModel& subword) {
  std::size_t unlabeled = 0, abstained = 0;
  for (const auto& p : set.provenance) {
    unlabeled += p.origin == Origin::Unlabeled;
    abstained += p.abstained;
  }
  return {{"recipe", set.recipe.str()},
          {"examples", std::to_string(set.examples.size())},
          {"unlabeled_examples", std::to_string(unlabeled)},
          {"abstained", std::to_string(abstained)},
          {"abstention_rate", fixed(set.abstention_rate)},
          {"subword_fingerprint", std::to_string(subword.fingerprint())}};
}

// build-dataset / label: one recipe's training examples with provenance.
void stage_build_dataset(const Context& ctx, const fs::path& data_dir, const std::optional<fs::path>& classifier,
                         const std::string& recipe_name) {
  const RecipeKind recipe = RecipeKind::parse(recipe_name);
  const PartitionedDataset data = load_dataset(data_dir);
  const SubwordModel subword = SubwordModel::load(data_dir / "subword.bpe");
  fs::create_directories(ctx.out);
  std::vector<std::pair<std::string, fs::path>> inputs{{"data", data_dir}};

  if (recipe.name == RecipeName::Ada) {
    const AdaPlan plan = ada_plan(data, recipe.variety, subword, ctx.cfg.seed, ctx.cfg.training.total_steps);
    save_training_set(ctx, plan.generic, "generic");
    save_training_set(ctx, plan.adapted, "adapted");
    Manifest facts = training_set_facts(plan.adapted, subword);
    facts["recipe"] = recipe.str();
    facts["generic_examples"] = std::to_string(plan.generic.examples.size());
    facts["generic_steps"] = std::to_string(plan.generic_steps);
    facts["adapted_steps"] = std::to_string(plan.adapted_steps);
    log(ctx, recipe.str() + ": " + std::to_string(plan.generic.examples.size()) + " generic, " +
                 std::to_string(plan.adapted.examples.size()) + " adaptation examples");
    finish_stage(ctx, inputs, facts);
    return;
  }

  std::optional<VarietyEnsemble> ensemble;
  if (classifier) {
    ensemble = VarietyEnsemble::load(*classifier);
    inputs.push_back({"classifier", *classifier});
  }
  const TrainingSet set =
      build_training_set(data, recipe, subword, ensemble ? &*ensemble : nullptr, ctx.cfg.seed, ctx.cfg.threads);
  save_training_set(ctx, set, "train");
  const Manifest facts = training_set_facts(set, subword);
  std::string message = recipe.str() + ": " + std::to_string(set.examples.size()) + " examples";
  if (recipe.name == RecipeName::MC3)
    message += "; abstained on " + facts.at("abstained") + " of " + facts.at("unlabeled_examples") +
               " unlabeled sentences (" + fixed(100.0 * set.abstention_rate, 2) + "%)";
  log(ctx, message);
  finish_stage(ctx, inputs, facts);
}

std::vector<DevSet> dev_sets(const PartitionedDataset& data, RecipeKind recipe, bool token_forced) {
  if (recipe.name == RecipeName::Spec || recipe.name == RecipeName::Ada)
    return {{recipe.variety == VarietyTag::B ? data.dev_b : data.dev_a, std::nullopt}};
  if (token_forced) return {{data.dev_a, VarietyTag::A}, {data.dev_b, VarietyTag::B}};
  return {{data.dev_a, std::nullopt}, {data.dev_b, std::nullopt}};
}

TranslationModel train_with_checkpoints(const Context& ctx, const TrainingSet& set, const TrainingConfig& tc,
                                        const TranslationModel* initial, const SubwordModel& subword,
                                        std::vector<TranslationModel>& checkpoints, std::vector<std::string>& loss_log,
                                        const std::string& phase) {
  TransformerConfig mc = ctx.cfg.model;
  mc.vocab_size = static_cast<int>(subword.vocab_size());
  fs::create_directories(ctx.out / "checkpoints");
  TrainingLog tlog;
  const auto sink = [&](const TranslationModel& m) {
    char name[64];
    std::snprintf(name, sizeof name, "step_%06lld.ckpt", static_cast<long long>(m.step));
    save_checkpoint(m, ctx.out / "checkpoints" / name);
    checkpoints.push_back(m);
    log(ctx, phase + " step " + std::to_string(m.step) + " checkpoint " + name);
  };
  const auto record_losses = [&] {
    for (std::size_t i = 0; i < tlog.step_loss.size(); ++i)
      loss_log.push_back(phase + "\t" + std::to_string(i + 1) + "\t" + fixed(tlog.step_loss[i]));
  };
  TranslationModel model;
  try {
    model = train(set.examples, mc, tc, sink, initial, &tlog, subword.fingerprint());
  } catch (const NumericError&) {
    record_losses();
    write_lines(loss_log, ctx.out / "train_log.tsv");
    throw;
  }
  record_losses();
  if (tlog.skipped) log(ctx, std::to_string(tlog.skipped) + " examples over the length limit were skipped");
  return model;
}

// train-nmt: trains one recipe, keeps every checkpoint, selects on dev.
void stage_train_nmt(const Context& ctx, const fs::path& data_dir, const fs::path& train_dir) {
  const PartitionedDataset data = load_dataset(data_dir);
  const SubwordModel subword = SubwordModel::load(data_dir / "subword.bpe");
  const Manifest built = read_manifest(train_dir / "manifest.txt");
  if (!built.count("recipe")) throw FormatError(train_dir.string() + "/manifest.txt: missing recipe");
  if (built.count("subword_fingerprint") && built.at("subword_fingerprint") != std::to_string(subword.fingerprint()))
    throw ConfigError("training set was built with a different subword model");
  const RecipeKind recipe = RecipeKind::parse(built.at("recipe"));

  TrainingConfig tc = ctx.cfg.training;
  tc.seed = ctx.cfg.seed;
  std::vector<TranslationModel> checkpoints;
  std::vector<std::string> loss_log{"phase\tstep\tloss"};
  TranslationModel final_model;
  if (recipe.name == RecipeName::Ada) {
    const TrainingSet generic = TrainingSet::load(train_dir / "generic.ids", train_dir / "generic.prov");
    const TrainingSet adapted = TrainingSet::load(train_dir / "adapted.ids", train_dir / "adapted.prov");
    std::vector<TranslationModel> stage1;
    const TranslationModel base =
        train_with_checkpoints(ctx, generic, tc, nullptr, subword, stage1, loss_log, "generic");
    TrainingConfig tc2 = tc;
    tc2.total_steps = std::max(1, tc.total_steps / 2);
    tc2.checkpoint_every = std::min(tc.checkpoint_every, tc2.total_steps);
    final_model = train_with_checkpoints(ctx, adapted, tc2, &base, subword, checkpoints, loss_log, "adapted");
  } else {
    const TrainingSet set = TrainingSet::load(train_dir / "train.ids", train_dir / "train.prov");
    final_model = train_with_checkpoints(ctx, set, tc, nullptr, subword, checkpoints, loss_log, "train");
  }
  write_lines(loss_log, ctx.out / "train_log.tsv");

  DecodeParams dp = ctx.cfg.decode;
  dp.threads = ctx.cfg.threads;
  const auto dev = dev_sets(data, recipe, final_model.token_forced);
  const CheckpointChoice choice = select_best_checkpoint(checkpoints, subword, dev, dp);
  const TranslationModel& best = checkpoints[choice.index];
  save_checkpoint(best, ctx.out / "model.ckpt");
  std::vector<std::string> selection{"step\tpooled_dev_bleu"};
  for (std::size_t i = 0; i < checkpoints.size(); ++i)
    selection.push_back(std::to_string(checkpoints[i].step) + "\t" + fixed(choice.all_pooled_bleu[i]));
  write_lines(selection, ctx.out / "selection.tsv");
  log(ctx, "selected step " + std::to_string(best.step) + " (pooled dev BLEU " + fixed(choice.pooled_bleu, 2) + ")");
  Manifest facts{{"recipe", recipe.str()},
                 {"selected_step", std::to_string(best.step)},
                 {"pooled_dev_bleu", fixed(choice.pooled_bleu)},
                 {"token_forced", best.token_forced ? "true" : "false"}};
  for (std::size_t i = 0; i < choice.per_set_bleu.size(); ++i)
    facts["dev_bleu." + std::to_string(i)] = fixed(choice.per_set_bleu[i]);
  finish_stage(ctx, {{"data", data_dir}, {"train", train_dir}}, facts);
}

std::vector<Tokens> read_tokenized(const fs::path& path) {
  std::vector<Tokens> out;
  for (const auto& line : read_lines(path)) out.push_back(tokenize(line));
  return out;
}

void write_tokenized(const std::vector<Tokens>& lines, const fs::path& path) {
  std::vector<std::string> text;
  text.reserve(lines.size());
  for (const auto& t : lines) text.push_back(join(t));
  write_lines(text, path);
}

void stage_translate(const Context& ctx, const fs::path& model_path, const fs::path& subword_path,
                     const fs::path& input, const std::optional<std::string>& variety) {
  const TranslationModel model = load_checkpoint(model_path);
  const SubwordModel subword = SubwordModel::load(subword_path);
  std::optional<VarietyTag> tag;
  if (variety) {
    tag = parse_variety_tag(*variety);
    if (*tag == VarietyTag::Unlabeled) tag.reset();
  }
  DecodeParams dp = ctx.cfg.decode;
  dp.threads = ctx.cfg.threads;
  const auto sources = read_tokenized(input);
  const auto hyps = translate_all(model, subword, sources, tag, dp);
  fs::create_directories(ctx.out);
  write_tokenized(hyps, ctx.out / "translations.txt");
  log(ctx, "translated " + std::to_string(hyps.size()) + " sentences");
  std::vector<std::pair<std::string, fs::path>> inputs{{"model", model_path}, {"subword", subword_path},
                                                       {"input", input}};
  Manifest facts{{"sentences", std::to_string(hyps.size())}};
  if (variety) facts["variety"] = *variety;
  finish_stage(ctx, inputs, facts);
}

// evaluate: decodes both test sets and reports BLEU and variety consistency.
void stage_evaluate(const Context& ctx, const fs::path& data_dir, const fs::path& model_path,
                    const std::optional<fs::path>& variants_path, const std::optional<fs::path>& classifier_path,
                    const std::string& system) {
  const PartitionedDataset data = load_dataset(data_dir);
  const SubwordModel subword = SubwordModel::load(data_dir / "subword.bpe");
  const TranslationModel model = load_checkpoint(model_path);
  std::optional<VariantTable> variants;
  std::optional<VarietyEnsemble> judge;
  std::vector<std::pair<std::string, fs::path>> inputs{{"data", data_dir}, {"model", model_path}};
  if (variants_path) {
    variants = VariantTable::load(*variants_path);
    inputs.push_back({"variants", *variants_path});
  }
  if (classifier_path) {
    judge = VarietyEnsemble::load(*classifier_path);
    inputs.push_back({"classifier", *classifier_path});
  }
  DecodeParams dp = ctx.cfg.decode;
  dp.threads = ctx.cfg.threads;
  fs::create_directories(ctx.out);

  std::vector<MetricRow> rows;
  BleuStats pooled;
  const std::pair<const ParallelCorpus*, VarietyTag> sets[] = {{&data.test_a, VarietyTag::A},
                                                               {&data.test_b, VarietyTag::B}};
  for (const auto& [corpus, tag] : sets) {
    if (corpus->empty()) continue;
    const std::string name = tag == VarietyTag::A ? "test_a" : "test_b";
    std::vector<Tokens> sources, refs;
    for (const auto& p : corpus->pairs) {
      sources.push_back(p.source);
      refs.push_back(p.target);
    }
    const auto requested = model.token_forced ? std::optional<VarietyTag>(tag) : std::nullopt;
    const auto hyps = translate_all(model, subword, sources, requested, dp);
    write_tokenized(hyps, ctx.out / ("hyp." + name + ".txt"));
    write_tokenized(refs, ctx.out / ("ref." + name + ".txt"));
    BleuStats stats;
    for (std::size_t i = 0; i < hyps.size(); ++i) stats += sentence_stats(hyps[i], refs[i]);
    pooled += stats;
    const BleuReport report = bleu_from_stats(stats);
    write_file_atomic(ctx.out / ("bleu." + name + ".txt"), bleu_report_text(report));
    rows.push_back({system, name, "bleu", report.bleu});
    if (variants) {
      try {
        rows.push_back({system, name, "variety_consistency", variety_consistency(hyps, *variants, tag)});
      } catch (const UndefinedMetricError& e) {
        log(ctx, name + ": " + e.what());
      }
    }
    if (judge) rows.push_back({system, name, "classifier_consistency", variety_consistency(hyps, *judge, tag)});
    log(ctx, name + " BLEU " + fixed(report.bleu, 2));
  }
  rows.push_back({system, "pooled", "bleu", bleu_from_stats(pooled).bleu});
  write_file_atomic(ctx.out / "metrics.tsv", metrics_tsv(rows));
  finish_stage(ctx, inputs, {{"system", system}, {"pooled_bleu", fixed(bleu_from_stats(pooled).bleu)}});
}

void stage_significance(const Context& ctx, const fs::path& x, const fs::path& y, const fs::path& refs_path) {
  const auto hx = read_tokenized(x);
  const auto hy = read_tokenized(y);
  const auto refs = read_tokenized(refs_path);
  const SignificanceResult r =
      paired_bootstrap(hx, hy, refs, ctx.cfg.bootstrap_samples, ctx.cfg.alpha, ctx.cfg.seed, ctx.cfg.threads);
  const std::string text = significance_text(r);
  fs::create_directories(ctx.out);
  write_file_atomic(ctx.out / "significance.txt", text);
  std::cout << text;
  finish_stage(ctx, {{"system-a", x}, {"system-b", y}, {"refs", refs_path}}, {{"p_value", fixed(r.p_value)}});
}

// pipeline: [synth ->] prepare -> train-classifier -> build-dataset -> train-nmt -> evaluate.
void stage_pipeline(const Context& ctx, bool synthetic) {
  fs::path raw = ctx.resolve(ctx.cfg.raw_dir);
  std::optional<fs::path> variants;
  if (synthetic) {
    const Context c = sub_context(ctx, "synth", "synth");
    stage_synth(c);
    raw = c.out / "raw";
    variants = c.out / "variants.tsv";
  }
  const Context prep = sub_context(ctx, "prepare", "data");
  stage_prepare(prep, raw);
  const RecipeKind recipe = RecipeKind::parse(ctx.cfg.recipe);
  std::optional<fs::path> classifier;
  if (recipe.name == RecipeName::MC2 || recipe.name == RecipeName::MC3) {
    const Context c = sub_context(ctx, "train-classifier", "classifier");
    stage_train_classifier(c, prep.out);
    classifier = c.out / "classifier.bin";
  }
  const Context build = sub_context(ctx, "build-dataset", "train");
  stage_build_dataset(build, prep.out, classifier, ctx.cfg.recipe);
  const Context nmt = sub_context(ctx, "train-nmt", "model");
  stage_train_nmt(nmt, prep.out, build.out);
  const Context eval = sub_context(ctx, "evaluate", "eval");
  stage_evaluate(eval, prep.out, nmt.out / "model.ckpt", variants, std::nullopt, recipe.str());
  finish_stage(ctx, synthetic ? std::vector<std::pair<std::string, fs::path>>{}
                              : std::vector<std::pair<std::string, fs::path>>{{"raw-dir", raw}},
               {{"recipe", recipe.str()}, {"synthetic", synthetic ? "true" : "false"},
                {"metrics", (eval.out / "metrics.tsv").string()}});
}

}  // namespace

// ---------------------------------------------------------------------------
// Command line

int run(int argc, char** argv) {
  CLI::App app{"varmt: neural machine translation into language varieties"};
  app.require_subcommand(1);
  std::string config_path, workspace = ".", out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "INI run configuration (relative to the workspace)");
  app.add_option("--workspace", workspace, "root directory for every relative path")->capture_default_str();
  app.add_option("--out-dir", out_dir, "stage output directory (default: out/<subcommand>)");
  app.add_option("--seed", seed, "overrides run.seed");
  app.add_option("--threads", threads, "overrides run.threads")->check(CLI::PositiveNumber);
  app.add_option("--set", overrides, "config override, section.name=value (repeatable)");

  std::string raw_dir, data_dir, train_dir, model_path, subword_path, input, classifier, variants, system;
  std::string recipe, scenario, mode, variety, sys_a, sys_b, refs;
  bool synthetic = false;
  auto sub = [&](const char* name, const char* help) {
    auto* s = app.add_subcommand(name, help);
    s->fallthrough();
    return s;
  };
  auto* prepare = sub("prepare", "clean and partition raw corpora, train the subword model");
  prepare->add_option("--raw-dir", raw_dir, "overrides data.raw_dir");
  auto* synth = sub("synth", "generate a synthetic two-variety corpus");
  auto* train_clf = sub("train-classifier", "train the variety classifier ensemble");
  train_clf->add_option("--data", data_dir, "prepared dataset directory")->required();
  auto* label = sub("label", "auto-label the unlabeled partition (mc2 or mc3)");
  label->add_option("--data", data_dir, "prepared dataset directory")->required();
  label->add_option("--classifier", classifier, "classifier.bin")->required();
  label->add_option("--mode", mode, "mc2 | mc3")->required()->check(CLI::IsMember({"mc2", "mc3"}));
  auto* build = sub("build-dataset", "assemble the training set of one recipe");
  build->add_option("--data", data_dir, "prepared dataset directory")->required();
  build->add_option("--classifier", classifier, "classifier.bin (mc2, mc3)");
  build->add_option("--recipe", recipe, "overrides recipe.name");
  auto* train_nmt = sub("train-nmt", "train a translation model and select a checkpoint");
  train_nmt->add_option("--data", data_dir, "prepared dataset directory")->required();
  train_nmt->add_option("--train", train_dir, "build-dataset output directory")->required();
  auto* translate_cmd = sub("translate", "translate a tokenized text file");
  translate_cmd->add_option("--model", model_path, "model checkpoint")->required();
  translate_cmd->add_option("--subword", subword_path, "subword model")->required();
  translate_cmd->add_option("--input", input, "one sentence per line")->required();
  translate_cmd->add_option("--variety", variety, "requested output variety: a | b");
  auto* evaluate = sub("evaluate", "decode the test sets and score them");
  evaluate->add_option("--data", data_dir, "prepared dataset directory")->required();
  evaluate->add_option("--model", model_path, "model checkpoint")->required();
  evaluate->add_option("--variants", variants, "variant table for lexical consistency");
  evaluate->add_option("--classifier", classifier, "classifier.bin for classifier-judged consistency");
  evaluate->add_option("--system", system, "system name in metrics.tsv");
  auto* significance = sub("significance", "paired bootstrap test between two systems");
  significance->add_option("--system-a", sys_a, "hypotheses of system A")->required();
  significance->add_option("--system-b", sys_b, "hypotheses of system B")->required();
  significance->add_option("--refs", refs, "references")->required();
  auto* pipeline = sub("pipeline", "run every stage for one recipe");
  pipeline->add_option("--recipe", recipe, "overrides recipe.name");
  pipeline->add_option("--scenario", scenario, "overrides data.scenario");
  pipeline->add_flag("--synthetic", synthetic, "generate synthetic data first");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  std::string stage = "varmt";
  for (auto* s : app.get_subcommands()) stage = s->get_name();
  try {
    Context ctx;
    ctx.stage = stage;
    ctx.workspace = workspace;
    if (!config_path.empty()) ctx.cfg.load_file(ctx.resolve(config_path));
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects section.name=value, got '" + o + "'");
      ctx.cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (seed) ctx.cfg.seed = *seed;
    if (threads) ctx.cfg.threads = *threads;
    if (!recipe.empty()) ctx.cfg.recipe = recipe;
    if (!scenario.empty()) ctx.cfg.scenario = scenario;
    if (!raw_dir.empty()) ctx.cfg.raw_dir = raw_dir;
    ctx.out = ctx.resolve(out_dir.empty() ? fs::path("out") / stage : fs::path(out_dir));
    const auto opt = [&](const std::string& p) { return p.empty() ? std::nullopt : std::optional<fs::path>(ctx.resolve(p)); };

    if (prepare->parsed()) stage_prepare(ctx, ctx.resolve(ctx.cfg.raw_dir));
    else if (synth->parsed()) stage_synth(ctx);
    else if (train_clf->parsed()) stage_train_classifier(ctx, ctx.resolve(data_dir));
    else if (label->parsed()) stage_build_dataset(ctx, ctx.resolve(data_dir), ctx.resolve(classifier), mode);
    else if (build->parsed()) stage_build_dataset(ctx, ctx.resolve(data_dir), opt(classifier), ctx.cfg.recipe);
    else if (train_nmt->parsed()) stage_train_nmt(ctx, ctx.resolve(data_dir), ctx.resolve(train_dir));
    else if (translate_cmd->parsed())
      stage_translate(ctx, ctx.resolve(model_path), ctx.resolve(subword_path), ctx.resolve(input),
                      variety.empty() ? std::nullopt : std::optional<std::string>(variety));
    else if (evaluate->parsed())
      stage_evaluate(ctx, ctx.resolve(data_dir), ctx.resolve(model_path), opt(variants), opt(classifier),
                     system.empty() ? ctx.cfg.recipe : system);
    else if (significance->parsed()) stage_significance(ctx, ctx.resolve(sys_a), ctx.resolve(sys_b), ctx.resolve(refs));
    else if (pipeline->parsed()) stage_pipeline(ctx, synthetic);
    return 0;
  } catch (const Error& e) {
    std::cerr << "varmt " << stage << ": error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "varmt " << stage << ": error: " << e.what() << '\n';
    return 2;
  } catch (const std::bad_alloc&) {
    std::cerr << "varmt " << stage << ": error: out of memory\n";
    return 3;
  }
}

}  // namespace varmt::cli
