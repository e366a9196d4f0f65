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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "varmt/corpus.hpp"
#include "varmt/error.hpp"

namespace varmt::cli {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("varmt_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Runs the command-line tool; stdout goes to `out` when given.
int varmt(const std::string& args, const fs::path& out = "/dev/null") {
  const std::string cmd = std::string(VARMT_CLI) + " " + args + " > " + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyConfig = R"([run]
seed = 5
[synth]
vocab_size = 30
pairs_a = 80
pairs_b = 80
divergence_rate = 0.3
dev_size = 8
test_size = 12
[subword]
vocab_size = 200
[classifier]
hash_buckets = 4096
embed_dim = 4
epochs = 2
[nmt]
num_layers = 1
model_dim = 16
num_heads = 2
ffn_dim = 32
total_steps = 12
checkpoint_every = 6
batch_tokens = 300
warmup_steps = 4
[decode]
beam_size = 2
[eval]
bootstrap_samples = 200
)";

TEST(RunConfig, SetGetAndUnknownKeys) {
  RunConfig c;
  c.set("nmt.model_dim", "32");
  EXPECT_EQ(c.model.model_dim, 32);
  EXPECT_EQ(c.get("nmt.model_dim"), "32");
  c.set("data.labeled_fraction", "1/2");
  EXPECT_EQ(c.get("data.labeled_fraction"), "1/2");
  EXPECT_THROW(c.set("nmt.bogus", "1"), ConfigError);
  EXPECT_THROW(c.get("nope"), ConfigError);
  EXPECT_THROW(c.set("nmt.model_dim", "abc"), ConfigError);
  EXPECT_EQ(c.get("recipe.name"), "mul");
  EXPECT_EQ(c.get("classifier.learning_rate"), c.get("classifier.learning_rate"));
}

TEST(RunConfig, IniRoundTrip) {
  RunConfig c;
  c.set("nmt.total_steps", "77");
  c.set("data.variety_a", "pt BR");
  c.set("recipe.name", "mc3");
  const auto dir = fresh_dir("ini");
  std::ofstream(dir / "run.ini") << c.to_ini();
  RunConfig back;
  back.load_file(dir / "run.ini");
  for (const auto& k : c.keys()) EXPECT_EQ(back.get(k), c.get(k)) << k;
  std::ofstream(dir / "bad.ini") << "[nmt]\nno_such_key = 1\n";
  EXPECT_THROW(RunConfig().load_file(dir / "bad.ini"), ConfigError);
}

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("exit");
  EXPECT_EQ(varmt(""), 1);
  EXPECT_EQ(varmt("no-such-command"), 1);
  EXPECT_EQ(varmt("translate --model x"), 1);
  EXPECT_EQ(varmt("--workspace " + dir.string() + " --set nmt.nope=3 synth"), 2);
  EXPECT_EQ(varmt("--workspace " + dir.string() + " train-classifier --data missing"), 2);
  EXPECT_EQ(varmt("--help"), 0);
}

TEST(Cli, SignificanceIsDeterministic) {
  const auto dir = fresh_dir("sig");
  write_lines({"a b c d", "e f g h", "i j k l"}, dir / "refs.txt");
  write_lines({"a b c d", "e f x h", "i j k l"}, dir / "x.txt");
  write_lines({"a b", "q f g h", "z"}, dir / "y.txt");
  const std::string args = "--workspace " + dir.string() +
                           " --set eval.bootstrap_samples=300 significance --system-a x.txt --system-b y.txt"
                           " --refs refs.txt --seed 7";
  ASSERT_EQ(varmt(args, dir / "one.txt"), 0);
  ASSERT_EQ(varmt(args, dir / "two.txt"), 0);
  EXPECT_EQ(slurp(dir / "one.txt"), slurp(dir / "two.txt"));
  EXPECT_NE(slurp(dir / "one.txt").find("seed = 7"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "significance" / "run.ini"));
}

TEST(Cli, PipelineProducesEveryArtifactAndIsReproducible) {
  const auto dir = fresh_dir("pipeline");
  std::ofstream(dir / "tiny.ini") << kTinyConfig;
  const std::string base = "--workspace " + dir.string() + " --config tiny.ini ";
  ASSERT_EQ(varmt(base + "--out-dir run1 pipeline --synthetic --recipe mc3 --scenario semi"), 0);
  ASSERT_EQ(varmt(base + "--out-dir run2 pipeline --synthetic --recipe mc3 --scenario semi"), 0);
  for (const char* f : {"synth/variants.tsv", "data/subword.bpe", "classifier/classifier.bin", "train/train.ids",
                        "train/train.prov", "model/model.ckpt", "model/selection.tsv", "eval/metrics.tsv",
                        "eval/hyp.test_a.txt", "run.ini", "manifest.txt"})
    EXPECT_TRUE(fs::exists(dir / "run1" / f)) << f;
  const auto metrics = slurp(dir / "run1" / "eval" / "metrics.tsv");
  EXPECT_EQ(metrics, slurp(dir / "run2" / "eval" / "metrics.tsv"));
  EXPECT_NE(metrics.find("mc3\ttest_b\tbleu"), std::string::npos);
  EXPECT_EQ(slurp(dir / "run1" / "model" / "model.ckpt"), slurp(dir / "run2" / "model" / "model.ckpt"));

  // The written configuration reproduces the run.
  RunConfig written;
  written.load_file(dir / "run1" / "run.ini");
  EXPECT_EQ(written.get("recipe.name"), "mc3");
  EXPECT_EQ(written.get("nmt.total_steps"), "12");

  // Stage-by-stage: the label stage records abstention.
  const std::string data = (dir / "run1" / "data").string();
  const std::string clf = (dir / "run1" / "classifier" / "classifier.bin").string();
  ASSERT_EQ(varmt(base + "--out-dir lab label --data " + data + " --classifier " + clf + " --mode mc3"), 0);
  const auto manifest = read_manifest(dir / "lab" / "manifest.txt");
  EXPECT_TRUE(manifest.count("abstention_rate"));

  // Translation of a file with a requested variety.
  write_lines({"hello world"}, dir / "in.txt");
  EXPECT_EQ(varmt(base + "--out-dir tr translate --model " + (dir / "run1" / "model" / "model.ckpt").string() +
                  " --subword " + data + "/subword.bpe --input in.txt --variety b"),
            0);
  EXPECT_TRUE(fs::exists(dir / "tr" / "translations.txt"));
  // A token-forced model needs a variety.
  EXPECT_EQ(varmt(base + "--out-dir tr2 translate --model " + (dir / "run1" / "model" / "model.ckpt").string() +
                  " --subword " + data + "/subword.bpe --input in.txt"),
            2);
}

TEST(Cli, HeldOutAucScoresVarietyBAsPositive) {
  const auto dir = fresh_dir("auc");
  const std::string base = "--workspace " + dir.string() +
                           " --seed 4 --set synth.vocab_size=40 --set synth.pairs_a=150 --set synth.pairs_b=150"
                           " --set synth.dev_size=15 --set classifier.hash_buckets=16384 --set classifier.epochs=5 ";
  ASSERT_EQ(varmt(base + "--out-dir syn synth"), 0);
  ASSERT_EQ(varmt(base + "--out-dir clf train-classifier --data " + (dir / "syn").string()), 0);
  const auto manifest = read_manifest(dir / "clf" / "manifest.txt");
  ASSERT_TRUE(manifest.count("held_out_roc_auc"));
  EXPECT_GT(std::stod(manifest.at("held_out_roc_auc")), 0.7);
}

TEST(Cli, DivergingTrainingExitsWithNumericCode) {
  const auto dir = fresh_dir("numeric");
  std::ofstream(dir / "tiny.ini") << kTinyConfig;
  EXPECT_EQ(varmt("--workspace " + dir.string() +
                  " --config tiny.ini --set nmt.peak_lr_factor=1e200 pipeline --synthetic --recipe gen"),
            3);
}

}  // namespace
}  // namespace varmt::cli
