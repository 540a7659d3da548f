#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "test_util.hpp"

using namespace titok;
using titok::testing::file_bytes;
using titok::testing::TempDir;
using titok::testing::tiny_config;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(TITOK_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {};
  CliRun r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string tiny_flags() {
  return "--model-dim 16 --layers 1 --heads 2 --code-dim 4 --codebook-size 16 --latent-tokens 4 --batch-size 4 "
         "--warmup-steps 1 --teacher-vocab 8";
}

}  // namespace

TEST(Cli, HelpListsSubcommandsAndDefaults) {
  const CliRun r = cli("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"synth-data", "train-tokenizer", "finetune-decoder", "train-generator", "tokenize", "detokenize",
                        "sample", "eval", "probe", "grad-check"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  EXPECT_NE(cli("sample --help").out.find("[8]"), std::string::npos);
  EXPECT_NE(cli("probe --help").out.find("[0.05]"), std::string::npos);
  EXPECT_NE(cli("synth-data --help").out.find("[64]"), std::string::npos);
  EXPECT_NE(cli("train-tokenizer --help").out.find("[arccos]"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("sample --steps").code, 1);
  EXPECT_EQ(cli("synth-data").code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
  TempDir dir("cli_missing");
  EXPECT_EQ(cli("eval --tokenizer " + (dir / "none").string() + " --data " + (dir / "none").string()).code, 2);
  std::ofstream(dir / "bad.json") << R"({"colour": 1})";
  EXPECT_EQ(cli("train-tokenizer --data x --out y --config " + (dir / "bad.json").string()).code, 2);
}

TEST(Cli, SynthDataIsSeeded) {
  TempDir dir("cli_synth");
  ASSERT_EQ(cli("synth-data --out " + (dir / "a").string() + " --count 5 --seed 3").code, 0);
  ASSERT_EQ(cli("synth-data --out " + (dir / "b").string() + " --count 5 --seed 3").code, 0);
  ASSERT_EQ(cli("synth-data --out " + (dir / "c").string() + " --count 5 --seed 4").code, 0);
  EXPECT_EQ(file_bytes(dir / "a" / "img_000002.ppm"), file_bytes(dir / "b" / "img_000002.ppm"));
  EXPECT_EQ(file_bytes(dir / "a" / "manifest.csv"), file_bytes(dir / "b" / "manifest.csv"));
  EXPECT_NE(file_bytes(dir / "a" / "img_000002.ppm"), file_bytes(dir / "c" / "img_000002.ppm"));
}

TEST(Cli, TokenizerRoundTrip) {
  TempDir dir("cli_tok");
  const std::string d = dir.path().string();
  ASSERT_EQ(cli("synth-data --out " + d + "/data --count 8").code, 0);
  const CliRun train = cli("train-tokenizer --data " + d + "/data --out " + d + "/tok --total-steps 3 --precision f64 " +
                        tiny_flags());
  ASSERT_EQ(train.code, 0);
  EXPECT_EQ(train.out.rfind("step,loss,lr\n", 0), 0u);
  ASSERT_EQ(cli("finetune-decoder --data " + d + "/data --tokenizer " + d + "/tok --out " + d + "/ft --steps 2").code, 0);
  ASSERT_EQ(cli("tokenize --tokenizer " + d + "/ft --image " + d + "/data/img_000001.ppm --out " + d + "/t.tok").code, 0);
  const TokenIds t = read_token_file(dir / "t.tok");
  EXPECT_EQ(t.ids.size(), 4u);
  EXPECT_EQ(t.codebook_size, 16);
  ASSERT_EQ(cli("detokenize --tokenizer " + d + "/ft --tokens " + d + "/t.tok --out " + d + "/r.ppm").code, 0);
  EXPECT_EQ(load_ppm(dir / "r.ppm").height, 32);
  const CliRun ev = cli("eval --tokenizer " + d + "/ft --data " + d + "/data");
  ASSERT_EQ(ev.code, 0);
  EXPECT_NE(ev.out.find("mse,"), std::string::npos);
  EXPECT_NE(ev.out.find("codebook_perplexity,"), std::string::npos);
  // The proxy-stage checkpoint is still a valid tokenizer for tokenize.
  EXPECT_EQ(cli("tokenize --tokenizer " + d + "/tok --image " + d + "/data/img_000001.ppm --out " + d + "/p.tok").code, 0);
  EXPECT_EQ(read_token_file(dir / "p.tok"), t);
}

TEST(Cli, SampleGuidanceZeroMatchesNoGuidanceAndSeedIsHonored) {
  TempDir dir("cli_sample");
  const std::string d = dir.path().string();
  auto g = GeneratorState<float>::create(tiny_config(), 4);
  save_checkpoint(to_checkpoint(g), dir / "gen");
  const std::string base = "sample --generator " + d + "/gen --class 1 --temperature 1 --steps 3 ";
  ASSERT_EQ(cli(base + "--guidance 0 --seed 5 --out " + d + "/a.tok").code, 0);
  ASSERT_EQ(cli(base + "--no-guidance --seed 5 --out " + d + "/b.tok --diagnostics " + d + "/diag.csv").code, 0);
  ASSERT_EQ(cli(base + "--guidance 0 --seed 5 --out " + d + "/c.tok").code, 0);
  EXPECT_EQ(file_bytes(dir / "a.tok"), file_bytes(dir / "b.tok"));
  EXPECT_EQ(file_bytes(dir / "a.tok"), file_bytes(dir / "c.tok"));
  bool differs = false;
  for (int s = 6; s < 12 && !differs; ++s) {
    ASSERT_EQ(cli(base + "--seed " + std::to_string(s) + " --out " + d + "/s.tok").code, 0);
    differs = file_bytes(dir / "s.tok") != file_bytes(dir / "a.tok");
  }
  EXPECT_TRUE(differs);
  std::ifstream diag(dir / "diag.csv");
  std::string header;
  std::getline(diag, header);
  EXPECT_EQ(header, "step,masked_count,min_conf,max_conf");
  EXPECT_EQ(cli("sample --generator " + d + "/gen --class 9 --out " + d + "/x.tok").code, 2);
}
