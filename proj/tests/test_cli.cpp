#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vlp/harness.hpp"

using namespace vlp;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("cli");

namespace {

const std::string kTool = VLP_TOOL_PATH;

int run(const std::string& args) {
  std::string cmd = kTool + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// micro settings shared by the CLI pipeline checks
const std::string kTinyData =
    " --set data.n_samples=60 --set data.image_size=32 --set data.max_len=16"
    " --set data.frac_train=0.8 --set data.frac_val=0.0 --set data.frac_test=0.2";
const std::string kTinyModel =
    " --set model.vision_channels=4,8 --set model.embed_dim=8"
    " --set model.text_width=16 --set model.text_heads=2 --set model.text_blocks=1"
    " --set model.fusion_layers=1 --set model.fusion_heads=2";
const std::string kTinyTrain =
    " --set train.phase1_epochs=1 --set train.phase2_epochs=1 --set train.batch_size=8";

struct TestDirs {
  fs::path root;
  std::string corpus;
  std::string run;
  TestDirs() {
    root = fs::temp_directory_path() / "vlp_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    corpus = (root / "corpus").string();
    run = (root / "run").string();
  }
  ~TestDirs() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("gen-data writes a complete corpus with the right manifest count") {
  TestDirs dirs;
  int rc = run("gen-data --corpus-dir " + dirs.corpus + kTinyData);
  REQUIRE(rc == 0);
  CHECK(fs::exists(dirs.corpus + "/meta.json"));
  CHECK(fs::exists(dirs.corpus + "/vocab.txt"));
  CHECK(fs::exists(dirs.corpus + "/images_train.bin"));
  CHECK(fs::exists(dirs.corpus + "/config.resolved.ini"));
  std::ifstream mf(dirs.corpus + "/manifest_train.tsv");
  std::string line;
  int rows = 0;
  while (std::getline(mf, line))
    if (!line.empty() && line[0] != '#') ++rows;
  CHECK(rows == 48);  // 0.8 x 60
}

TEST_CASE("bad config key yields a usage error exit") {
  TestDirs dirs;
  CHECK(run("gen-data --corpus-dir " + dirs.corpus + " --set data.bogus=1") == 2);
}

TEST_CASE("probe before pretrain is a sequencing error") {
  TestDirs dirs;
  REQUIRE(run("gen-data --corpus-dir " + dirs.corpus + kTinyData) == 0);
  int rc = run("probe --corpus-dir " + dirs.corpus + " --checkpoint " + dirs.run +
               "/checkpoints/ckpt_final.bin --run-dir " + dirs.run + kTinyData + kTinyModel);
  CHECK(rc == 3);
}

TEST_CASE("full pipeline: pretrain, eval-retrieval, probe, vqa, report") {
  TestDirs dirs;
  std::string common = kTinyData + kTinyModel + kTinyTrain;
  REQUIRE(run("gen-data --corpus-dir " + dirs.corpus + common) == 0);
  REQUIRE(run("pretrain --corpus-dir " + dirs.corpus + " --run-dir " + dirs.run + common) == 0);
  CHECK(fs::exists(dirs.run + "/metrics.jsonl"));
  CHECK(fs::exists(dirs.run + "/timings.log"));
  CHECK(fs::exists(dirs.run + "/config.resolved.ini"));
  std::string ckpt = dirs.run + "/checkpoints/ckpt_final.bin";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(dirs.run + "/checkpoints/ckpt_phase1.bin"));

  std::string evalargs = " --set eval.recall_ks=1,5 --set eval.probe_epochs=30" +
                         std::string(" --set eval.vqa_epochs=1 --set eval.vqa_batch_size=8");
  REQUIRE(run("eval-retrieval --corpus-dir " + dirs.corpus + " --checkpoint " + ckpt +
              " --run-dir " + dirs.run + common + evalargs) == 0);
  CHECK(fs::exists(dirs.run + "/retrieval.json"));
  REQUIRE(run("probe --corpus-dir " + dirs.corpus + " --checkpoint " + ckpt + " --run-dir " +
              dirs.run + common + evalargs) == 0);
  CHECK(fs::exists(dirs.run + "/probe.json"));
  REQUIRE(run("vqa --corpus-dir " + dirs.corpus + " --checkpoint " + ckpt + " --run-dir " +
              dirs.run + common + evalargs) == 0);
  CHECK(fs::exists(dirs.run + "/vqa.json"));

  REQUIRE(run("report --run-dir " + dirs.run) == 0);
  std::string report = slurp(dirs.run + "/report.txt");
  REQUIRE(!report.empty());
  // every loss field name appears exactly once in the summary header
  std::istringstream rs(report);
  std::string line, header;
  while (std::getline(rs, line))
    if (line.find("itc_pert_image") != std::string::npos) {
      header = line;
      break;
    }
  REQUIRE(!header.empty());
  for (const char* field : {"itc", "itc_pert_image", "itc_pert_text", "i2i", "mlm", "total"}) {
    std::istringstream hs(header);
    std::string tok;
    int count = 0;
    while (hs >> tok) count += tok == field ? 1 : 0;
    CHECK(count == 1);
  }
}

TEST_CASE("report is a pure function of the run directory") {
  TestDirs dirs;
  std::string common = kTinyData + kTinyModel + kTinyTrain;
  REQUIRE(run("gen-data --corpus-dir " + dirs.corpus + common) == 0);
  REQUIRE(run("pretrain --corpus-dir " + dirs.corpus + " --run-dir " + dirs.run + common) == 0);
  std::string a = make_report(dirs.run);
  std::string b = make_report(dirs.run);
  CHECK(a == b);
}

TEST_SUITE_END();
