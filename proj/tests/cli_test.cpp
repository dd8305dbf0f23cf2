#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "relic/io_util.hpp"

// end-to-end checks driving the relic binary the way a user would

namespace fs = std::filesystem;
using relic::read_file;

namespace {

const std::string kBin = RELIC_BIN;

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("relic_cli_" + std::to_string(std::rand()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args, const std::string& stdout_path = "/dev/null") {
  const std::string cmd = kBin + " " + args + " > " + stdout_path + " 2>/dev/null";
  return std::system(cmd.c_str());
}

nlohmann::json run_json(const std::string& args, const Workspace& ws) {
  const std::string out = ws.path("stdout.json");
  const int rc = run(args, out);
  REQUIRE(rc == 0);
  return nlohmann::json::parse(read_file(out));
}

}  // namespace

TEST_CASE("gen-synthetic writes five dataset files and a manifest") {
  Workspace ws;
  const std::string out = ws.path("data");
  REQUIRE(run("gen-synthetic --out " + out + " --entities 12 --types 6 --contexts 3") == 0);
  for (const char* f :
       {"corpus.jsonl", "labels.jsonl", "categories.jsonl", "qa.jsonl", "alias.jsonl",
        "manifest.json"})
    CHECK(fs::exists(fs::path(out) / f));
}

TEST_CASE("gen-synthetic is reproducible and validates its spec") {
  Workspace ws;
  REQUIRE(run("gen-synthetic --out " + ws.path("a") + " --entities 9 --seed 4") == 0);
  REQUIRE(run("gen-synthetic --out " + ws.path("b") + " --entities 9 --seed 4") == 0);
  CHECK(read_file(ws.path("a") + "/corpus.jsonl") == read_file(ws.path("b") + "/corpus.jsonl"));
  CHECK(read_file(ws.path("a") + "/qa.jsonl") == read_file(ws.path("b") + "/qa.jsonl"));

  // invalid spec: nonzero exit
  CHECK(run("gen-synthetic --out " + ws.path("c") + " --entities 5 --types 2 "
            "--types-per-entity 3") != 0);
}

TEST_CASE("train smoke run emits checkpoint, metrics and manifest") {
  Workspace ws;
  REQUIRE(run("gen-synthetic --out " + ws.path("d") + " --entities 10 --contexts 4") == 0);
  auto j = run_json("train --corpus " + ws.path("d") + "/corpus.jsonl --out " +
                        ws.path("m") + " --set total_steps=8 --set batch_size=8 "
                        "--set hidden=16 --set layers=1 --set ff_size=32 --set d=8",
                    ws);
  CHECK(j.at("steps").get<int>() == 8);
  for (const char* ext : {".rlck", ".relc", ".meta.json", ".metrics.csv", ".manifest.json"})
    CHECK(fs::exists(ws.path("m") + ext));

  // metrics CSV has the documented header
  std::ifstream is(ws.path("m") + ".metrics.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "step,lr,loss,mean_rank,accuracy");
}

TEST_CASE("train with zero steps checkpoints the initialization reproducibly") {
  Workspace ws;
  REQUIRE(run("gen-synthetic --out " + ws.path("d") + " --entities 8 --contexts 3") == 0);
  const std::string common = "train --corpus " + ws.path("d") +
                             "/corpus.jsonl --set total_steps=0 --set batch_size=4 "
                             "--set hidden=16 --set layers=1 --set ff_size=32 --set d=8 ";
  REQUIRE(run(common + "--out " + ws.path("z1")) == 0);
  REQUIRE(run(common + "--out " + ws.path("z2")) == 0);
  CHECK(read_file(ws.path("z1") + ".rlck") == read_file(ws.path("z2") + ".rlck"));
  CHECK(read_file(ws.path("z1") + ".relc") == read_file(ws.path("z2") + ".relc"));
}

TEST_CASE("interval checkpoints appear beside the final one") {
  Workspace ws;
  REQUIRE(run("gen-synthetic --out " + ws.path("d") + " --entities 8 --contexts 4") == 0);
  REQUIRE(run("train --corpus " + ws.path("d") + "/corpus.jsonl --out " + ws.path("m") +
              " --set total_steps=8 --set batch_size=8 --set checkpoint_interval=4 "
              "--set hidden=16 --set layers=1 --set ff_size=32 --set d=8") == 0);
  CHECK(fs::exists(ws.path("m") + ".step4.rlck"));
  CHECK(fs::exists(ws.path("m") + ".rlck"));
  CHECK_FALSE(fs::exists(ws.path("m") + ".step8.rlck"));  // final save owns the end
}

TEST_CASE("nn prints the queried entity first at score one") {
  Workspace ws;
  REQUIRE(run("gen-synthetic --out " + ws.path("d") + " --entities 8 --contexts 3") == 0);
  REQUIRE(run("train --corpus " + ws.path("d") + "/corpus.jsonl --out " + ws.path("m") +
              " --set total_steps=4 --set batch_size=4 --set hidden=16 --set layers=1 "
              "--set ff_size=32 --set d=8") == 0);
  const std::string out = ws.path("nn.txt");
  REQUIRE(run("nn --checkpoint " + ws.path("m") + " --id E0003 --k 1", out) == 0);
  std::string line = read_file(out);
  CHECK(line.rfind("E0003 1.000000", 0) == 0);
}

TEST_CASE("eval commands fail cleanly on broken inputs") {
  Workspace ws;
  REQUIRE(run("gen-synthetic --out " + ws.path("d") + " --entities 8 --contexts 3") == 0);
  REQUIRE(run("train --corpus " + ws.path("d") + "/corpus.jsonl --out " + ws.path("m") +
              " --set total_steps=4 --set batch_size=4 --set hidden=16 --set layers=1 "
              "--set ff_size=32 --set d=8") == 0);
  // empty labels file
  relic::write_file(ws.path("empty.jsonl"), "");
  CHECK(run("eval-typing --checkpoint " + ws.path("m") + " --labels " +
            ws.path("empty.jsonl")) != 0);
  // missing checkpoint
  CHECK(run("eval-category --checkpoint " + ws.path("nope") + " --categories " +
            ws.path("d") + "/categories.jsonl") != 0);
}

TEST_CASE("ablate-mask deduplicates rates and reports one row per run") {
  Workspace ws;
  REQUIRE(run("gen-synthetic --out " + ws.path("d") + " --entities 10 --types 4 "
              "--types-per-entity 2 --contexts 4") == 0);
  auto j = run_json("ablate-mask --corpus " + ws.path("d") + "/corpus.jsonl --labels " +
                        ws.path("d") + "/labels.jsonl --rates 0.5,0.5 --seeds 1 --out " +
                        ws.path("abl.csv") +
                        " --set total_steps=4 --set batch_size=8 --set hidden=16 "
                        "--set layers=1 --set ff_size=32 --set d=8",
                    ws);
  CHECK(j.size() == 1);  // duplicate rate collapsed
  std::string csv = read_file(ws.path("abl.csv"));
  CHECK(csv.rfind("rate,seed,linking_accuracy,typing_map", 0) == 0);
}
