// End-to-end runs of the dslab binary on a small synthetic corpus.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dslab/analysis.hpp"
#include "dslab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "dslab_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  std::string cmd = std::string(DSLAB_CLI) + " " + args + " 2>>" + (work() / "stderr.log").string();
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string p(const std::string& name) { return (work() / name).string(); }

json read_json(const std::string& path) {
  std::ifstream f(path);
  return json::parse(f);
}

std::size_t count_lines(const std::string& path) {
  std::ifstream f(path);
  std::size_t n = 0;
  std::string l;
  while (std::getline(f, l)) n += !l.empty();
  return n;
}

}  // namespace

// The steps share files, so they run in order inside one test.
TEST(Cli, Pipeline) {
  ASSERT_EQ(run("synth --out " + p("syn") + " --docs 300 --task-train 40 --task-validation 20 --seed 3"), 0);
  EXPECT_EQ(count_lines(p("syn/documents.jsonl")), 300u);

  ASSERT_EQ(run("build-vocab --transcripts " + p("syn/transcripts.txt") + " --stoplist " + p("syn/stoplist.txt") +
                " --out " + p("vocab.txt")),
            0);
  ASSERT_GT(count_lines(p("vocab.txt")), 10u);

  ASSERT_EQ(run("filter --docs " + p("syn/documents.jsonl") + " --vocab " + p("vocab.txt") +
                " --span-size 20 --stride 10 --dev 20 --test 20 --out " + p("spans")),
            0);
  EXPECT_EQ(count_lines(p("spans/dev.jsonl")), 20u);
  EXPECT_GT(count_lines(p("spans/train.jsonl")), 100u);

  ASSERT_EQ(run("train-tokenizer --spans " + p("spans/train.jsonl") + " --vocab-size 320 --out " + p("tok.json")), 0);

  {
    std::ofstream f(p("cfg.json"));
    f << R"({"E":16,"H":16,"I":32,"L":1,"A":2,"S":32})";
  }
  ASSERT_EQ(run("pretrain --config " + p("cfg.json") + " --tokenizer " + p("tok.json") + " --train " +
                p("spans/train.jsonl") + " --eval " + p("spans/dev.jsonl") +
                " --steps 60 --batch 4 --lr 1e-3 --log-every 20 --checkpoints --run-id r1 --out " + p("runs")),
            0);
  auto log = dslab::load_runlog(p("runs/r1.csv"));
  ASSERT_EQ(log.records.size(), 3u);
  EXPECT_EQ(log.records.back().step, 60);
  EXPECT_LT(log.records.back().eval_loss, log.initial_eval_loss);
  EXPECT_TRUE(fs::exists(p("runs/r1/step_60.ckpt")));
  EXPECT_TRUE(fs::exists(p("runs/r1.final.ckpt")));

  ASSERT_EQ(run("finetune --checkpoint " + p("runs/r1.final.ckpt") + " --tokenizer " + p("tok.json") +
                " --task-train " + p("syn/task_train.jsonl") + " --task-validation " +
                p("syn/task_validation.jsonl") + " --epochs 1 --batch 8 --lr 1e-4 --seeds 0 --out " + p("ft.json")),
            0);
  EXPECT_TRUE(read_json(p("ft.json")).is_object());
  EXPECT_NE(run("finetune --checkpoint " + p("runs/r1.final.ckpt") + " --tokenizer " + p("tok.json") +
                " --task-train " + p("syn/task_train.jsonl") + " --task-validation " +
                p("syn/task_validation.jsonl") + " --lr 1e-2"),
            0);

  ASSERT_EQ(run("frontier --runs " + p("runs/r1.csv") + " --bins 4 --out " + p("front.csv")), 0);
  {
    std::ifstream f(p("front.csv"));
    auto pts = dslab::read_frontier_csv(f);
    ASSERT_GE(pts.size(), 3u);
    ASSERT_EQ(run("fit --frontier " + p("front.csv") + " --out " + p("fit.json")), 0);
    auto j = read_json(p("fit.json"));
    EXPECT_LT(j["e"].get<double>(), 0.0);
  }

  ASSERT_EQ(run("report --runs " + p("runs/r1.csv") + " --bins 4 --out " + p("report")), 0);
  EXPECT_TRUE(fs::exists(p("report/loss_vs_flops.svg")));
}

TEST(Cli, GridAndFlops) {
  ASSERT_EQ(run("grid --out " + p("grid.json")), 0);
  EXPECT_EQ(read_json(p("grid.json")).size(), 16u);
  {
    std::ofstream f(p("anchor.json"));
    f << R"({"E":256,"H":256,"I":1024,"L":8,"A":8})";
  }
  EXPECT_EQ(run("flops --config " + p("anchor.json") + " > " + p("flops.json")), 0);
  auto j = read_json(p("flops.json"));
  EXPECT_GT(j.size(), 0u);
}

TEST(Cli, CorrelateAndIcer) {
  {
    std::ofstream f(p("pairs.csv"));
    f << "ppl,acc\n10,0.5\n8,0.6\n7,0.65\n6,0.7\n5.5,0.72\n";
  }
  ASSERT_EQ(run("correlate --input " + p("pairs.csv") + " --x ppl --y acc --out " + p("rho.json")), 0);
  EXPECT_DOUBLE_EQ(read_json(p("rho.json"))["rho"].get<double>(), -1.0);
  {
    std::ofstream f(p("ladder.csv"));
    f << "E,H,I,L,A,perplexity,flops\n64,64,256,2,2,10.42,42e15\n64,128,256,2,2,7.56,50e15\n";
  }
  ASSERT_EQ(run("icer --ladder " + p("ladder.csv") + " --out " + p("icer.csv")), 0);
  std::ifstream f(p("icer.csv"));
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  EXPECT_NE(row.find("0.3575"), std::string::npos) << row;
}

TEST(Cli, ErrorsExitNonZero) {
  EXPECT_NE(run("frontier --runs /nonexistent.csv"), 0);
  EXPECT_NE(run("no-such-command"), 0);
  {
    std::ofstream f(p("const.csv"));
    f << "a,b\n1,1\n1,2\n1,3\n";
  }
  EXPECT_NE(run("correlate --input " + p("const.csv") + " --x a --y b"), 0);
}
