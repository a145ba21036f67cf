#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "cpql/checkpoint.hpp"
#include "cpql/data.hpp"
#include "helpers.hpp"

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

// Runs the command-line tool with stdout and stderr captured to a file.
Outcome run_cli(const std::string& args) {
  const std::string log = testutil::temp_path("cli.log");
  const std::string cmd = std::string(CPQL_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  o.out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return o;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("gen-data writes a readable dataset") {
  const std::string out = testutil::temp_path("cli_d.cpd");
  const auto r = run_cli("gen-data --env bimodal-reach --behavior bimodal --n 10000 --out " + out + " --seed 7");
  CHECK(r.code == 0);
  CHECK(cpql::read_dataset(out).size() == 10000);
  CHECK(run_cli("gen-data --env bimodal-reach --behavior scripted-pd --n 10 --out " + out).code == 1);
}

TEST_CASE("train with a missing config exits 1 naming the path") {
  const auto r = run_cli("train --config /nonexistent/run.cfg");
  CHECK(r.code == 1);
  CHECK(r.out.find("/nonexistent/run.cfg") != std::string::npos);
}

TEST_CASE("unknown flags and subcommands exit 1") {
  CHECK(run_cli("train --bogus").code == 1);
  CHECK(run_cli("nosuch").code == 1);
  CHECK(run_cli("").code == 1);
}

TEST_CASE("train applies overrides, echoes them, and eval reads the checkpoint") {
  const std::string data = testutil::temp_path("cli_t.cpd");
  const std::string cfg = testutil::temp_path("cli_t.cfg");
  const std::string metrics = testutil::temp_path("cli_t.csv");
  const std::string ckpt = testutil::temp_path("cli_t.cpc");
  REQUIRE(run_cli("gen-data --env bimodal-reach --behavior bimodal --n 200 --out " + data).code == 0);
  {
    std::ofstream f(cfg);
    f << "setting = offline\nenv_name = bimodal-reach\nhidden = 8\nbatch_size = 16\n"
      << "total_iters = 4\neval_every = 2\neval_episodes = 3\n"
      << "dataset_path = " << data << "\nmetrics_path = " << metrics << "\ncheckpoint_path = " << ckpt << "\n";
  }
  const auto r = run_cli("train --config " + cfg + " --override alpha=0.25 --override eta=0");
  CHECK(r.code == 0);
  const std::string csv = slurp(metrics);
  CHECK(csv.find("# alpha=0.25\n") != std::string::npos);
  CHECK(csv.find("# eta=0\n") != std::string::npos);
  CHECK(r.out.find("iter=2 ") != std::string::npos);

  const auto e = run_cli("eval --checkpoint " + ckpt + " --env bimodal-reach --episodes 5");
  CHECK(e.code == 0);
  CHECK(e.out.find("eval_return_mean=") != std::string::npos);

  CHECK(run_cli("train --config " + cfg + " --override nosuch=1").code == 1);
  {
    std::ofstream f(ckpt, std::ios::binary);
    f << "garbage";
  }
  CHECK(run_cli("eval --checkpoint " + ckpt + " --env bimodal-reach --episodes 5").code == 2);
}
