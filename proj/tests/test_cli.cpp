#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  fs::path log = fs::temp_directory_path() / "fedsim_cli_out.txt";
  std::string cmd =
      std::string(FEDSIM_BIN) + " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  CmdResult result;
  result.exit_code = WEXITSTATUS(status);
  std::ifstream in(log);
  result.output.assign((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  return result;
}

fs::path write_config(const std::string& name, const std::string& text) {
  fs::path path = fs::temp_directory_path() / name;
  std::ofstream out(path, std::ios::trunc);
  out << text;
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

size_t count_lines_starting_with_digit(const std::string& text) {
  size_t count = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t pos = line.find_first_not_of(' ');
    if (pos != std::string::npos && isdigit(line[pos]) &&
        line.find('|') != std::string::npos)
      ++count;
  }
  return count;
}

const char* kTinyRun =
    "clients = 2\n"
    "rounds = 2\n"
    "local_epochs = 1\n"
    "batch_size = 32\n"
    "seed = 11\n";

}  // namespace

TEST_CASE("usage and config errors exit with code 2") {
  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("simulate /nonexistent/config.txt").exit_code == 2);

  fs::path zero_rounds = write_config("fedsim_zero_rounds.cfg",
                                      "rounds = 0\n");
  CmdResult r = run_cli("simulate " + zero_rounds.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("rounds") != std::string::npos);

  fs::path unknown = write_config("fedsim_unknown.cfg", "frob = 3\n");
  CmdResult u = run_cli("simulate " + unknown.string());
  CHECK(u.exit_code == 2);
  CHECK(u.output.find("unknown config key") != std::string::npos);

  fs::path net = write_config("fedsim_netsim.cfg", "transport = net\n");
  CHECK(run_cli("simulate " + net.string()).exit_code == 2);

  fs::path sim = write_config("fedsim_simserve.cfg", "transport = sim\n");
  CHECK(run_cli("serve " + sim.string()).exit_code == 2);
  CHECK(run_cli("join " + sim.string() + " 1").exit_code == 2);
}

TEST_CASE("simulate produces the documented output tree and is repeatable") {
  fs::path out = fs::temp_directory_path() / "fedsim_cli_run";
  fs::remove_all(out);
  fs::path cfg = write_config(
      "fedsim_tiny.cfg", std::string(kTinyRun) + "out_dir = " + out.string() + "\n");

  CmdResult r = run_cli("simulate " + cfg.string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("best round") != std::string::npos);

  CHECK(fs::exists(out / "rounds.csv"));
  CHECK(fs::exists(out / "global.csv"));
  CHECK(fs::exists(out / "summary.txt"));
  CHECK(fs::exists(out / "run_config.txt"));
  CHECK(fs::exists(out / "confusion_r2_c2.csv"));
  // One checkpoint per round 1..R.
  size_t checkpoints = 0;
  for (const auto& entry : fs::directory_iterator(out / "checkpoints"))
    if (entry.path().extension() == ".fedw") ++checkpoints;
  CHECK(checkpoints == 2);
  CHECK(fs::exists(out / "checkpoints" / "global_r1.fedw"));
  CHECK(fs::exists(out / "checkpoints" / "global_r2.fedw"));

  std::string summary = slurp(out / "summary.txt");
  std::string rounds_csv = slurp(out / "rounds.csv");
  CHECK(summary.find("rounds = 2") != std::string::npos);
  bool best_in_range = summary.find("best_round = 1") != std::string::npos ||
                       summary.find("best_round = 2") != std::string::npos;
  CHECK(best_in_range);
  CmdResult again = run_cli("simulate " + cfg.string());
  CHECK(again.exit_code == 0);
  CHECK(slurp(out / "summary.txt") == summary);
  CHECK(slurp(out / "rounds.csv") == rounds_csv);

  SUBCASE("report prints one row per round and validates") {
    CmdResult rep = run_cli("report " + out.string());
    CHECK(rep.exit_code == 0);
    CHECK(count_lines_starting_with_digit(rep.output) == 2);
    CHECK(rep.output.find("best round") != std::string::npos);

    CmdResult rep2 = run_cli("report " + out.string());
    CHECK(rep2.output == rep.output);
  }

  SUBCASE("tampered confusion counts are flagged") {
    fs::path conf = out / "confusion_r2_c1.csv";
    std::string text = slurp(conf);
    // Bump the first count, breaking conservation across rounds.
    size_t comma = text.find(',');
    std::string tampered = "9" + text.substr(comma - 1);
    std::ofstream(conf, std::ios::trunc) << tampered;
    CmdResult rep = run_cli("report " + out.string());
    CHECK(rep.exit_code == 1);
    bool flagged =
        rep.output.find("conservation") != std::string::npos ||
        rep.output.find("disagrees") != std::string::npos;
    CHECK(flagged);
  }
}

TEST_CASE("classifier-mask runs report the frozen invariant") {
  fs::path out = fs::temp_directory_path() / "fedsim_cli_frozen";
  fs::remove_all(out);
  fs::path cfg = write_config("fedsim_frozen.cfg",
                              std::string(kTinyRun) + "mask = classifier\n" +
                                  "out_dir = " + out.string() + "\n");
  CHECK(run_cli("simulate " + cfg.string()).exit_code == 0);
  CmdResult rep = run_cli("report " + out.string());
  CHECK(rep.exit_code == 0);
  CHECK(rep.output.find("frozen feature entries: HELD") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("report on a missing directory fails with exit 1") {
  CHECK(run_cli("report /nonexistent/run_dir").exit_code == 1);
}

TEST_CASE("join without a server exits 1; bad client id exits 2") {
  fs::path cfg = write_config("fedsim_join.cfg",
                              "transport = net\n"
                              "net_address = 127.0.0.1:39733\n"
                              "round_timeout_s = 2\n");
  CmdResult refused = run_cli("join " + cfg.string() + " 1");
  CHECK(refused.exit_code == 1);
  CHECK(refused.output.find("connect") != std::string::npos);

  CHECK(run_cli("join " + cfg.string() + " 9").exit_code == 2);
}
