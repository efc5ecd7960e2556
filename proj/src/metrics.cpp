#include "fedsim/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedsim/codec.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

namespace fs = std::filesystem;

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

uint64_t parse_u64(const std::string& s, const std::string& where) {
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw IoError("bad integer '" + s + "' in " + where);
  return v;
}

double parse_f64(const std::string& s, const std::string& where) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("bad number '" + s + "' in " + where);
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

double accuracy_from_confusion(const Confusion& confusion) {
  uint64_t total = 0, trace = 0;
  for (int t = 0; t < kNumClasses; ++t)
    for (int p = 0; p < kNumClasses; ++p) {
      total += confusion[t][p];
      if (t == p) trace += confusion[t][p];
    }
  if (total == 0) throw EmptyInputError("empty confusion matrix");
  return static_cast<double>(trace) / static_cast<double>(total);
}

bool reports_equal(const std::vector<RoundReport>& a,
                   const std::vector<RoundReport>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const RoundReport& x = a[i];
    const RoundReport& y = b[i];
    if (x.round != y.round ||
        x.global_client_accuracy != y.global_client_accuracy ||
        x.global_external_accuracy != y.global_external_accuracy ||
        x.clients.size() != y.clients.size())
      return false;
    for (size_t c = 0; c < x.clients.size(); ++c) {
      const auto& u = x.clients[c];
      const auto& v = y.clients[c];
      if (u.client_id != v.client_id || u.train_loss != v.train_loss ||
          u.train_accuracy != v.train_accuracy || u.test_loss != v.test_loss ||
          u.test_accuracy != v.test_accuracy ||
          u.test_confusion != v.test_confusion)
        return false;
    }
  }
  return true;
}

void emit_csv(const std::vector<RoundReport>& reports,
              const fs::path& csv_path) {
  if (reports.empty()) throw EmptyInputError("no reports to emit");
  fs::path dir = csv_path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);

  std::string main_csv = "round,client_id,split,loss,accuracy\n";
  std::string global_csv = "round,target,accuracy\n";
  for (const RoundReport& report : reports) {
    for (const ClientRoundStats& s : report.clients) {
      main_csv += std::to_string(report.round) + "," +
                  std::to_string(s.client_id) + ",train," +
                  fmt6(s.train_loss) + "," + fmt6(s.train_accuracy) + "\n";
      main_csv += std::to_string(report.round) + "," +
                  std::to_string(s.client_id) + ",test," + fmt6(s.test_loss) +
                  "," + fmt6(s.test_accuracy) + "\n";

      std::string conf;
      for (int t = 0; t < kNumClasses; ++t) {
        for (int p = 0; p < kNumClasses; ++p) {
          conf += std::to_string(s.test_confusion[t][p]);
          conf += (p + 1 < kNumClasses) ? ',' : '\n';
        }
      }
      write_text_file(dir / ("confusion_r" + std::to_string(report.round) +
                             "_c" + std::to_string(s.client_id) + ".csv"),
                      conf);
    }
    for (size_t k = 0; k < report.global_client_accuracy.size(); ++k)
      global_csv += std::to_string(report.round) + ",client" +
                    std::to_string(k + 1) + "," +
                    fmt6(report.global_client_accuracy[k]) + "\n";
    if (!report.global_client_accuracy.empty())
      global_csv += std::to_string(report.round) + ",external," +
                    fmt6(report.global_external_accuracy) + "\n";
  }
  write_text_file(csv_path, main_csv);
  write_text_file(dir / "global.csv", global_csv);
}

void checkpoint(const GlobalModel& global, uint32_t round,
                const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<uint8_t> blob = encode_params(global.params, WireDtype::kF64);
  write_file_atomic((dir / global_blob_name(round)).string(), blob);
}

GlobalModel restore(const fs::path& dir, uint32_t round,
                    std::optional<MaskMode> mask) {
  fs::path file = dir / global_blob_name(round);
  if (!fs::exists(file))
    throw NotFoundError("no checkpoint for round " + std::to_string(round) +
                        " in " + dir.string());
  GlobalModel global;
  global.round = round;
  global.params = decode_params(read_file(file.string()));
  if (mask) {
    FederationMask fm = FederationMask::make(*mask, Architecture::fixed());
    global.frozen.architecture_id = global.params.architecture_id;
    for (const auto& e : global.params.entries)
      if (!fm.selects(e.name)) global.frozen.entries.push_back(e);
  }
  return global;
}

ParsedRun parse_run_csvs(const fs::path& out_dir) {
  ParsedRun run;

  std::vector<std::string> lines = read_lines(out_dir / "rounds.csv");
  if (lines.empty() || lines[0] != "round,client_id,split,loss,accuracy")
    throw IoError("rounds.csv has an unexpected header");
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv_line(lines[i]);
    if (f.size() != 5) throw IoError("rounds.csv row with wrong field count");
    CsvRow row;
    row.round = static_cast<uint32_t>(parse_u64(f[0], "rounds.csv"));
    row.client_id = static_cast<uint32_t>(parse_u64(f[1], "rounds.csv"));
    row.split = f[2];
    row.loss = parse_f64(f[3], "rounds.csv");
    row.accuracy = parse_f64(f[4], "rounds.csv");
    if (row.split != "train" && row.split != "test")
      throw IoError("rounds.csv row with unknown split '" + row.split + "'");
    run.rows.push_back(std::move(row));
  }

  lines = read_lines(out_dir / "global.csv");
  if (lines.empty() || lines[0] != "round,target,accuracy")
    throw IoError("global.csv has an unexpected header");
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv_line(lines[i]);
    if (f.size() != 3) throw IoError("global.csv row with wrong field count");
    GlobalRow row;
    row.round = static_cast<uint32_t>(parse_u64(f[0], "global.csv"));
    row.target = f[1];
    row.accuracy = parse_f64(f[2], "global.csv");
    run.global_rows.push_back(std::move(row));
  }

  for (const CsvRow& row : run.rows) {
    if (row.split != "test") continue;
    fs::path file = out_dir / ("confusion_r" + std::to_string(row.round) +
                               "_c" + std::to_string(row.client_id) + ".csv");
    std::vector<std::string> clines = read_lines(file);
    if (clines.size() != kNumClasses)
      throw IoError(file.string() + " must have exactly 4 rows");
    Confusion confusion{};
    for (int t = 0; t < kNumClasses; ++t) {
      auto f = split_csv_line(clines[t]);
      if (f.size() != kNumClasses)
        throw IoError(file.string() + " row with wrong field count");
      for (int p = 0; p < kNumClasses; ++p)
        confusion[t][p] = parse_u64(f[p], file.string());
    }
    run.confusions.emplace_back(row.round, row.client_id, confusion);
  }
  return run;
}

}  // namespace fedsim
