#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/federation.hpp"
#include "fedsim/network.hpp"

namespace fedsim {

struct ClientRoundStats {
  uint32_t client_id = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  Confusion test_confusion{};
};

struct RoundReport {
  uint32_t round = 0;
  std::vector<ClientRoundStats> clients;           // ascending client_id
  std::vector<double> global_client_accuracy;      // new global on each test split
  double global_external_accuracy = 0.0;
  double wall_seconds = 0.0;  // never serialized
};

double accuracy_from_confusion(const Confusion& confusion);

// Everything except wall_seconds.
bool reports_equal(const std::vector<RoundReport>& a,
                   const std::vector<RoundReport>& b);

// Main CSV (header round,client_id,split,loss,accuracy; splits train,test),
// one confusion_r{round}_c{client}.csv per client round, and global.csv
// (round,target,accuracy with targets client{k} and external) next to it.
// LF line endings, accuracies and losses with 6 decimals.
void emit_csv(const std::vector<RoundReport>& reports,
              const std::filesystem::path& csv_path);

// Model checkpoint: dir/global_r{round}.fedw, always 64-bit payload so the
// round trip is bit-exact.
void checkpoint(const GlobalModel& global, uint32_t round,
                const std::filesystem::path& dir);

// Missing round file -> NotFoundError. When the mask is known the frozen
// snapshot is reconstructed from the non-federated entries (they are
// bit-identical by the mask invariant); otherwise it is left empty.
GlobalModel restore(const std::filesystem::path& dir, uint32_t round,
                    std::optional<MaskMode> mask = std::nullopt);

// Parsed run artifacts for cmd_report and read-side validation.
struct CsvRow {
  uint32_t round = 0;
  uint32_t client_id = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct GlobalRow {
  uint32_t round = 0;
  std::string target;
  double accuracy = 0.0;
};

struct ParsedRun {
  std::vector<CsvRow> rows;
  std::vector<GlobalRow> global_rows;
  // confusion[(round, client)] in file order
  std::vector<std::tuple<uint32_t, uint32_t, Confusion>> confusions;
};

ParsedRun parse_run_csvs(const std::filesystem::path& out_dir);

}  // namespace fedsim
