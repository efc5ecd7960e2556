// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/cli.hpp"
#include "fedsim/codec.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/run_config.hpp"
#include "fedsim/transport.hpp"
#include "grad_check.hpp"

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v, const char* spec = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

double max_abs_delta(const ParamSet& a, const ParamSet& b) {
  double worst = 0.0;
  for (size_t e = 0; e < a.entries.size(); ++e)
    for (size_t k = 0; k < a.entries[e].tensor.data.size(); ++k)
      worst = std::max(worst, std::fabs(a.entries[e].tensor.data[k] -
                                        b.entries[e].tensor.data[k]));
  return worst;
}

uint32_t rounds_to_threshold(const ExperimentResult& result, double threshold) {
  for (const RoundReport& report : result.reports) {
    double mean = 0.0;
    for (double a : report.global_client_accuracy) mean += a;
    mean /= report.global_client_accuracy.size();
    if (mean >= threshold) return report.round;
  }
  return static_cast<uint32_t>(result.reports.size()) + 1;
}

FederationConfig trend_config(uint64_t seed) {
  FederationConfig cfg;
  cfg.clients = 3;
  cfg.rounds = 40;
  cfg.local_epochs = 5;
  cfg.batch_size = 32;
  cfg.lr = 0.05;
  cfg.seed = seed;
  return cfg;
}

Dataset not_okay_subset(const Dataset& data) {
  Dataset out;
  for (const LabeledImage& img : data)
    if (img.label == Label::kNotOkay) out.push_back(img);
  return out;
}

std::map<std::string, std::vector<uint8_t>> snapshot_tree(
    const fs::path& root, bool skip_run_config = false) {
  std::map<std::string, std::vector<uint8_t>> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string rel = fs::relative(entry.path(), root).string();
    if (skip_run_config && rel == "run_config.txt") continue;
    files[rel] = read_file(entry.path().string());
  }
  return files;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---- criterion bodies ------------------------------------------------

bool fedsgd_equals_centralized(std::string& detail) {
  // Unequal shards of 40/25/15 training samples (80 pooled).
  DataSpec data = default_data_spec(3, 4242, 0.5);
  data.split_ratio = 0.5;
  data.clients[0].class_counts = {32, 24, 16, 8};   // 80 total -> 40 train
  data.clients[1].class_counts = {20, 15, 10, 5};   // 50 -> 25
  data.clients[2].class_counts = {12, 9, 6, 3};     // 30 -> 15
  std::vector<Shard> shards = build_shards(data);

  FederationConfig cfg;
  cfg.clients = 3;
  cfg.rounds = 1;
  cfg.algorithm = Algorithm::kFedSgd;
  cfg.local_epochs = 1;
  cfg.aggregation = Aggregation::kSampleWeighted;
  cfg.lr = 0.05;
  cfg.seed = 4242;
  cfg.wire_dtype = WireDtype::kF64;
  cfg.eval_each_round = false;

  SimTransport transport(&shards, &cfg);
  Dataset external = generate_external_testset(1);
  ExperimentResult result =
      run_experiment_core(cfg, shards, external, transport, {});

  Dataset pooled;
  for (const Shard& s : shards)
    pooled.insert(pooled.end(), s.train.begin(), s.train.end());
  if (pooled.size() != 80) {
    detail = "pooled size " + std::to_string(pooled.size());
    return false;
  }
  ParamSet w0 = init_params(Architecture::fixed(), cfg.seed);
  ParamSet centralized =
      sgd_apply(w0, loss_and_grad(w0, make_batch(pooled)).grads, cfg.lr);
  double delta = max_abs_delta(result.global.params, centralized);
  detail = "max|delta| = " + fmt(delta);
  return delta <= 1e-10;
}

bool gradient_check(std::string& detail) {
  double worst = 0.0;
  size_t kinks = 0, coords = 0;
  for (uint64_t draw = 0; draw < 20; ++draw) {
    ParamSet p = init_params(Architecture::fixed(), 9000 + draw);
    Batch batch = testing::random_batch(9100 + draw, 3);
    LossGrad lg = loss_and_grad(p, batch);
    auto r = testing::finite_difference_check(p, batch, lg.grads, 1e-5);
    worst = std::max(worst, r.max_rel_error);
    kinks += r.kink_skips;
    coords += r.coords;
  }
  detail = "max rel err = " + fmt(worst) + ", kink-adjacent coords skipped " +
           std::to_string(kinks) + "/" + std::to_string(coords);
  return worst < 1e-6 && kinks * 100 < coords;
}

bool trend_common_vs_independent(std::string& detail) {
  int common_wins = 0;
  std::string runs;
  for (uint64_t seed : {42ull, 7ull, 1001ull}) {
    DataSpec data = default_data_spec(3, seed, 0.8);
    FederationConfig cfg = trend_config(seed);
    uint32_t common = rounds_to_threshold(run_experiment(cfg, data), 0.9);
    cfg.init = InitPolicy::kIndependent;
    uint32_t independent = rounds_to_threshold(run_experiment(cfg, data), 0.9);
    if (common < independent) ++common_wins;
    runs += " seed" + std::to_string(seed) + ":" + std::to_string(common) +
            "<" + std::to_string(independent);
  }
  detail = "common init reaches 90% strictly earlier in " +
           std::to_string(common_wins) + "/3 seeds;" + runs;
  return common_wins >= 2;
}

bool trend_local_epochs(std::string& detail) {
  int holds = 0;
  std::string runs;
  for (uint64_t seed : {42ull, 7ull, 1001ull}) {
    DataSpec data = default_data_spec(3, seed, 0.8);
    uint32_t e5 = rounds_to_threshold(
        run_experiment(trend_config(seed), data), 0.9);

    FederationConfig sgd = trend_config(seed);
    sgd.algorithm = Algorithm::kFedSgd;
    sgd.local_epochs = 1;
    sgd.rounds = 100;
    uint32_t e1 = rounds_to_threshold(run_experiment(sgd, data), 0.9);
    if (e5 <= e1) ++holds;
    runs += " seed" + std::to_string(seed) + ":" + std::to_string(e5) +
            "<=" + std::to_string(e1);
  }
  detail = "E=5 needs no more rounds than FedSGD in " + std::to_string(holds) +
           "/3 seeds;" + runs;
  return holds == 3;
}

bool cross_client_generalization(std::string& detail) {
  DataSpec data = default_data_spec(3, 42, 0.8);
  std::vector<Shard> shards = build_shards(data);

  FederationConfig cfg = trend_config(42);
  cfg.rounds = 20;
  std::vector<ParamSet> per_round;
  RoundHook hook;
  hook.on_round = [&per_round](const GlobalModel& g, const RoundReport&) {
    per_round.push_back(g.params);
  };
  ExperimentResult result = run_experiment(cfg, data, hook);
  const ParamSet& global = per_round[result.best_round - 1];

  FederationConfig single_cfg = cfg;
  single_cfg.local_epochs = 30;
  ParamSet init = init_params(Architecture::fixed(), cfg.seed);
  std::vector<ParamSet> singles;
  for (uint32_t k = 1; k <= 3; ++k)
    singles.push_back(
        local_train(shards[k - 1].train, init, single_cfg, k, 1).params);

  bool all_hold = true;
  std::string worst_pair;
  for (uint32_t k = 1; k <= 3 && all_hold; ++k)
    for (uint32_t j = 1; j <= 3; ++j) {
      if (j == k) continue;
      Dataset foreign = not_okay_subset(shards[j - 1].test);
      double single_acc = evaluate(singles[k - 1], foreign).accuracy;
      double global_acc = evaluate(global, foreign).accuracy;
      if (!(global_acc > single_acc)) {
        all_hold = false;
        worst_pair = " (single" + std::to_string(k) + " on client" +
                     std::to_string(j) + ": " + fmt(single_acc) +
                     " >= global " + fmt(global_acc) + ")";
        break;
      }
    }
  detail = std::string("global beats every single-client model on all "
                       "foreign NOT_OKAY subsets") +
           (all_hold ? "" : worst_pair);
  return all_hold;
}

bool process2_freeze(std::string& detail) {
  DataSpec data = default_data_spec(3, 505, 0.8);
  FederationConfig cfg;
  cfg.clients = 3;
  cfg.rounds = 15;
  cfg.local_epochs = 10;  // the reference Process2 operating point
  cfg.batch_size = 32;
  cfg.mask = MaskMode::kClassifierOnly;
  cfg.seed = 505;
  cfg.eval_each_round = false;

  ExperimentResult result = run_experiment(cfg, data);
  ParamSet initial = init_params(Architecture::fixed(), cfg.seed);
  bool frozen = frozen_entries_intact(result.global);
  for (const std::string& name :
       Architecture::fixed().group_names(ParamGroup::kFeature)) {
    if (!(*result.global.params.find(name) == *initial.find(name)))
      frozen = false;
  }

  FederationMask mask =
      FederationMask::make(MaskMode::kClassifierOnly, Architecture::fixed());
  size_t masked_size =
      encode_params(mask.apply(result.global.params), WireDtype::kF32).size();
  size_t full_size =
      encode_params(result.global.params, WireDtype::kF32).size();
  detail = "feature bytes identical over 15 rounds; masked blob " +
           std::to_string(masked_size) + " B < full blob " +
           std::to_string(full_size) + " B";
  return frozen && masked_size < full_size;
}

RunConfig equivalence_config(const fs::path& out_dir) {
  RunConfig cfg;
  cfg.clients = 3;
  cfg.rounds = 3;
  cfg.local_epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 977;
  cfg.round_timeout_s = 120.0;
  cfg.out_dir = out_dir.string();
  return cfg;
}

bool transport_equivalence(std::string& detail) {
  fs::path sim_out = fresh_dir("fedsim_acc_sim");
  RunConfig sim_cfg = equivalence_config(sim_out);
  run_and_write_outputs(sim_cfg);

  fs::path dir_out = fresh_dir("fedsim_acc_dir");
  fs::path exchange = fresh_dir("fedsim_acc_exchange");
  RunConfig dir_cfg = equivalence_config(dir_out);
  dir_cfg.transport = TransportKind::kDir;
  dir_cfg.dir_path = exchange.string();
  run_and_write_outputs(dir_cfg);

  fs::path net_out = fresh_dir("fedsim_acc_net");
  RunConfig net_cfg = equivalence_config(net_out);
  net_cfg.transport = TransportKind::kNet;
  net_cfg.net_address = "127.0.0.1:39417";

  DataSpec data = net_cfg.to_data_spec();
  std::vector<Shard> shards = build_shards(data);
  FederationConfig fed = net_cfg.to_federation_config();
  std::vector<std::thread> clients;
  for (uint32_t id = 1; id <= 3; ++id)
    clients.emplace_back([&, id] {
      // The server needs a moment to bind.
      for (int attempt = 0;; ++attempt) {
        try {
          join_run(net_cfg.net_address, id, shards[id - 1], fed);
          return;
        } catch (const IoError&) {
          if (attempt > 100) throw;
          std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
      }
    });
  run_and_write_outputs(net_cfg);
  for (auto& c : clients) c.join();

  auto sim_tree = snapshot_tree(sim_out, /*skip_run_config=*/true);
  auto dir_tree = snapshot_tree(dir_out, true);
  auto net_tree = snapshot_tree(net_out, true);
  bool equal = sim_tree == dir_tree && sim_tree == net_tree;
  detail = std::to_string(sim_tree.size()) +
           " files (CSVs, checkpoints, summary) byte-identical across "
           "sim/dir/net";
  if (!equal) detail = "output trees differ between transports";
  fs::remove_all(sim_out);
  fs::remove_all(dir_out);
  fs::remove_all(net_out);
  fs::remove_all(exchange);
  return equal;
}

bool codec_roundtrips_and_fuzz(std::string& detail) {
  SplitMix64 rng(31337);
  for (int trial = 0; trial < 1000; ++trial) {
    ParamSet p;
    size_t n_entries = rng.next_below(5);
    for (size_t e = 0; e < n_entries; ++e) {
      std::vector<uint32_t> dims;
      size_t ndim = 1 + rng.next_below(3);
      for (size_t d = 0; d < ndim; ++d)
        dims.push_back(1 + static_cast<uint32_t>(rng.next_below(6)));
      Tensor t = Tensor::zeros(dims);
      for (double& v : t.data) v = rng.uniform(-1e6, 1e6);
      p.entries.push_back({"entry" + std::to_string(e), std::move(t)});
    }
    auto blob = encode_params(p, WireDtype::kF64);
    if (!(decode_params(blob) == p)) {
      detail = "round-trip mismatch at trial " + std::to_string(trial);
      return false;
    }
  }

  // Fuzz: truncations, corruptions and random bytes must all surface as
  // typed DecodeErrors (anything else, including a crash, fails the build).
  ParamSet p = init_params(Architecture::fixed(), 2);
  auto blob = encode_params(p, WireDtype::kF32);
  size_t rejected = 0, total = 0;
  for (size_t len = 0; len < blob.size(); ++len) {
    ++total;
    try {
      decode_params({blob.data(), len});
    } catch (const DecodeError&) {
      ++rejected;
    }
  }
  for (int trial = 0; trial < 2000; ++trial) {
    ++total;
    std::vector<uint8_t> bytes;
    if (trial % 2 == 0) {
      bytes = blob;
      size_t flips = 1 + rng.next_below(8);
      for (size_t f = 0; f < flips; ++f)
        bytes[rng.next_below(bytes.size())] ^=
            static_cast<uint8_t>(1 + rng.next_below(255));
    } else {
      bytes.resize(rng.next_below(128));
      for (auto& b : bytes) b = static_cast<uint8_t>(rng.next_below(256));
    }
    try {
      ParamSet q = decode_params(bytes);
      if (q == p) ++rejected;  // flips restored the original bytes
    } catch (const DecodeError&) {
      ++rejected;
    }
  }
  detail = "1000 F64 round-trips bit-exact; " + std::to_string(rejected) +
           "/" + std::to_string(total) + " malformed inputs rejected typed";
  return rejected == total;
}

bool metrics_fixture(std::string& detail) {
  Confusion confusion{};
  confusion[0] = {2850, 0, 1, 0};
  confusion[2] = {2, 0, 218, 0};
  double acc = accuracy_from_confusion(confusion);
  detail = "accuracy(reference confusion over 3071 samples) = " +
           fmt(acc, "%.5f");
  return std::fabs(acc - 0.99902) <= 0.00001;
}

bool determinism(std::string& detail) {
  fs::path out = fresh_dir("fedsim_acc_det");
  RunConfig cfg;
  cfg.clients = 3;
  cfg.rounds = 2;
  cfg.local_epochs = 1;
  cfg.seed = 31;
  cfg.out_dir = out.string();

  run_and_write_outputs(cfg);
  auto first = snapshot_tree(out);
  run_and_write_outputs(cfg);
  auto second = snapshot_tree(out);
  bool equal = first == second;
  detail = "repeated run rewrote " + std::to_string(first.size()) +
           " files byte-identically";
  if (!equal) detail = "output trees differ between repeated runs";
  fs::remove_all(out);
  return equal;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<bool(std::string&)> run;
  };
  std::vector<Criterion> criteria = {
      {1, "fedsgd round equals centralized full-batch GD", fedsgd_equals_centralized},
      {2, "analytic gradients match finite differences", gradient_check},
      {3, "common-seed init converges in fewer rounds", trend_common_vs_independent},
      {4, "local epochs reduce communication rounds", trend_local_epochs},
      {5, "federated model generalizes across client defects", cross_client_generalization},
      {6, "classifier-only federation freezes feature bytes", process2_freeze},
      {7, "sim, dir and net transports are byte-equivalent", transport_equivalence},
      {8, "codec round-trips and rejects malformed blobs", codec_roundtrips_and_fuzz},
      {9, "confusion arithmetic reproduces the reference accuracy", metrics_fixture},
      {10, "repeated runs emit byte-identical output trees", determinism},
  };

  int failures = 0;
  for (auto& criterion : criteria) {
    auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = criterion.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    std::printf("%s  [%2d] %s (%s; %.1fs)\n", ok ? "PASS" : "FAIL",
                criterion.id, criterion.name, detail.c_str(), secs);
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  std::printf("ACCEPTANCE: %d/%zu criteria passed\n",
              static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures;
}
