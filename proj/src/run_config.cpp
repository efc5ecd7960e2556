#include "fedsim/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fedsim/errors.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

uint64_t to_u64(const std::string& key, const std::string& value) {
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || p != value.data() + value.size())
    throw ConfigError(key + " must be a non-negative integer, got '" + value +
                      "'");
  return v;
}

uint32_t to_u32(const std::string& key, const std::string& value) {
  uint64_t v = to_u64(key, value);
  if (v > 0xFFFFFFFFull) throw ConfigError(key + " is too large");
  return static_cast<uint32_t>(v);
}

double to_f64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + " must be a number, got '" + value + "'");
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

const char* algorithm_str(Algorithm a) {
  return a == Algorithm::kFedSgd ? "fedsgd" : "fedavg";
}
const char* aggregation_str(Aggregation a) {
  return a == Aggregation::kPlainMean ? "mean" : "weighted";
}
const char* mask_str(MaskMode m) {
  return m == MaskMode::kAll ? "all" : "classifier";
}
const char* init_str(InitPolicy p) {
  return p == InitPolicy::kCommonSeed ? "common" : "independent";
}
const char* transport_str(TransportKind t) {
  switch (t) {
    case TransportKind::kSim: return "sim";
    case TransportKind::kDir: return "dir";
    case TransportKind::kNet: return "net";
  }
  return "?";
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, bool> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (seen[key])
      throw ConfigError("duplicate config key '" + key + "'");
    seen[key] = true;

    if (key == "clients") cfg.clients = to_u32(key, value);
    else if (key == "rounds") cfg.rounds = to_u32(key, value);
    else if (key == "local_epochs") cfg.local_epochs = to_u32(key, value);
    else if (key == "batch_size") cfg.batch_size = to_u32(key, value);
    else if (key == "lr") cfg.lr = to_f64(key, value);
    else if (key == "algorithm") {
      if (value == "fedsgd") cfg.algorithm = Algorithm::kFedSgd;
      else if (value == "fedavg") cfg.algorithm = Algorithm::kFedAvg;
      else throw ConfigError("algorithm must be fedsgd|fedavg, got '" + value + "'");
    } else if (key == "aggregation") {
      if (value == "mean") cfg.aggregation = Aggregation::kPlainMean;
      else if (value == "weighted") cfg.aggregation = Aggregation::kSampleWeighted;
      else throw ConfigError("aggregation must be mean|weighted, got '" + value + "'");
    } else if (key == "mask") {
      if (value == "all") cfg.mask = MaskMode::kAll;
      else if (value == "classifier") cfg.mask = MaskMode::kClassifierOnly;
      else throw ConfigError("mask must be all|classifier, got '" + value + "'");
    } else if (key == "init") {
      if (value == "common") cfg.init = InitPolicy::kCommonSeed;
      else if (value == "independent") cfg.init = InitPolicy::kIndependent;
      else throw ConfigError("init must be common|independent, got '" + value + "'");
    } else if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "client_fraction") cfg.client_fraction = to_f64(key, value);
    else if (key == "transport") {
      if (value == "sim") cfg.transport = TransportKind::kSim;
      else if (value == "dir") cfg.transport = TransportKind::kDir;
      else if (value == "net") cfg.transport = TransportKind::kNet;
      else throw ConfigError("transport must be sim|dir|net, got '" + value + "'");
    } else if (key == "dir_path") cfg.dir_path = value;
    else if (key == "net_address") cfg.net_address = value;
    else if (key == "round_timeout_s") cfg.round_timeout_s = to_f64(key, value);
    else if (key == "split_ratio") cfg.split_ratio = to_f64(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (cfg.algorithm == Algorithm::kFedSgd) cfg.local_epochs = 1;
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::validate() const {
  if (clients < 1 || clients > 3)
    throw ConfigError("clients must be between 1 and 3");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0))
    throw ConfigError("client_fraction must be in (0,1]");
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw ConfigError("split_ratio must be in (0,1)");
  if (!(round_timeout_s > 0.0))
    throw ConfigError("round_timeout_s must be > 0");
  if (transport == TransportKind::kDir && dir_path.empty())
    throw ConfigError("transport=dir requires dir_path");
  if (transport == TransportKind::kNet) parse_address(net_address);
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  to_federation_config().validate();
}

FederationConfig RunConfig::to_federation_config() const {
  FederationConfig fed;
  fed.clients = clients;
  fed.rounds = rounds;
  fed.local_epochs = local_epochs;
  fed.batch_size = batch_size;
  fed.lr = lr;
  fed.client_fraction = client_fraction;
  fed.aggregation = aggregation;
  fed.mask = mask;
  fed.init = init;
  fed.algorithm = algorithm;
  fed.transport.kind = transport;
  fed.transport.dir_path = dir_path;
  fed.transport.net_address = net_address;
  fed.round_timeout_s = round_timeout_s;
  fed.eval_each_round = true;
  fed.seed = seed;
  return fed;
}

DataSpec RunConfig::to_data_spec() const {
  return default_data_spec(clients, seed, split_ratio);
}

std::string RunConfig::serialize() const {
  std::string out;
  out += "clients = " + std::to_string(clients) + "\n";
  out += "rounds = " + std::to_string(rounds) + "\n";
  out += "local_epochs = " + std::to_string(local_epochs) + "\n";
  out += "batch_size = " + std::to_string(batch_size) + "\n";
  out += "lr = " + fmt_double(lr) + "\n";
  out += std::string("algorithm = ") + algorithm_str(algorithm) + "\n";
  out += std::string("aggregation = ") + aggregation_str(aggregation) + "\n";
  out += std::string("mask = ") + mask_str(mask) + "\n";
  out += std::string("init = ") + init_str(init) + "\n";
  out += "seed = " + std::to_string(seed) + "\n";
  out += "client_fraction = " + fmt_double(client_fraction) + "\n";
  out += std::string("transport = ") + transport_str(transport) + "\n";
  out += "dir_path = " + dir_path + "\n";
  out += "net_address = " + net_address + "\n";
  out += "round_timeout_s = " + fmt_double(round_timeout_s) + "\n";
  out += "split_ratio = " + fmt_double(split_ratio) + "\n";
  out += "out_dir = " + out_dir + "\n";
  return out;
}

}  // namespace fedsim
