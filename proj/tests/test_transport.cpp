#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <thread>

#include "doctest.h"
#include "fedsim/codec.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/experiment.hpp"
#include "fedsim/message.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/transport.hpp"

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

DataSpec tiny_data_spec(uint32_t n_clients, uint64_t seed) {
  DataSpec data = default_data_spec(n_clients, seed, 0.8);
  for (auto& spec : data.clients) spec.class_counts = {8, 6, 4, 2};
  return data;
}

FederationConfig tiny_cfg(uint32_t clients, uint64_t seed) {
  FederationConfig cfg;
  cfg.clients = clients;
  cfg.rounds = 3;
  cfg.local_epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = seed;
  cfg.round_timeout_s = 30.0;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Minimal raw TCP client for protocol-violation tests.
struct RawClient {
  int fd = -1;

  explicit RawClient(uint16_t port) {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  }

  ~RawClient() {
    if (fd >= 0) ::close(fd);
  }

  void send_msg(const Message& msg) {
    auto bytes = encode_message(msg);
    size_t sent = 0;
    while (sent < bytes.size()) {
      ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, 0);
      REQUIRE(n > 0);
      sent += static_cast<size_t>(n);
    }
  }

  Message read_msg() {
    std::vector<uint8_t> buf(kMessageHeaderSize);
    read_exact(buf.data(), buf.size());
    MessageHeader h = decode_message_header(buf);
    buf.resize(kMessageHeaderSize + h.payload_len + 4);
    read_exact(buf.data() + kMessageHeaderSize,
               buf.size() - kMessageHeaderSize);
    return decode_message(buf);
  }

 private:
  void read_exact(uint8_t* p, size_t n) {
    size_t got = 0;
    while (got < n) {
      ssize_t r = ::recv(fd, p + got, n - got, 0);
      REQUIRE(r > 0);
      got += static_cast<size_t>(r);
    }
  }
};

}  // namespace

TEST_CASE("file naming contract") {
  CHECK(global_blob_name(0) == "global_r0.fedw");
  CHECK(global_blob_name(12) == "global_r12.fedw");
  CHECK(client_blob_name(2, 7) == "client2_r7.fedw");
  CHECK(client_done_name(3, 1) == "client3_r1.done");
}

TEST_CASE("atomic file write round-trips and missing files are NotFound") {
  fs::path dir = fresh_dir("fedsim_files");
  std::vector<uint8_t> payload = {1, 2, 3, 250};
  write_file_atomic((dir / "x.bin").string(), payload);
  CHECK(read_file((dir / "x.bin").string()) == payload);
  CHECK_FALSE(fs::exists(dir / "x.bin.tmp"));
  CHECK_THROWS_AS(read_file((dir / "missing.bin").string()), NotFoundError);
  fs::remove_all(dir);
}

TEST_CASE("dir barrier waits for the last done marker") {
  fs::path dir = fresh_dir("fedsim_dir_barrier");
  FederationConfig cfg = tiny_cfg(3, 9);
  DataSpec data = tiny_data_spec(3, 9);
  std::vector<Shard> shards = build_shards(data);
  std::vector<uint64_t> sizes;
  for (const auto& s : shards) sizes.push_back(s.train.size());

  DirTransport transport(dir.string(), &cfg, sizes);
  transport.publish_global(
      0, encode_params(init_params(Architecture::fixed(), 9), cfg.wire_dtype),
      {1, 2, 3});

  std::atomic<bool> last_written{false};
  std::vector<std::thread> writers;
  for (uint32_t id = 1; id <= 3; ++id)
    writers.emplace_back([&, id] {
      std::this_thread::sleep_for(std::chrono::milliseconds(40 * id));
      std::vector<uint8_t> blob = train_client_blob(
          shards[id - 1], read_file((dir / "global_r0.fedw").string()), cfg,
          id, 1);
      write_file_atomic((dir / client_blob_name(id, 1)).string(), blob);
      if (id == 3) last_written = true;
      write_file_atomic((dir / client_done_name(id, 1)).string(), {});
    });

  auto updates = transport.collect_updates(1, {1, 2, 3}, 10.0);
  CHECK(last_written.load());  // proceeded only once the third marker existed
  REQUIRE(updates.size() == 3);
  CHECK(updates[0].client_id == 1);
  CHECK(updates[2].client_id == 3);
  CHECK(updates[1].n_k == shards[1].train.size());
  for (auto& w : writers) w.join();
  fs::remove_all(dir);
}

TEST_CASE("dir barrier times out when a marker is missing") {
  fs::path dir = fresh_dir("fedsim_dir_timeout");
  FederationConfig cfg = tiny_cfg(2, 10);
  DataSpec data = tiny_data_spec(2, 10);
  std::vector<Shard> shards = build_shards(data);
  DirTransport transport(dir.string(), &cfg,
                         {shards[0].train.size(), shards[1].train.size()});

  std::vector<uint8_t> blob =
      encode_params(init_params(Architecture::fixed(), 10), cfg.wire_dtype);
  transport.publish_global(0, blob, {1, 2});
  // Only client 1 delivers.
  write_file_atomic((dir / client_blob_name(1, 1)).string(), blob);
  write_file_atomic((dir / client_done_name(1, 1)).string(), {});

  CHECK_THROWS_AS(transport.collect_updates(1, {1, 2}, 0.2),
                  RoundTimeoutError);
  CHECK_FALSE(fs::exists(dir / "global_r1.fedw"));
  fs::remove_all(dir);
}

TEST_CASE("corrupt client blobs name the offending file") {
  fs::path dir = fresh_dir("fedsim_dir_corrupt");
  FederationConfig cfg = tiny_cfg(1, 11);
  DirTransport transport(dir.string(), &cfg, {12});
  std::vector<uint8_t> junk = {9, 9, 9, 9};
  write_file_atomic((dir / client_blob_name(1, 1)).string(), junk);
  write_file_atomic((dir / client_done_name(1, 1)).string(), {});
  try {
    transport.collect_updates(1, {1}, 1.0);
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(std::string(e.what()).find("client1_r1.fedw") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("dir round timeout leaves the global model unchanged") {
  fs::path dir = fresh_dir("fedsim_dir_unchanged");
  FederationConfig cfg = tiny_cfg(2, 12);
  cfg.round_timeout_s = 0.2;
  DataSpec data = tiny_data_spec(2, 12);
  std::vector<Shard> shards = build_shards(data);
  Dataset external = generate_external_testset(12);
  DirTransport transport(dir.string(), &cfg,
                         {shards[0].train.size(), shards[1].train.size()});

  GlobalModel global = make_initial_global(cfg);
  ParamSet before = global.params;
  CHECK_THROWS_AS(
      run_round(global, shards, external, cfg, transport, 1),
      RoundTimeoutError);
  CHECK(global.round == 0);
  CHECK(global.params == before);
  fs::remove_all(dir);
}

TEST_CASE("dir and sim transports produce bit-identical runs") {
  DataSpec data = tiny_data_spec(3, 13);
  FederationConfig sim_cfg = tiny_cfg(3, 13);
  ExperimentResult sim = run_experiment(sim_cfg, data);

  fs::path dir = fresh_dir("fedsim_dir_equiv");
  FederationConfig dir_cfg = sim_cfg;
  dir_cfg.transport.kind = TransportKind::kDir;
  dir_cfg.transport.dir_path = dir.string();
  ExperimentResult via_dir = run_experiment(dir_cfg, data);

  CHECK(reports_equal(sim.reports, via_dir.reports));
  CHECK(sim.global.params == via_dir.global.params);
  CHECK(encode_params(sim.global.params, WireDtype::kF64) ==
        encode_params(via_dir.global.params, WireDtype::kF64));

  // The exchange directory carries one global per version and per-client
  // blobs and markers per round.
  CHECK(fs::exists(dir / "global_r0.fedw"));
  CHECK(fs::exists(dir / "global_r3.fedw"));
  CHECK(fs::exists(dir / "client2_r3.fedw"));
  CHECK(fs::exists(dir / "client2_r3.done"));
  fs::remove_all(dir);
}

TEST_CASE("net run matches sim bit for bit") {
  DataSpec data = tiny_data_spec(2, 14);
  FederationConfig cfg = tiny_cfg(2, 14);
  cfg.wire_dtype = WireDtype::kF64;  // 64-bit equivalence run
  ExperimentResult sim = run_experiment(cfg, data);

  FederationConfig net_cfg = cfg;
  net_cfg.transport.kind = TransportKind::kNet;
  NetServerTransport transport("127.0.0.1:0", &net_cfg, 10.0);
  uint16_t port = transport.port();

  std::vector<Shard> shards = build_shards(data);
  Dataset external = generate_external_testset(data.external_seed);

  std::vector<std::thread> clients;
  for (uint32_t id = 1; id <= 2; ++id)
    clients.emplace_back([&, id] {
      join_run("127.0.0.1:" + std::to_string(port), id, shards[id - 1],
               net_cfg);
    });

  ExperimentResult net =
      run_experiment_core(net_cfg, shards, external, transport, {});
  for (auto& c : clients) c.join();

  CHECK(reports_equal(sim.reports, net.reports));
  CHECK(sim.global.params == net.global.params);
}

TEST_CASE("duplicate client ids get ERR while the run completes") {
  FederationConfig cfg = tiny_cfg(2, 15);
  cfg.rounds = 1;
  DataSpec data = tiny_data_spec(2, 15);
  std::vector<Shard> shards = build_shards(data);
  Dataset external = generate_external_testset(15);

  NetServerTransport transport("127.0.0.1:0", &cfg, 20.0);
  uint16_t port = transport.port();
  std::string address = "127.0.0.1:" + std::to_string(port);

  std::thread server([&] {
    ExperimentResult result =
        run_experiment_core(cfg, shards, external, transport, {});
    CHECK(result.global.round == 1);
  });

  std::thread first([&] { join_run(address, 1, shards[0], cfg); });

  // By now client 1 holds its slot; a second HELLO with the same id must be
  // rejected while the server still waits for client 2.
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  std::atomic<bool> duplicate_rejected{false};
  {
    RawClient dup(port);
    dup.send_msg({MsgType::kHello, 0, 1, {}});
    Message reply = dup.read_msg();
    if (reply.type == MsgType::kErr &&
        decode_err_payload(reply.payload).first == ErrCode::kDuplicateClient)
      duplicate_rejected = true;
  }
  CHECK(duplicate_rejected.load());

  std::thread second([&] { join_run(address, 2, shards[1], cfg); });
  first.join();
  second.join();
  server.join();
}

TEST_CASE("stale-round updates get ERR and are not aggregated") {
  FederationConfig cfg = tiny_cfg(1, 16);
  cfg.rounds = 1;
  cfg.round_timeout_s = 10.0;
  DataSpec data = tiny_data_spec(1, 16);
  std::vector<Shard> shards = build_shards(data);
  Dataset external = generate_external_testset(16);

  NetServerTransport transport("127.0.0.1:0", &cfg, 10.0);
  uint16_t port = transport.port();

  std::atomic<bool> got_stale_err{false};
  std::thread client([&] {
    RawClient raw(port);
    raw.send_msg({MsgType::kHello, 0, 1, {}});
    Message global = raw.read_msg();
    REQUIRE(global.type == MsgType::kGlobal);
    REQUIRE(global.round == 1);

    ClientUpdate update = train_client_once(shards[0], global.payload, cfg, 1, 1);
    std::vector<uint8_t> blob = encode_params(update.params, cfg.wire_dtype);
    std::vector<uint8_t> payload;
    for (int i = 0; i < 8; ++i)
      payload.push_back((update.n_k >> (8 * i)) & 0xFF);
    payload.insert(payload.end(), blob.begin(), blob.end());

    raw.send_msg({MsgType::kUpdate, 5, 1, payload});  // wrong round
    Message err = raw.read_msg();
    if (err.type == MsgType::kErr &&
        decode_err_payload(err.payload).first == ErrCode::kStaleRound)
      got_stale_err = true;

    raw.send_msg({MsgType::kUpdate, 1, 1, payload});  // correct round
    Message done = raw.read_msg();
    REQUIRE(done.type == MsgType::kDone);
  });

  ExperimentResult result =
      run_experiment_core(cfg, shards, external, transport, {});
  client.join();
  CHECK(got_stale_err.load());
  CHECK(result.global.round == 1);
}

TEST_CASE("joining before a server exists fails with a connect error") {
  FederationConfig cfg = tiny_cfg(1, 17);
  DataSpec data = tiny_data_spec(1, 17);
  std::vector<Shard> shards = build_shards(data);
  CHECK_THROWS_AS(join_run("127.0.0.1:1", 1, shards[0], cfg), IoError);
}

TEST_CASE("disconnect mid-round surfaces as a round timeout") {
  FederationConfig cfg = tiny_cfg(1, 18);
  cfg.rounds = 1;
  cfg.round_timeout_s = 5.0;
  DataSpec data = tiny_data_spec(1, 18);
  std::vector<Shard> shards = build_shards(data);
  Dataset external = generate_external_testset(18);

  NetServerTransport transport("127.0.0.1:0", &cfg, 10.0);
  uint16_t port = transport.port();

  std::thread client([&] {
    RawClient raw(port);
    raw.send_msg({MsgType::kHello, 0, 1, {}});
    Message global = raw.read_msg();
    REQUIRE(global.type == MsgType::kGlobal);
    // Vanish without sending the update.
  });

  CHECK_THROWS_AS(run_experiment_core(cfg, shards, external, transport, {}),
                  RoundTimeoutError);
  client.join();
}
