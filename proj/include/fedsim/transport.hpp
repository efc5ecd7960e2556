#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

// Server side of a parameter exchange. publish_global announces the model
// after `version` completed rounds (version 0 = initial) to the clients that
// train round version+1 (empty after the final round); collect_updates blocks
// until every expected client's round-`round` update arrived or the deadline
// passed (RoundTimeoutError).
class ServerTransport {
 public:
  virtual ~ServerTransport() = default;

  virtual void publish_global(uint32_t version,
                              const std::vector<uint8_t>& blob,
                              const std::vector<uint32_t>& next_participants) = 0;
  virtual std::vector<ClientUpdate> collect_updates(
      uint32_t round, const std::vector<uint32_t>& client_ids,
      double timeout_s) = 0;
  virtual void finish() {}
};

// One client's round of work as the encoded update blob: decode the broadcast
// (or derive the round-1 independent init), train locally, encode the masked
// update at the wire dtype. Every transport funnels through this, which is
// what makes SIM/DIR/NET trajectories identical.
std::vector<uint8_t> train_client_blob(const Shard& shard,
                                       const std::vector<uint8_t>& global_blob,
                                       const FederationConfig& cfg,
                                       uint32_t client_id, uint32_t round);

// Same, decoded into the server-side update form.
ClientUpdate train_client_once(const Shard& shard,
                               const std::vector<uint8_t>& global_blob,
                               const FederationConfig& cfg, uint32_t client_id,
                               uint32_t round);

// In-process exchange: clients run as async tasks inside collect_updates.
class SimTransport final : public ServerTransport {
 public:
  SimTransport(const std::vector<Shard>* shards, const FederationConfig* cfg);

  void publish_global(uint32_t version, const std::vector<uint8_t>& blob,
                      const std::vector<uint32_t>& next_participants) override;
  std::vector<ClientUpdate> collect_updates(
      uint32_t round, const std::vector<uint32_t>& client_ids,
      double timeout_s) override;

 private:
  const std::vector<Shard>* shards_;
  const FederationConfig* cfg_;
  uint32_t published_version_ = 0;
  std::vector<uint8_t> blob_;
};

// Shared-directory exchange. Naming contract: global_r{v}.fedw is the model
// after v rounds; round r clients read global_r{r-1}.fedw and write
// client{c}_r{r}.fedw plus a zero-length client{c}_r{r}.done marker after the
// blob. Files appear atomically (write-then-rename). The .fedw update file is
// a plain ParamBlob, so n_k comes from the server's own shard sizes.
class DirTransport final : public ServerTransport {
 public:
  DirTransport(std::string dir, const FederationConfig* cfg,
               std::vector<uint64_t> client_train_sizes);

  void publish_global(uint32_t version, const std::vector<uint8_t>& blob,
                      const std::vector<uint32_t>& next_participants) override;
  std::vector<ClientUpdate> collect_updates(
      uint32_t round, const std::vector<uint32_t>& client_ids,
      double timeout_s) override;

 private:
  std::string dir_;
  const FederationConfig* cfg_;
  std::vector<uint64_t> train_sizes_;  // index = client_id - 1
};

// Client loop for DIR mode: polls for each round's global file, trains,
// writes the update blob and its marker.
void dir_client_loop(const std::string& dir, const Shard& shard,
                     const FederationConfig& cfg, uint32_t client_id);

// TCP exchange. The server accepts K clients (HELLO registers ids; a
// duplicate id is a protocol violation answered with ERR), then alternates
// GLOBAL / UPDATE per round and closes with DONE.
class NetServerTransport final : public ServerTransport {
 public:
  NetServerTransport(const std::string& address, const FederationConfig* cfg,
                     double accept_timeout_s);
  ~NetServerTransport() override;

  NetServerTransport(const NetServerTransport&) = delete;
  NetServerTransport& operator=(const NetServerTransport&) = delete;

  uint16_t port() const { return port_; }

  // Blocks until all K clients said HELLO.
  void wait_for_clients();

  void publish_global(uint32_t version, const std::vector<uint8_t>& blob,
                      const std::vector<uint32_t>& next_participants) override;
  std::vector<ClientUpdate> collect_updates(
      uint32_t round, const std::vector<uint32_t>& client_ids,
      double timeout_s) override;
  void finish() override;

 private:
  struct Conn;
  std::vector<std::unique_ptr<Conn>> conns_;  // index = client_id - 1
  const FederationConfig* cfg_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  double accept_timeout_s_ = 0.0;
  bool accepted_ = false;
};

// Client side of a NET run; returns after DONE, throws on ERR or disconnect.
void join_run(const std::string& address, uint32_t client_id,
              const Shard& shard, const FederationConfig& cfg);

// "host:port" -> (host, port)
std::pair<std::string, uint16_t> parse_address(const std::string& address);

// Atomic file helpers shared by DIR transport and checkpointing.
void write_file_atomic(const std::string& path,
                       std::span<const uint8_t> bytes);
std::vector<uint8_t> read_file(const std::string& path);

std::string global_blob_name(uint32_t version);
std::string client_blob_name(uint32_t client_id, uint32_t round);
std::string client_done_name(uint32_t client_id, uint32_t round);

}  // namespace fedsim
