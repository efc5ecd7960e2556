#include "fedsim/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include "fedsim/codec.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/message.hpp"

namespace fedsim {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

Clock::time_point deadline_after(double seconds) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(
                            std::chrono::duration<double>(seconds));
}

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                  deadline - Clock::now())
                  .count();
  return left < 0 ? 0 : static_cast<int>(std::min<long long>(left, 100));
}

constexpr int kPollSleepMs = 2;

}  // namespace

void write_file_atomic(const std::string& path,
                       std::span<const uint8_t> bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

std::string global_blob_name(uint32_t version) {
  return "global_r" + std::to_string(version) + ".fedw";
}
std::string client_blob_name(uint32_t client_id, uint32_t round) {
  return "client" + std::to_string(client_id) + "_r" + std::to_string(round) +
         ".fedw";
}
std::string client_done_name(uint32_t client_id, uint32_t round) {
  return "client" + std::to_string(client_id) + "_r" + std::to_string(round) +
         ".done";
}

std::vector<uint8_t> train_client_blob(const Shard& shard,
                                       const std::vector<uint8_t>& global_blob,
                                       const FederationConfig& cfg,
                                       uint32_t client_id, uint32_t round) {
  ParamSet broadcast = decode_params(global_blob);
  ParamSet base = client_round_base(broadcast, cfg, client_id, round);
  ClientUpdate update =
      local_train(shard.train, base, cfg, client_id, round);
  return encode_params(update.params, cfg.wire_dtype);
}

ClientUpdate train_client_once(const Shard& shard,
                               const std::vector<uint8_t>& global_blob,
                               const FederationConfig& cfg, uint32_t client_id,
                               uint32_t round) {
  std::vector<uint8_t> blob =
      train_client_blob(shard, global_blob, cfg, client_id, round);
  ClientUpdate update;
  update.client_id = client_id;
  update.round = round;
  update.params = decode_params(blob);
  update.n_k = shard.train.size();
  update.local_epochs_run = cfg.local_epochs;
  return update;
}

// ---------------------------------------------------------------- SIM

SimTransport::SimTransport(const std::vector<Shard>* shards,
                           const FederationConfig* cfg)
    : shards_(shards), cfg_(cfg) {}

void SimTransport::publish_global(uint32_t version,
                                  const std::vector<uint8_t>& blob,
                                  const std::vector<uint32_t>&) {
  published_version_ = version;
  blob_ = blob;
}

std::vector<ClientUpdate> SimTransport::collect_updates(
    uint32_t round, const std::vector<uint32_t>& client_ids, double) {
  if (published_version_ + 1 != round)
    throw ProtocolError("collect_updates round does not match published model");
  std::vector<std::future<ClientUpdate>> futures;
  for (uint32_t id : client_ids)
    futures.push_back(std::async(std::launch::async, [this, id, round] {
      return train_client_once((*shards_)[id - 1], blob_, *cfg_, id, round);
    }));
  std::vector<ClientUpdate> updates;
  for (auto& f : futures) updates.push_back(f.get());
  std::sort(updates.begin(), updates.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  return updates;
}

// ---------------------------------------------------------------- DIR

DirTransport::DirTransport(std::string dir, const FederationConfig* cfg,
                           std::vector<uint64_t> client_train_sizes)
    : dir_(std::move(dir)), cfg_(cfg),
      train_sizes_(std::move(client_train_sizes)) {
  fs::create_directories(dir_);
}

void DirTransport::publish_global(uint32_t version,
                                  const std::vector<uint8_t>& blob,
                                  const std::vector<uint32_t>&) {
  write_file_atomic((fs::path(dir_) / global_blob_name(version)).string(),
                    blob);
}

std::vector<ClientUpdate> DirTransport::collect_updates(
    uint32_t round, const std::vector<uint32_t>& client_ids,
    double timeout_s) {
  auto deadline = deadline_after(timeout_s);
  for (;;) {
    bool all = true;
    for (uint32_t id : client_ids)
      if (!fs::exists(fs::path(dir_) / client_done_name(id, round))) {
        all = false;
        break;
      }
    if (all) break;
    if (Clock::now() >= deadline)
      throw RoundTimeoutError("round " + std::to_string(round) +
                              ": not all client markers appeared in " + dir_);
    std::this_thread::sleep_for(std::chrono::milliseconds(kPollSleepMs));
  }

  std::vector<ClientUpdate> updates;
  for (uint32_t id : client_ids) {
    std::string file = (fs::path(dir_) / client_blob_name(id, round)).string();
    ClientUpdate u;
    u.client_id = id;
    u.round = round;
    try {
      u.params = decode_params(read_file(file));
    } catch (const DecodeError& e) {
      throw DecodeError(e.kind(), file + ": " + e.what());
    }
    u.n_k = train_sizes_.at(id - 1);
    u.local_epochs_run = cfg_->local_epochs;
    updates.push_back(std::move(u));
  }
  return updates;
}

void dir_client_loop(const std::string& dir, const Shard& shard,
                     const FederationConfig& cfg, uint32_t client_id) {
  for (uint32_t round = 1; round <= cfg.rounds; ++round) {
    fs::path global = fs::path(dir) / global_blob_name(round - 1);
    auto deadline = deadline_after(cfg.round_timeout_s);
    while (!fs::exists(global)) {
      if (Clock::now() >= deadline)
        throw RoundTimeoutError("client " + std::to_string(client_id) +
                                ": no global model for round " +
                                std::to_string(round));
      std::this_thread::sleep_for(std::chrono::milliseconds(kPollSleepMs));
    }
    std::vector<uint8_t> blob =
        train_client_blob(shard, read_file(global.string()), cfg, client_id,
                          round);
    write_file_atomic(
        (fs::path(dir) / client_blob_name(client_id, round)).string(), blob);
    write_file_atomic(
        (fs::path(dir) / client_done_name(client_id, round)).string(), {});
  }
}

// ---------------------------------------------------------------- NET

std::pair<std::string, uint16_t> parse_address(const std::string& address) {
  size_t colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size())
    throw ConfigError("net_address must be host:port, got '" + address + "'");
  std::string host = address.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad port in net_address '" + address + "'");
  }
  if (port < 0 || port > 65535)
    throw ConfigError("port out of range in net_address '" + address + "'");
  return {host, static_cast<uint16_t>(port)};
}

namespace {

void send_all(int fd, std::span<const uint8_t> bytes) {
  size_t sent = 0;
  while (sent < bytes.size()) {
    ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent,
                       MSG_NOSIGNAL);
    if (n <= 0) throw IoError("send failed: " + std::string(strerror(errno)));
    sent += static_cast<size_t>(n);
  }
}

void send_message(int fd, const Message& msg) {
  send_all(fd, encode_message(msg));
}

// Reads exactly n bytes; throws IoError on EOF/error, RoundTimeoutError at
// the deadline.
void read_exact(int fd, uint8_t* buf, size_t n, Clock::time_point deadline) {
  size_t got = 0;
  while (got < n) {
    pollfd pfd{fd, POLLIN, 0};
    int pr = ::poll(&pfd, 1, remaining_ms(deadline));
    if (pr < 0) throw IoError("poll failed");
    if (pr == 0) {
      if (Clock::now() >= deadline)
        throw RoundTimeoutError("peer did not respond in time");
      continue;
    }
    ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) throw IoError("connection closed by peer");
    if (r < 0) throw IoError("recv failed: " + std::string(strerror(errno)));
    got += static_cast<size_t>(r);
  }
}

Message read_message(int fd, Clock::time_point deadline) {
  std::vector<uint8_t> buf(kMessageHeaderSize);
  read_exact(fd, buf.data(), buf.size(), deadline);
  MessageHeader h = decode_message_header(buf);
  buf.resize(kMessageHeaderSize + size_t(h.payload_len) + 4);
  read_exact(fd, buf.data() + kMessageHeaderSize, buf.size() - kMessageHeaderSize,
             deadline);
  return decode_message(buf);
}

std::vector<uint8_t> update_payload(uint64_t n_k,
                                    std::span<const uint8_t> blob) {
  std::vector<uint8_t> payload;
  payload.reserve(8 + blob.size());
  for (int i = 0; i < 8; ++i) payload.push_back((n_k >> (8 * i)) & 0xFF);
  payload.insert(payload.end(), blob.begin(), blob.end());
  return payload;
}

}  // namespace

struct NetServerTransport::Conn {
  int fd = -1;
  bool alive = false;

  ~Conn() {
    if (fd >= 0) ::close(fd);
  }
};

NetServerTransport::NetServerTransport(const std::string& address,
                                       const FederationConfig* cfg,
                                       double accept_timeout_s)
    : cfg_(cfg), accept_timeout_s_(accept_timeout_s) {
  auto [host, port] = parse_address(address);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("cannot create server socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw ConfigError("cannot parse host '" + host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    int err = errno;
    ::close(listen_fd_);
    throw IoError("cannot bind " + address + ": " + strerror(err));
  }
  if (::listen(listen_fd_, static_cast<int>(cfg_->clients)) < 0) {
    ::close(listen_fd_);
    throw IoError("listen failed");
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  conns_.resize(cfg_->clients);
  for (auto& c : conns_) c = std::make_unique<Conn>();
}

NetServerTransport::~NetServerTransport() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void NetServerTransport::wait_for_clients() {
  if (accepted_) return;
  auto deadline = deadline_after(accept_timeout_s_);
  uint32_t registered = 0;
  while (registered < cfg_->clients) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    int pr = ::poll(&pfd, 1, remaining_ms(deadline));
    if (pr < 0) throw IoError("poll failed while accepting clients");
    if (pr == 0) {
      if (Clock::now() >= deadline)
        throw RoundTimeoutError("only " + std::to_string(registered) + " of " +
                                std::to_string(cfg_->clients) +
                                " clients joined in time");
      continue;
    }
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    try {
      Message hello = read_message(fd, deadline);
      if (hello.type != MsgType::kHello)
        throw ProtocolError("expected HELLO");
      uint32_t id = hello.client_id;
      if (id < 1 || id > cfg_->clients)
        throw ProtocolError("client_id out of range");
      if (conns_[id - 1]->alive) {
        send_message(fd, {MsgType::kErr, 0, id,
                          encode_err_payload(ErrCode::kDuplicateClient,
                                             "duplicate client_id")});
        ::close(fd);
        continue;
      }
      conns_[id - 1]->fd = fd;
      conns_[id - 1]->alive = true;
      ++registered;
    } catch (const ProtocolError& e) {
      send_message(fd, {MsgType::kErr, 0, 0,
                        encode_err_payload(ErrCode::kProtocol, e.what())});
      ::close(fd);
    } catch (const std::exception&) {
      ::close(fd);
    }
  }
  accepted_ = true;
}

void NetServerTransport::publish_global(
    uint32_t version, const std::vector<uint8_t>& blob,
    const std::vector<uint32_t>& next_participants) {
  wait_for_clients();
  Message msg{MsgType::kGlobal, version + 1, 0, blob};
  for (uint32_t id : next_participants) {
    Conn& conn = *conns_[id - 1];
    if (!conn.alive)
      throw RoundTimeoutError("client " + std::to_string(id) +
                              " is not connected");
    send_message(conn.fd, msg);
  }
}

std::vector<ClientUpdate> NetServerTransport::collect_updates(
    uint32_t round, const std::vector<uint32_t>& client_ids,
    double timeout_s) {
  auto deadline = deadline_after(timeout_s);
  std::vector<uint32_t> pending = client_ids;
  std::vector<ClientUpdate> updates;

  while (!pending.empty()) {
    std::vector<pollfd> pfds;
    std::vector<uint32_t> pfd_ids;
    for (uint32_t id : pending) {
      Conn& conn = *conns_[id - 1];
      if (!conn.alive)
        throw RoundTimeoutError("client " + std::to_string(id) +
                                " disconnected mid-round");
      pfds.push_back({conn.fd, POLLIN, 0});
      pfd_ids.push_back(id);
    }
    int pr = ::poll(pfds.data(), pfds.size(), remaining_ms(deadline));
    if (pr < 0) throw IoError("poll failed while collecting updates");
    if (pr == 0) {
      if (Clock::now() >= deadline)
        throw RoundTimeoutError("round " + std::to_string(round) +
                                ": missing updates after timeout");
      continue;
    }
    for (size_t i = 0; i < pfds.size(); ++i) {
      if (!(pfds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      uint32_t id = pfd_ids[i];
      Conn& conn = *conns_[id - 1];
      Message msg;
      try {
        msg = read_message(conn.fd, deadline);
      } catch (const IoError&) {
        conn.alive = false;
        throw RoundTimeoutError("client " + std::to_string(id) +
                                " disconnected mid-round");
      }
      if (msg.type != MsgType::kUpdate) {
        send_message(conn.fd, {MsgType::kErr, round, id,
                               encode_err_payload(ErrCode::kProtocol,
                                                  "expected UPDATE")});
        continue;
      }
      if (msg.round != round) {
        send_message(conn.fd,
                     {MsgType::kErr, round, id,
                      encode_err_payload(ErrCode::kStaleRound,
                                         "update for round " +
                                             std::to_string(msg.round) +
                                             " during round " +
                                             std::to_string(round))});
        continue;  // dropped, not aggregated
      }
      if (msg.payload.size() < 8)
        throw ProtocolError("UPDATE payload too short");
      uint64_t n_k = 0;
      for (int b = 0; b < 8; ++b)
        n_k |= uint64_t(msg.payload[b]) << (8 * b);
      ClientUpdate u;
      u.client_id = id;
      u.round = round;
      u.params = decode_params(
          {msg.payload.data() + 8, msg.payload.size() - 8});
      u.n_k = n_k;
      u.local_epochs_run = cfg_->local_epochs;
      updates.push_back(std::move(u));
      pending.erase(std::find(pending.begin(), pending.end(), id));
    }
  }
  std::sort(updates.begin(), updates.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  return updates;
}

void NetServerTransport::finish() {
  for (auto& conn : conns_) {
    if (!conn->alive) continue;
    try {
      send_message(conn->fd, {MsgType::kDone, 0, 0, {}});
    } catch (const IoError&) {
    }
    ::close(conn->fd);
    conn->fd = -1;
    conn->alive = false;
  }
}

void join_run(const std::string& address, uint32_t client_id,
              const Shard& shard, const FederationConfig& cfg) {
  auto [host, port] = parse_address(address);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw IoError("cannot create client socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw ConfigError("cannot parse host '" + host + "'");
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    int err = errno;
    ::close(fd);
    throw IoError("cannot connect to " + address + ": " + strerror(err));
  }

  try {
    send_message(fd, {MsgType::kHello, 0, client_id, {}});
    // The server may legitimately sit in another client's round for a while;
    // wait noticeably longer than one round timeout before giving up.
    double wait_s = cfg.round_timeout_s * 2 + 60.0;
    for (;;) {
      Message msg = read_message(fd, deadline_after(wait_s));
      if (msg.type == MsgType::kDone) break;
      if (msg.type == MsgType::kErr) {
        auto [code, reason] = decode_err_payload(msg.payload);
        throw ProtocolError("server error " +
                            std::to_string(static_cast<int>(code)) + ": " +
                            reason);
      }
      if (msg.type != MsgType::kGlobal)
        throw ProtocolError("unexpected message from server");
      uint32_t round = msg.round;
      std::vector<uint8_t> blob =
          train_client_blob(shard, msg.payload, cfg, client_id, round);
      send_message(fd, {MsgType::kUpdate, round, client_id,
                        update_payload(shard.train.size(), blob)});
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

}  // namespace fedsim
