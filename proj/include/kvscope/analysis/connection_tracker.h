/*
 * Copyright (C) 2026 The kvscope Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef INCLUDE_KVSCOPE_ANALYSIS_CONNECTION_TRACKER_H_
#define INCLUDE_KVSCOPE_ANALYSIS_CONNECTION_TRACKER_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "absl/container/flat_hash_map.h"
#include "kvscope/trace/event.h"

namespace kvscope {

// Socket endpoints carried by events of connections opened on behalf of an
// instrumented service.
struct Endpoint {
  std::string src_addr;
  int64_t src_port = 0;
  std::string dst_addr;
  int64_t dst_port = 0;
};

std::optional<Endpoint> EndpointOf(const TraceEvent& event);

// Per (host, fd) connection context. The fd is reused by the kernel, so each
// context carries a generation; <fd>#<gen> names one connection for the life
// of the experiment. Generations are counted per fd number across all hosts,
// which keeps the name unique experiment-wide.
struct Connection {
  std::string host;
  int64_t fd = 0;
  int64_t gen = 0;
  std::string key;  // "<fd>#<gen>"
  std::string type = "client";
  Timestamp open_ts = 0;
  bool freed = false;
  Timestamp freed_ts = 0;
  int64_t freed_tid = 0;

  bool reading = false;
  Timestamp read_start = 0;
  int64_t read_start_seq = 0;
  bool writing = false;
  Timestamp write_start = 0;

  bool ssl_pending = false;
  bool in_pending_list = false;

  int64_t request_seq = 0;
  std::string request_id;  // empty when no request is live
  bool command_open = false;
  std::string command;
  Timestamp command_start = 0;
  int64_t command_tid = 0;

  std::optional<Endpoint> endpoint;
};

class ConnectionTracker {
 public:
  struct Lookup {
    Connection* connection = nullptr;
    bool created = false;
    // The fd had been freed and the event does not open a new connection.
    bool orphan = false;
  };

  // Resolves the context an event on (host, fd) refers to. `opens` marks
  // events that start a new connection on a freed fd (a fresh read).
  Lookup Resolve(const std::string& host, int64_t fd, Timestamp ts,
                 bool opens);
  Connection* Find(const std::string& host, int64_t fd);

  void Free(Connection& connection, Timestamp ts, int64_t tid);

  // Opens the next request of the connection and returns its id,
  // "<host>:<fd>#<gen>:<n>".
  const std::string& BeginRequest(Connection& connection);

  // "<tid>", or "<tid>@<host>" when the tid was first seen on another host.
  std::string ThreadKey(const std::string& host, int64_t tid);

  uint64_t contexts_opened() const { return contexts_opened_; }
  size_t live_clients(const std::string& host) const;

  template <typename Fn>
  void ForEachOnHost(const std::string& host, Fn&& fn) {
    for (auto& [key, conn] : connections_) {
      if (key.first == host)
        fn(conn);
    }
  }

 private:
  Connection& Open(const std::string& host, int64_t fd, Timestamp ts);

  absl::flat_hash_map<std::pair<std::string, int64_t>, Connection>
      connections_;
  absl::flat_hash_map<int64_t, int64_t> next_gen_;
  absl::flat_hash_map<int64_t, std::string> tid_home_;
  absl::flat_hash_map<std::string, size_t> live_clients_;
  uint64_t contexts_opened_ = 0;
};

// Port of the cluster bus; connections reporting it are inter-node links.
inline constexpr int64_t kClusterBusPort = 16379;

// Connection type from event attributes: an explicit conn_type wins, then
// the bus port, then "client".
std::string InferConnectionType(const TraceEvent& event);

// "read" or "write" for a command name.
std::string_view CommandType(std::string_view command);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_ANALYSIS_CONNECTION_TRACKER_H_
