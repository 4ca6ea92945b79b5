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

#include "kvscope/analysis/connection_tracker.h"

#include <algorithm>
#include <array>

#include "kvscope/state/model_schema.h"

namespace kvscope {

std::optional<Endpoint> EndpointOf(const TraceEvent& event) {
  auto src = event.GetString("src_addr");
  auto dst = event.GetString("dst_addr");
  auto sport = event.GetInt("src_port");
  auto dport = event.GetInt("dst_port");
  if (!src || !dst || !sport || !dport)
    return std::nullopt;
  return Endpoint{std::string(*src), *sport, std::string(*dst), *dport};
}

ConnectionTracker::Lookup ConnectionTracker::Resolve(const std::string& host,
                                                     int64_t fd, Timestamp ts,
                                                     bool opens) {
  Lookup out;
  auto it = connections_.find(std::make_pair(host, fd));
  if (it == connections_.end()) {
    out.connection = &Open(host, fd, ts);
    out.created = true;
    return out;
  }
  if (it->second.freed) {
    if (opens) {
      out.connection = &Open(host, fd, ts);
      out.created = true;
    } else {
      out.connection = &it->second;
      out.orphan = true;
    }
    return out;
  }
  out.connection = &it->second;
  return out;
}

Connection* ConnectionTracker::Find(const std::string& host, int64_t fd) {
  auto it = connections_.find(std::make_pair(host, fd));
  return it == connections_.end() ? nullptr : &it->second;
}

Connection& ConnectionTracker::Open(const std::string& host, int64_t fd,
                                    Timestamp ts) {
  Connection conn;
  conn.host = host;
  conn.fd = fd;
  conn.gen = next_gen_[fd]++;
  conn.key = ConnectionKey(fd, conn.gen);
  conn.open_ts = ts;
  ++contexts_opened_;
  ++live_clients_[host];
  auto [it, inserted] =
      connections_.insert_or_assign(std::make_pair(host, fd), std::move(conn));
  return it->second;
}

void ConnectionTracker::Free(Connection& connection, Timestamp ts,
                             int64_t tid) {
  if (connection.freed)
    return;
  connection.freed = true;
  connection.freed_ts = ts;
  connection.freed_tid = tid;
  connection.reading = false;
  connection.writing = false;
  connection.in_pending_list = false;
  connection.ssl_pending = false;
  connection.command_open = false;
  connection.request_id.clear();
  size_t& live = live_clients_[connection.host];
  if (live > 0)
    --live;
}

const std::string& ConnectionTracker::BeginRequest(Connection& connection) {
  ++connection.request_seq;
  connection.request_id = connection.host + ":" + connection.key + ":" +
                          std::to_string(connection.request_seq);
  return connection.request_id;
}

std::string ConnectionTracker::ThreadKey(const std::string& host,
                                         int64_t tid) {
  auto [it, inserted] = tid_home_.try_emplace(tid, host);
  if (it->second == host)
    return std::to_string(tid);
  return std::to_string(tid) + "@" + host;
}

size_t ConnectionTracker::live_clients(const std::string& host) const {
  auto it = live_clients_.find(host);
  return it == live_clients_.end() ? 0 : it->second;
}

std::string InferConnectionType(const TraceEvent& event) {
  if (auto type = event.GetString("conn_type"))
    return std::string(*type);
  for (const char* key : {"port", "dst_port", "src_port"}) {
    if (event.GetInt(key) == kClusterBusPort)
      return "cluster";
  }
  return "client";
}

std::string_view CommandType(std::string_view command) {
  static constexpr std::array<std::string_view, 16> kWrites = {
      "append", "decr",  "del",   "expire", "hset",  "incr",
      "lpop",   "lpush", "mset",  "publish", "rpop", "rpush",
      "sadd",   "set",   "setex", "zadd"};
  std::string lower(command);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return std::binary_search(kWrites.begin(), kWrites.end(), lower) ? "write"
                                                                   : "read";
}

}  // namespace kvscope
