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

#include "kvscope/analysis/redis_analysis.h"

#include <fstream>
#include <optional>

#include "kvscope/base/error.h"
#include "kvscope/state/model_schema.h"
#include "kvscope/trace/ctf_lite.h"

namespace kvscope {
namespace {

StateValue Str(std::string s) {
  return StateValue::Str(std::move(s));
}

}  // namespace

std::string AnalysisReportJson(const AnalysisReport& r) {
  std::string out = "{";
  auto field = [&](const char* name, int64_t value, bool last = false) {
    out += "\"";
    out += name;
    out += "\":";
    out += std::to_string(value);
    if (!last)
      out += ",";
  };
  field("events", static_cast<int64_t>(r.events));
  field("unknown_events", static_cast<int64_t>(r.unknown_events));
  field("unmatched", static_cast<int64_t>(r.unmatched));
  field("orphan_fd", static_cast<int64_t>(r.orphan_fd));
  field("contexts", static_cast<int64_t>(r.contexts));
  field("requests", static_cast<int64_t>(r.requests));
  field("warnings", static_cast<int64_t>(r.warnings));
  field("intervals", static_cast<int64_t>(r.intervals));
  field("quarks", static_cast<int64_t>(r.quarks));
  field("start_ts", r.start_ts);
  field("end_ts", r.end_ts, true);
  out += "}\n";
  return out;
}

RedisAnalysis::RedisAnalysis(StateSystem* model) : model_(model) {}

void RedisAnalysis::Handle(const TraceEvent& e) {
  ++report_.events;
  // First sighting fixes the tid's home host, whatever the event.
  connections_.ThreadKey(e.host, e.tid);
  switch (ClassifyEvent(e.name)) {
    case EventKind::kStartReadClientQuery:
      return OnStartRead(e);
    case EventKind::kEndReadClientQuery:
      return OnEndRead(e);
    case EventKind::kCallCommandStart:
      return OnCommandStart(e);
    case EventKind::kCallCommandEnd:
      return OnCommandEnd(e);
    case EventKind::kAddFileEvent:
      return OnAddFileEvent(e);
    case EventKind::kDeleteFileEvent:
      return OnDeleteFileEvent(e);
    case EventKind::kWriteToClientStart:
      return OnWriteStart(e);
    case EventKind::kWriteToClientEnd:
      return OnWriteEnd(e);
    case EventKind::kSslRead:
      return OnSslRead(e);
    case EventKind::kRunPendingReads:
      return OnRunPendingReads(e);
    case EventKind::kFreeClient:
      return OnFreeClient(e);
    case EventKind::kClusterSend:
      return OnClusterSend(e);
    case EventKind::kClusterRead:
      return OnClusterRead(e);
    case EventKind::kClusterProcessPacket:
      return OnProcessPacket(e);
    case EventKind::kHttpClientRequest:
    case EventKind::kHttpServerReceive:
    case EventKind::kHttpServerResponse:
    case EventKind::kHttpClientResponse:
      return;  // handled by the span reconstruction
    case EventKind::kUnknown:
      ++report_.unknown_events;
      return;
  }
}

ConnectionTracker::Lookup RedisAnalysis::Resolve(const TraceEvent& e,
                                                 bool opens) {
  auto fd = e.GetInt("fd");
  if (!fd)
    return {};
  ConnectionTracker::Lookup found =
      connections_.Resolve(e.host, *fd, e.ts, opens);
  if (found.orphan)
    ++report_.orphan_fd;
  if (found.created) {
    found.connection->type = InferConnectionType(e);
    if (ClassifyEvent(e.name) == EventKind::kClusterRead &&
        !e.FindAttr("conn_type"))
      found.connection->type = "cluster";
    found.connection->endpoint = EndpointOf(e);
    WriteConnectionOpen(e, *found.connection);
  }
  return found;
}

void RedisAnalysis::WriteConnectionOpen(const TraceEvent& e,
                                        const Connection& conn) {
  model_->Modify(e.ts, ConnectionAttr(conn.key, schema::kType),
                 Str(conn.type));
  model_->Modify(e.ts, ConnectionAttr(conn.key, schema::kDataStructure),
                 StateValue::Int(conn.fd));
  model_->Modify(
      e.ts, ConnectionAttr(conn.key, schema::kObjects),
      StateValue::Int(static_cast<int64_t>(connections_.live_clients(e.host))));
}

void RedisAnalysis::SetOperation(const TraceEvent& e, StateValue value) {
  model_->Modify(e.ts,
                 ThreadAttr(connections_.ThreadKey(e.host, e.tid),
                            schema::kOperation),
                 std::move(value));
}

void RedisAnalysis::SetPhase(const TraceEvent& e, const char* p) {
  model_->Modify(e.ts, EventLoopAttr(e.host, schema::kPhase), Str(p));
}

void RedisAnalysis::SetQueueLength(const TraceEvent& e, int64_t length) {
  model_->Modify(e.ts, EventLoopAttr(e.host, schema::kQueueLength),
                 StateValue::Int(length));
}

void RedisAnalysis::Unmatched(const TraceEvent& e) {
  ++report_.unmatched;
  std::string path = ThreadAttr(connections_.ThreadKey(e.host, e.tid),
                                schema::kOperation);
  Quark q = model_->GetQuark(path);
  StateValue previous = model_->Current(q);
  model_->Modify(e.ts, q, Str("Unmatched " + e.name));
  model_->Modify(e.ts, q, std::move(previous));
}

void RedisAnalysis::FinishRequest(Timestamp t, Connection& conn) {
  if (conn.request_id.empty())
    return;
  std::string thread_request =
      ThreadAttr(connections_.ThreadKey(conn.host, conn.command_tid),
                 schema::kRequest);
  Quark tq = model_->GetQuark(thread_request);
  if (model_->Current(tq) == StateValue::Str(conn.request_id))
    model_->Modify(t, tq, StateValue::Null());
  if (auto root = model_->tree().Find(std::string(schema::kRequests) + "/" +
                                      conn.request_id))
    model_->Retire(t, *root);
  conn.request_id.clear();
  conn.command_open = false;
}

void RedisAnalysis::OnStartRead(const TraceEvent& e) {
  auto found = Resolve(e, /*opens=*/true);
  if (!found.connection)
    return;
  Connection& conn = *found.connection;
  conn.reading = true;
  conn.read_start = e.ts;
  conn.read_start_seq = e.seq;
  if (auto mem = e.GetInt("mem"))
    model_->Modify(e.ts, ConnectionAttr(conn.key, schema::kMemory),
                   StateValue::Int(*mem));
  if (!found.created) {
    model_->Modify(e.ts, ConnectionAttr(conn.key, schema::kObjects),
                   StateValue::Int(static_cast<int64_t>(
                       connections_.live_clients(e.host))));
  }
  SetOperation(e, Str("Read"));
  SetPhase(e, phase::kReadingClient);
}

void RedisAnalysis::OnEndRead(const TraceEvent& e) {
  auto fd = e.GetInt("fd");
  Connection* conn = fd ? connections_.Find(e.host, *fd) : nullptr;
  if (!conn || conn->freed || !conn->reading) {
    Unmatched(e);
    return;
  }
  conn->reading = false;
  if (hosts_[e.host].queue_length == 0)
    SetPhase(e, phase::kPolling);
}

void RedisAnalysis::OnCommandStart(const TraceEvent& e) {
  auto found = Resolve(e, /*opens=*/false);
  if (!found.connection || found.orphan)
    return;
  Connection& conn = *found.connection;
  FinishRequest(e.ts, conn);
  std::string command(e.GetString("command").value_or(""));
  const std::string& id = connections_.BeginRequest(conn);
  ++report_.requests;
  conn.command_open = true;
  conn.command = command;
  conn.command_start = e.ts;
  conn.command_tid = e.tid;
  hosts_[e.host].executing_fd = conn.fd;

  model_->Modify(e.ts, RequestAttr(id, schema::kConnection), Str(conn.key));
  model_->Modify(e.ts, RequestAttr(id, schema::kDataStructure),
                 Str("query_buffer"));
  model_->Modify(e.ts, RequestAttr(id, schema::kType),
                 Str(std::string(CommandType(command))));
  SetOperation(e, Str(command));
  model_->Modify(e.ts,
                 ThreadAttr(connections_.ThreadKey(e.host, e.tid),
                            schema::kRequest),
                 Str(id));
  SetPhase(e, phase::kExecutingCommand);
}

void RedisAnalysis::OnCommandEnd(const TraceEvent& e) {
  auto fd = e.GetInt("fd");
  Connection* conn = fd ? connections_.Find(e.host, *fd) : nullptr;
  if (!conn || conn->freed || !conn->command_open) {
    Unmatched(e);
    return;
  }
  conn->command_open = false;
  HostState& host = hosts_[e.host];
  if (host.executing_fd == conn->fd)
    host.executing_fd = -1;
  SetOperation(e, StateValue::Null());
}

void RedisAnalysis::OnAddFileEvent(const TraceEvent& e) {
  HostState& host = hosts_[e.host];
  SetQueueLength(e, ++host.queue_length);
  if (host.executing_fd < 0)
    return;
  Connection* conn = connections_.Find(e.host, host.executing_fd);
  if (!conn || conn->request_id.empty() || conn->command != "publish")
    return;
  model_->Modify(e.ts, RequestAttr(conn->request_id, schema::kDataStructure),
                 Str("el_queue"));
  model_->Modify(e.ts, RequestAttr(conn->request_id, schema::kType),
                 Str("write"));
}

void RedisAnalysis::OnDeleteFileEvent(const TraceEvent& e) {
  HostState& host = hosts_[e.host];
  if (host.queue_length == 0) {
    ++report_.warnings;
    return;
  }
  SetQueueLength(e, --host.queue_length);
}

void RedisAnalysis::OnWriteStart(const TraceEvent& e) {
  auto found = Resolve(e, /*opens=*/false);
  if (!found.connection || found.orphan)
    return;
  found.connection->writing = true;
  found.connection->write_start = e.ts;
  SetOperation(e, Str("Write to client"));
  SetPhase(e, phase::kWritingClient);
}

void RedisAnalysis::OnWriteEnd(const TraceEvent& e) {
  auto fd = e.GetInt("fd");
  Connection* conn = fd ? connections_.Find(e.host, *fd) : nullptr;
  if (!conn || conn->freed || !conn->writing) {
    Unmatched(e);
    return;
  }
  conn->writing = false;
  SetOperation(e, StateValue::Null());
  SetPhase(e, phase::kPolling);
  if (!conn->command_open)
    FinishRequest(e.ts, *conn);
}

void RedisAnalysis::OnSslRead(const TraceEvent& e) {
  auto found = Resolve(e, /*opens=*/false);
  SetOperation(e, Str("Reading SSL bytes=" +
                      std::to_string(e.GetInt("bytes_read").value_or(0))));
  if (!found.connection || found.orphan)
    return;
  bool pending = e.GetInt("pending").value_or(0) != 0;
  found.connection->ssl_pending = pending;
  found.connection->in_pending_list = pending;
}

void RedisAnalysis::OnRunPendingReads(const TraceEvent& e) {
  SetPhase(e, phase::kRunningTask);
  connections_.ForEachOnHost(e.host, [](Connection& conn) {
    conn.in_pending_list = false;
  });
}

void RedisAnalysis::OnFreeClient(const TraceEvent& e) {
  SetOperation(e, Str("FREEING CLIENT"));
  auto found = Resolve(e, /*opens=*/false);
  if (!found.connection || found.orphan)
    return;
  Connection& conn = *found.connection;
  FinishRequest(e.ts, conn);
  if (hosts_[e.host].executing_fd == conn.fd)
    hosts_[e.host].executing_fd = -1;
  connections_.Free(conn, e.ts, e.tid);
  if (auto root = model_->tree().Find(std::string(schema::kConnections) +
                                      "/" + conn.key))
    model_->Retire(e.ts, *root);
}

void RedisAnalysis::OnClusterSend(const TraceEvent& e) {
  bus_volume_ += e.GetInt("bytes").value_or(0);
  model_->Modify(e.ts, BusAttr(schema::kType),
                 Str(std::string(e.GetString("kind").value_or(""))));
  model_->Modify(e.ts, BusAttr(schema::kVolume),
                 StateValue::Int(bus_volume_));
  HostState& host = hosts_[e.host];
  if (host.executing_fd < 0)
    return;
  Connection* conn = connections_.Find(e.host, host.executing_fd);
  if (conn && !conn->request_id.empty()) {
    model_->Modify(e.ts,
                   RequestAttr(conn->request_id, schema::kDataStructure),
                   Str("cluster_bus"));
  }
}

void RedisAnalysis::OnClusterRead(const TraceEvent& e) {
  Resolve(e, /*opens=*/false);
  HostState& host = hosts_[e.host];
  if (auto msg = e.GetInt("msg_id"))
    host.reads_by_msg[*msg] = OpenRead{e.tid, e.ts};
  else
    host.reads_by_tid[e.tid].push_back(e.ts);
  SetOperation(e, Str("Cluster read"));
}

void RedisAnalysis::OnProcessPacket(const TraceEvent& e) {
  HostState& host = hosts_[e.host];
  bool matched = false;
  if (auto msg = e.GetInt("msg_id")) {
    matched = host.reads_by_msg.erase(*msg) > 0;
  }
  if (!matched) {
    auto it = host.reads_by_tid.find(e.tid);
    if (it != host.reads_by_tid.end() && !it->second.empty()) {
      it->second.pop_back();
      matched = true;
    }
  }
  if (!matched) {
    Unmatched(e);
    return;
  }
  SetOperation(e, StateValue::Null());
}

AnalysisReport RedisAnalysis::Finalize(Timestamp t_end) {
  if (!finalized_) {
    model_->CloseAll(std::max(t_end, model_->frontier()));
    finalized_ = true;
    report_.contexts = connections_.contexts_opened();
    report_.intervals = model_->intervals_emitted();
    report_.quarks = model_->tree().size();
    report_.end_ts = std::max(t_end, model_->frontier());
  }
  return report_;
}

AnalysisReport AnalyzeFile(const std::string& merged_path,
                           const std::string& sht_path,
                           StateSystemOptions options) {
  std::ifstream in(merged_path);
  if (!in)
    throw DataError(ErrorCode::kIoFailure, merged_path, 0, "cannot open");
  StreamReader reader(in, merged_path, StreamOrder::kMerged);
  TraceEvent event;
  bool have = reader.Next(&event);
  Timestamp start = have ? event.ts : 0;
  StateSystem model(sht_path, start, options);
  RedisAnalysis analysis(&model);
  Timestamp last = start;
  while (have) {
    analysis.Handle(event);
    last = event.ts;
    have = reader.Next(&event);
  }
  AnalysisReport report = analysis.Finalize(last);
  report.start_ts = start;
  return report;
}

}  // namespace kvscope
