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

#include "kvscope/flows/flows.h"

#include <algorithm>
#include <fstream>
#include <limits>

#include "kvscope/base/error.h"
#include "kvscope/trace/ctf_lite.h"

namespace kvscope {
namespace {

constexpr size_t kNoFlow = std::numeric_limits<size_t>::max();

std::string Ref(const TraceEvent& e) {
  return e.host + ":" + std::to_string(e.seq);
}

}  // namespace

Timestamp RequestFlow::start() const {
  Timestamp t = std::numeric_limits<Timestamp>::max();
  for (const auto& s : segments)
    t = std::min(t, s.t0);
  return segments.empty() ? 0 : t;
}

Timestamp RequestFlow::end() const {
  Timestamp t = 0;
  for (const auto& s : segments)
    t = std::max(t, s.t1);
  return t;
}

size_t FlowSet::complete_count() const {
  return static_cast<size_t>(std::count_if(
      flows.begin(), flows.end(), [](const auto& f) { return f.complete; }));
}

void FlowBuilder::ClosePart(size_t flow) {
  Progress& p = progress_[flow];
  --p.open_parts;
  if (p.trunk_closed && p.open_parts == 0)
    flows_[flow].complete = true;
}

void FlowBuilder::CloseBranchAtPacket(Branch& b) {
  flows_[b.flow].segments.push_back(FlowSegment{
      "Cluster read", std::string(b.branch), b.tid, b.branch, b.read_ts,
      b.packet_ts, b.read_ref, b.packet_ref, b.fd, b.msg_id});
  ClosePart(b.flow);
}

// A processed packet whose next event on the host is not the matching
// subscriber write ends its branch at the packet.
void FlowBuilder::FlushProcessed(const std::string& host,
                                 const TraceEvent* next) {
  auto it = just_processed_.find(host);
  if (it == just_processed_.end())
    return;
  if (next && ClassifyEvent(next->name) == EventKind::kWriteToClientStart &&
      next->GetInt("msg_id") == it->second.second) {
    return;
  }
  auto b = branches_.find(it->second);
  if (b != branches_.end()) {
    CloseBranchAtPacket(b->second);
    branches_.erase(b);
  }
  just_processed_.erase(it);
}

void FlowBuilder::Add(const TraceEvent& e) {
  FlushProcessed(e.host, &e);
  EventKind kind = ClassifyEvent(e.name);
  std::optional<int64_t> fd = e.GetInt("fd");
  // Connection resolution mirrors the state analysis so request ids agree.
  ConnectionTracker::Lookup found;
  switch (kind) {
    case EventKind::kStartReadClientQuery:
    case EventKind::kCallCommandStart:
    case EventKind::kWriteToClientStart:
    case EventKind::kSslRead:
    case EventKind::kFreeClient:
    case EventKind::kClusterRead:
      if (fd) {
        found = connections_.Resolve(
            e.host, *fd, e.ts, kind == EventKind::kStartReadClientQuery);
        if (found.created)
          found.connection->endpoint = EndpointOf(e);
      }
      break;
    default:
      break;
  }
  Connection* conn = found.orphan ? nullptr : found.connection;

  switch (kind) {
    case EventKind::kStartReadClientQuery:
      if (conn) {
        conn->reading = true;
        conn->read_start = e.ts;
        conn->read_start_seq = e.seq;
      }
      break;
    case EventKind::kEndReadClientQuery:
      if (fd) {
        if (Connection* c = connections_.Find(e.host, *fd))
          c->reading = false;
      }
      break;
    case EventKind::kCallCommandStart: {
      if (!conn)
        break;
      RequestFlow flow;
      flow.id = connections_.BeginRequest(*conn);
      flow.origin = e.host;
      flow.command = std::string(e.GetString("command").value_or(""));
      flow.endpoint = conn->endpoint;
      if (conn->reading) {
        flow.segments.push_back(FlowSegment{
            "Read", e.host, e.tid, "", conn->read_start, e.ts,
            e.host + ":" + std::to_string(conn->read_start_seq), Ref(e),
            *fd, -1});
      }
      size_t index = flows_.size();
      flows_.push_back(std::move(flow));
      progress_.emplace_back();
      cursors_[HostFd(e.host, *fd)] = Cursor{index, Ref(e), e.ts, e.tid};
      executing_[e.host] = HostFd(e.host, *fd);
      break;
    }
    case EventKind::kCallCommandEnd:
      if (fd) {
        auto it = cursors_.find(HostFd(e.host, *fd));
        if (it != cursors_.end())
          it->second.done = true;
        auto ex = executing_.find(e.host);
        if (ex != executing_.end() && ex->second.second == *fd)
          executing_.erase(ex);
      }
      break;
    case EventKind::kClusterSend: {
      int64_t msg = e.GetInt("msg_id").value_or(-1);
      std::string dst(e.GetString("dst").value_or(""));
      Send send{kNoFlow, Ref(e), e.ts, e.tid, e.host};
      auto ex = executing_.find(e.host);
      if (ex != executing_.end()) {
        auto cur = cursors_.find(ex->second);
        if (cur != cursors_.end()) {
          Cursor& c = cur->second;
          send.flow = c.flow;
          if (!c.sent) {
            RequestFlow& flow = flows_[c.flow];
            flow.segments.push_back(FlowSegment{flow.command, e.host, e.tid,
                                                "", c.command_ts, e.ts,
                                                c.command_ref, Ref(e),
                                                ex->second.second, msg});
            c.sent = true;
            progress_[c.flow].trunk_closed = true;
          }
          ++progress_[c.flow].open_parts;
        }
      }
      sends_.emplace(std::make_pair(msg, dst), std::move(send));
      break;
    }
    case EventKind::kClusterRead: {
      int64_t msg = e.GetInt("msg_id").value_or(-1);
      auto it = sends_.find(std::make_pair(msg, e.host));
      if (it == sends_.end())
        it = sends_.find(std::make_pair(msg, std::string()));
      if (it == sends_.end()) {
        dangling_.push_back(msg);
        break;
      }
      Send send = std::move(it->second);
      sends_.erase(it);
      if (send.flow == kNoFlow)
        break;
      flows_[send.flow].segments.push_back(
          FlowSegment{"Bus transit", send.host, send.tid, e.host, send.ts,
                      e.ts, send.ref, Ref(e), fd.value_or(-1), msg});
      branches_[HostMsg(e.host, msg)] =
          Branch{send.flow, e.host, Ref(e), e.ts, e.tid, fd.value_or(-1), msg};
      break;
    }
    case EventKind::kClusterProcessPacket: {
      int64_t msg = e.GetInt("msg_id").value_or(-1);
      auto it = branches_.find(HostMsg(e.host, msg));
      if (it == branches_.end())
        break;
      it->second.processed = true;
      it->second.packet_ref = Ref(e);
      it->second.packet_ts = e.ts;
      just_processed_[e.host] = HostMsg(e.host, msg);
      break;
    }
    case EventKind::kWriteToClientStart: {
      if (!fd)
        break;
      auto jp = just_processed_.find(e.host);
      if (auto msg = e.GetInt("msg_id");
          msg && jp != just_processed_.end() && jp->second.second == *msg) {
        auto b = branches_.find(jp->second);
        just_processed_.erase(jp);
        if (b == branches_.end())
          break;
        Branch& br = b->second;
        flows_[br.flow].segments.push_back(
            FlowSegment{"Cluster read", e.host, br.tid, br.branch, br.read_ts,
                        e.ts, br.read_ref, Ref(e), br.fd, br.msg_id});
        writes_[HostFd(e.host, *fd)] =
            OpenWrite{br.flow, br.branch, Ref(e), e.ts, e.tid, *fd};
        branches_.erase(b);
        break;
      }
      auto cur = cursors_.find(HostFd(e.host, *fd));
      if (cur == cursors_.end() || cur->second.sent)
        break;  // the origin's ack of a broadcast is not part of the flow
      Cursor& c = cur->second;
      if (progress_[c.flow].trunk_closed)
        break;
      RequestFlow& flow = flows_[c.flow];
      flow.segments.push_back(FlowSegment{flow.command, e.host, c.tid, "",
                                          c.command_ts, e.ts, c.command_ref,
                                          Ref(e), *fd, -1});
      progress_[c.flow].trunk_closed = true;
      ++progress_[c.flow].open_parts;
      writes_[HostFd(e.host, *fd)] =
          OpenWrite{c.flow, "", Ref(e), e.ts, e.tid, *fd};
      break;
    }
    case EventKind::kWriteToClientEnd: {
      if (!fd)
        break;
      auto it = writes_.find(HostFd(e.host, *fd));
      if (it == writes_.end())
        break;
      const OpenWrite& w = it->second;
      flows_[w.flow].segments.push_back(
          FlowSegment{"Write to client", e.host, w.tid, w.branch, w.ts, e.ts,
                      w.ref, Ref(e), w.fd, e.GetInt("msg_id").value_or(-1)});
      ClosePart(w.flow);
      writes_.erase(it);
      break;
    }
    case EventKind::kFreeClient:
      if (conn) {
        connections_.Free(*conn, e.ts, e.tid);
        cursors_.erase(HostFd(e.host, *fd));
      }
      break;
    default:
      break;
  }
}

FlowSet FlowBuilder::Finish() {
  std::vector<std::string> hosts;
  for (const auto& [host, key] : just_processed_)
    hosts.push_back(host);
  std::sort(hosts.begin(), hosts.end());
  for (const auto& host : hosts)
    FlushProcessed(host, nullptr);

  FlowSet out;
  for (const auto& [key, send] : sends_)
    dangling_.push_back(key.first);
  std::sort(dangling_.begin(), dangling_.end());
  dangling_.erase(std::unique(dangling_.begin(), dangling_.end()),
                  dangling_.end());
  out.dangling_msg_ids = std::move(dangling_);
  for (RequestFlow& flow : flows_) {
    std::stable_sort(flow.segments.begin(), flow.segments.end(),
                     [](const FlowSegment& a, const FlowSegment& b) {
                       return a.branch < b.branch;
                     });
  }
  out.flows = std::move(flows_);
  *this = FlowBuilder();
  return out;
}

FlowSet BuildFlows(std::span<const TraceEvent> events) {
  FlowBuilder builder;
  for (const TraceEvent& e : events)
    builder.Add(e);
  return builder.Finish();
}

FlowSet BuildFlowsFromFile(const std::string& merged_path) {
  std::ifstream in(merged_path);
  if (!in)
    throw DataError(ErrorCode::kIoFailure, merged_path, 0, "cannot open");
  StreamReader reader(in, merged_path, StreamOrder::kMerged);
  FlowBuilder builder;
  TraceEvent e;
  while (reader.Next(&e))
    builder.Add(e);
  return builder.Finish();
}

std::map<std::string, int64_t> FlowLatencyBreakdown(const RequestFlow& flow) {
  if (!flow.complete)
    throw Error(ErrorCode::kIncompleteFlow, "flow " + flow.id + " is incomplete");
  // Branch ending last; ties go to the first host name.
  std::string critical;
  Timestamp latest = std::numeric_limits<Timestamp>::min();
  for (const auto& s : flow.segments) {
    if (!s.branch.empty() && s.t1 > latest) {
      latest = s.t1;
      critical = s.branch;
    }
  }
  std::map<std::string, int64_t> out;
  for (const auto& s : flow.segments) {
    if (s.branch.empty() || s.branch == critical)
      out[s.label] += s.t1 - s.t0;
  }
  return out;
}

nlohmann::json FlowJson(const RequestFlow& flow) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : flow.segments) {
    nlohmann::json j = {{"label", s.label}, {"host", s.host},
                        {"tid", s.tid},     {"branch", s.branch},
                        {"t0", s.t0},       {"t1", s.t1},
                        {"start", s.start}, {"end", s.end}};
    if (s.fd >= 0)
      j["fd"] = s.fd;
    if (s.msg_id >= 0)
      j["msg_id"] = s.msg_id;
    segments.push_back(std::move(j));
  }
  nlohmann::json out = {{"id", flow.id},
                        {"origin", flow.origin},
                        {"command", flow.command},
                        {"complete", flow.complete},
                        {"t0", flow.start()},
                        {"t1", flow.end()},
                        {"segments", std::move(segments)}};
  if (flow.endpoint) {
    out["endpoint"] = {{"src_addr", flow.endpoint->src_addr},
                       {"src_port", flow.endpoint->src_port},
                       {"dst_addr", flow.endpoint->dst_addr},
                       {"dst_port", flow.endpoint->dst_port}};
  }
  if (flow.complete) {
    nlohmann::json breakdown = nlohmann::json::object();
    for (const auto& [label, ns] : FlowLatencyBreakdown(flow))
      breakdown[label] = ns;
    out["latency"] = std::move(breakdown);
  }
  return out;
}

nlohmann::json FlowSetJson(const FlowSet& set) {
  nlohmann::json flows = nlohmann::json::array();
  for (const auto& f : set.flows)
    flows.push_back(FlowJson(f));
  return {{"flows", std::move(flows)},
          {"complete", set.complete_count()},
          {"incomplete", set.flows.size() - set.complete_count()},
          {"dangling_msg_ids", set.dangling_msg_ids}};
}

}  // namespace kvscope
