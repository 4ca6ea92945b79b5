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

#ifndef INCLUDE_KVSCOPE_FLOWS_FLOWS_H_
#define INCLUDE_KVSCOPE_FLOWS_FLOWS_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "absl/container/flat_hash_map.h"
#include "json.hpp"
#include "kvscope/analysis/connection_tracker.h"
#include "kvscope/trace/event.h"

namespace kvscope {

struct FlowSegment {
  std::string label;
  std::string host;
  int64_t tid = 0;
  std::string branch;  // "" on the trunk, else the receiving host
  Timestamp t0 = 0;
  Timestamp t1 = 0;
  std::string start;  // "<host>:<seq>" of the opening event
  std::string end;
  int64_t fd = -1;
  int64_t msg_id = -1;
};

struct RequestFlow {
  std::string id;  // request id, "<host>:<fd>#<gen>:<n>"
  std::string origin;
  std::string command;
  bool complete = false;
  std::optional<Endpoint> endpoint;  // of the origin connection
  // Trunk first, then branches ordered by host; causal order within each.
  std::vector<FlowSegment> segments;

  Timestamp start() const;
  Timestamp end() const;
};

struct FlowSet {
  std::vector<RequestFlow> flows;
  std::vector<int64_t> dangling_msg_ids;  // sends never read, reads never sent

  size_t complete_count() const;
};

// Streaming reconstruction over a merged trace. Cross-host links are made
// only through msg_id equality.
class FlowBuilder {
 public:
  void Add(const TraceEvent& event);
  FlowSet Finish();

 private:
  struct Cursor {
    size_t flow = 0;
    std::string command_ref;
    Timestamp command_ts = 0;
    int64_t tid = 0;
    bool sent = false;
    bool done = false;  // command finished on the origin
  };
  struct Send {
    size_t flow;
    std::string ref;
    Timestamp ts;
    int64_t tid;
    std::string host;
  };
  struct Branch {
    size_t flow;
    std::string branch;
    std::string read_ref;
    Timestamp read_ts;
    int64_t tid;
    int64_t fd;
    int64_t msg_id;
    // Set once cluster_process_packet has been seen.
    bool processed = false;
    std::string packet_ref;
    Timestamp packet_ts = 0;
  };
  struct OpenWrite {
    size_t flow;
    std::string branch;
    std::string ref;
    Timestamp ts;
    int64_t tid;
    int64_t fd;
  };
  struct Progress {
    int open_parts = 0;  // branches and writes not yet closed
    bool trunk_closed = false;
  };

  using HostFd = std::pair<std::string, int64_t>;
  using HostMsg = std::pair<std::string, int64_t>;

  void CloseBranchAtPacket(Branch& b);
  void ClosePart(size_t flow);
  void FlushProcessed(const std::string& host, const TraceEvent* next);

  ConnectionTracker connections_;
  std::vector<RequestFlow> flows_;
  std::vector<Progress> progress_;
  absl::flat_hash_map<HostFd, Cursor> cursors_;
  absl::flat_hash_map<std::string, HostFd> executing_;  // host -> conn
  std::multimap<std::pair<int64_t, std::string>, Send> sends_;
  absl::flat_hash_map<HostMsg, Branch> branches_;
  // Per host: the branch whose packet was processed by the last event.
  absl::flat_hash_map<std::string, HostMsg> just_processed_;
  absl::flat_hash_map<HostFd, OpenWrite> writes_;
  std::vector<int64_t> dangling_;
};

FlowSet BuildFlows(std::span<const TraceEvent> events);
// Streams a merged CTF-lite file.
FlowSet BuildFlowsFromFile(const std::string& merged_path);

// Time per label along the flow's critical path (the trunk plus the branch
// that ends last). Throws Error(kIncompleteFlow) on incomplete flows.
std::map<std::string, int64_t> FlowLatencyBreakdown(const RequestFlow& flow);

nlohmann::json FlowJson(const RequestFlow& flow);
nlohmann::json FlowSetJson(const FlowSet& set);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_FLOWS_FLOWS_H_
