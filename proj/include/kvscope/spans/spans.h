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

#ifndef INCLUDE_KVSCOPE_SPANS_SPANS_H_
#define INCLUDE_KVSCOPE_SPANS_SPANS_H_

#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "kvscope/analysis/connection_tracker.h"
#include "kvscope/flows/flows.h"
#include "kvscope/trace/event.h"

namespace kvscope {

struct Span {
  std::string id;       // "<host>:<seq>" of the opening event
  std::string kind;     // client | server | redis
  std::string service;  // the invoked service; "Redis" for redis nodes
  std::string host;
  Timestamp t0 = 0;
  Timestamp t1 = 0;
  std::string parent;   // empty for roots
  Endpoint tuple;
  int64_t fd = -1;
  bool open = false;    // one half missing
};

struct SpanForest {
  std::vector<Span> spans;
  size_t unmatched = 0;  // one-sided halves

  // Longest root-to-leaf path in edges.
  int Depth() const;
  // Children not contained in their parent, allowing `tolerance` ns.
  size_t ContainmentViolations(int64_t tolerance) const;
};

// Pairs the four http events per call. Halves are matched FIFO per 4-tuple;
// a server span's parent is the client span holding the same position on
// its tuple; an outbound client span's parent is the innermost server span
// on the same host that contains it.
class SpanBuilder {
 public:
  void Add(const TraceEvent& event);
  SpanForest Finish();

 private:
  using Tuple = std::tuple<std::string, int64_t, std::string, int64_t>;
  struct Lanes {
    std::deque<size_t> awaiting_response;  // client spans
    std::deque<size_t> awaiting_server;    // client spans
    std::deque<size_t> serving;            // server spans
  };

  size_t NewSpan(const TraceEvent& e, const char* kind, bool open);

  std::vector<Span> spans_;
  std::map<Tuple, Lanes> lanes_;
  std::map<std::string, std::vector<size_t>> active_servers_;  // by host
  std::vector<size_t> nested_clients_;
  size_t unmatched_ = 0;
};

SpanForest ReconstructSpans(std::span<const TraceEvent> events);
SpanForest ReconstructSpansFromFile(const std::string& merged_path);

// Adds one "redis" node per flow. A flow whose origin connection equals a
// client span's 4-tuple goes under that span; otherwise under the innermost
// containing server span of the service listening on the flow's source
// address; otherwise it stays a root. Returns the number attached.
size_t AttachRedisFlows(SpanForest* forest, const FlowSet& flows);

nlohmann::json SpanJson(const Span& span);
nlohmann::json SpanForestJson(const SpanForest& forest);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_SPANS_SPANS_H_
