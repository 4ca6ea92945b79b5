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

#ifndef INCLUDE_KVSCOPE_AGGREGATE_CLOCK_SYNC_H_
#define INCLUDE_KVSCOPE_AGGREGATE_CLOCK_SYNC_H_

#include <cstdint>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "absl/container/flat_hash_map.h"
#include "kvscope/trace/ctf_lite.h"

namespace kvscope {

// One cross-host causal edge observed in the trace: the receive cannot
// precede the send once clocks are corrected.
struct MessagePair {
  std::string send_host;
  Timestamp send_ts = 0;
  std::string recv_host;
  Timestamp recv_ts = 0;
  std::string key;  // e.g. "msg:42" or "http:10.0.0.1:4000>10.0.0.2:80#3"
};

// Collects send/receive pairs from events fed in per-stream order. Matches
// cluster_send -> cluster_read by msg_id (and destination host when the send
// names one), and the HTTP request/response halves by 4-tuple in FIFO order.
class PairCollector {
 public:
  void Add(const TraceEvent& event);
  std::vector<MessagePair> Finish();

 private:
  using Tuple = std::tuple<std::string, int64_t, std::string, int64_t>;
  struct Stamp {
    std::string host;
    Timestamp ts;
  };
  struct SendRecord {
    std::string host;
    Timestamp ts;
    std::string dst;  // empty when the send did not name a destination
  };

  std::multimap<int64_t, SendRecord> sends_;
  std::vector<std::tuple<int64_t, std::string, Timestamp>> reads_;
  std::map<Tuple, std::vector<Stamp>> http_requests_;
  std::map<Tuple, std::vector<Stamp>> http_receives_;
  std::map<Tuple, std::vector<Stamp>> http_responses_;
  std::map<Tuple, std::vector<Stamp>> http_response_receipts_;
};

std::vector<MessagePair> CollectPairs(std::span<const TraceStream> streams);

struct ClockOffsets {
  std::string reference_host;
  // Correction added to a host's raw timestamps to land on the reference
  // clock: adjusted = raw + offsets[host].
  std::map<std::string, int64_t> offsets;
  // Bound on the residual error of each host's offset (half-width of the
  // feasible interval, accumulated along the path to the reference).
  std::map<std::string, int64_t> uncertainty;
  std::vector<std::string> warnings;
  // Pairs still violating causality after the fit.
  std::vector<MessagePair> violations;

  int64_t OffsetOf(const std::string& host) const;
  int64_t UncertaintyOf(const std::string& host) const;
};

// Per-host constant offsets from the minimum one-way delta in each direction
// of every host pair; the offset difference is the midpoint of the feasible
// interval. The lexically smallest host is the reference.
ClockOffsets EstimateOffsets(const std::vector<std::string>& hosts,
                             const std::vector<MessagePair>& pairs);
ClockOffsets EstimateOffsets(std::span<const TraceStream> streams);

// All-zero offsets (no synchronisation).
ClockOffsets ZeroOffsets(const std::vector<std::string>& hosts);

// Pairs whose adjusted receive precedes the adjusted send.
std::vector<MessagePair> FindCausalityViolations(
    const std::vector<MessagePair>& pairs, const ClockOffsets& offsets);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_AGGREGATE_CLOCK_SYNC_H_
