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

#ifndef INCLUDE_KVSCOPE_ANALYSIS_REDIS_ANALYSIS_H_
#define INCLUDE_KVSCOPE_ANALYSIS_REDIS_ANALYSIS_H_

#include <cstdint>
#include <string>
#include <vector>

#include "absl/container/flat_hash_map.h"
#include "kvscope/analysis/connection_tracker.h"
#include "kvscope/state/state_system.h"
#include "kvscope/trace/event.h"

namespace kvscope {

struct AnalysisReport {
  uint64_t events = 0;
  uint64_t unknown_events = 0;
  uint64_t unmatched = 0;
  uint64_t orphan_fd = 0;
  uint64_t contexts = 0;
  uint64_t requests = 0;
  uint64_t warnings = 0;
  uint64_t intervals = 0;
  uint64_t quarks = 0;
  Timestamp start_ts = 0;
  Timestamp end_ts = 0;
};

std::string AnalysisReportJson(const AnalysisReport& report);

// Event loop phases written to EventLoop/<host>/Phase.
namespace phase {
inline constexpr const char* kPolling = "Polling";
inline constexpr const char* kReadingClient = "ReadingClient";
inline constexpr const char* kExecutingCommand = "ExecutingCommand";
inline constexpr const char* kWritingClient = "WritingClient";
inline constexpr const char* kRunningTask = "RunningTask";
}  // namespace phase

// Event-driven automaton populating the performance model. Events must be
// fed in merged order. Unmatched end events and events on freed connections
// are counted and never abort the analysis.
class RedisAnalysis {
 public:
  explicit RedisAnalysis(StateSystem* model);

  void Handle(const TraceEvent& event);
  AnalysisReport Finalize(Timestamp t_end);

  const AnalysisReport& report() const { return report_; }

 private:
  struct OpenRead {
    int64_t tid;
    Timestamp ts;
  };
  struct HostState {
    int64_t queue_length = 0;
    // Connection whose command is executing, -1 when idle.
    int64_t executing_fd = -1;
    absl::flat_hash_map<int64_t, OpenRead> reads_by_msg;
    absl::flat_hash_map<int64_t, std::vector<Timestamp>> reads_by_tid;
  };

  void OnStartRead(const TraceEvent& e);
  void OnEndRead(const TraceEvent& e);
  void OnCommandStart(const TraceEvent& e);
  void OnCommandEnd(const TraceEvent& e);
  void OnAddFileEvent(const TraceEvent& e);
  void OnDeleteFileEvent(const TraceEvent& e);
  void OnWriteStart(const TraceEvent& e);
  void OnWriteEnd(const TraceEvent& e);
  void OnSslRead(const TraceEvent& e);
  void OnRunPendingReads(const TraceEvent& e);
  void OnFreeClient(const TraceEvent& e);
  void OnClusterSend(const TraceEvent& e);
  void OnClusterRead(const TraceEvent& e);
  void OnProcessPacket(const TraceEvent& e);

  // Context for an event's fd; nullptr when the event lacks one.
  ConnectionTracker::Lookup Resolve(const TraceEvent& e, bool opens);
  void WriteConnectionOpen(const TraceEvent& e, const Connection& conn);
  void SetOperation(const TraceEvent& e, StateValue value);
  void SetPhase(const TraceEvent& e, const char* phase);
  void SetQueueLength(const TraceEvent& e, int64_t length);
  void FinishRequest(Timestamp t, Connection& conn);
  void Unmatched(const TraceEvent& e);

  StateSystem* model_;
  ConnectionTracker connections_;
  absl::flat_hash_map<std::string, HostState> hosts_;
  int64_t bus_volume_ = 0;
  AnalysisReport report_;
  bool finalized_ = false;
};

// Streams a merged trace file through the analysis into `sht_path`.
AnalysisReport AnalyzeFile(const std::string& merged_path,
                           const std::string& sht_path,
                           StateSystemOptions options = {});

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_ANALYSIS_REDIS_ANALYSIS_H_
