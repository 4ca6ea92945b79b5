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

#ifndef INCLUDE_KVSCOPE_DETECT_DETECT_H_
#define INCLUDE_KVSCOPE_DETECT_DETECT_H_

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kvscope/analysis/connection_tracker.h"
#include "kvscope/flows/flows.h"
#include "kvscope/sht/history_tree.h"
#include "kvscope/trace/event.h"

namespace kvscope {

struct Series {
  std::string metric;
  int64_t bucket_ns = 1'000'000;
  Timestamp origin = 0;
  std::vector<double> values;

  // Empty series of ceil((end - origin) / bucket_ns) buckets, at least one.
  static Series Make(std::string metric, Timestamp origin, Timestamp end,
                     int64_t bucket_ns);
  // Adds `v` to the bucket holding `ts`; times past the end land in the
  // last bucket, times before the origin in the first.
  void AddAt(Timestamp ts, double v);
  double Sum() const;
  double Mean() const;
  // Mean of the buckets overlapping [t0, t1].
  double MeanOver(Timestamp t0, Timestamp t1) const;
};

void WriteSeriesCsv(const Series& series, std::ostream& out);

// Bytes sent over the bus per bucket, from the cumulative Bus/Volume
// attribute of a closed model. Throws Error(kEmptyModel) when the model
// has no time span.
Series BusVolumeOutSeries(HistoryTreeReader& model, int64_t bucket_ns);

enum class Severity { kInfo, kWarn, kCritical };
std::string_view SeverityName(Severity s);

struct Finding {
  std::string kind;  // BusAmplification | DoubleFree | ReadStall
  Severity severity = Severity::kInfo;
  Timestamp t0 = 0;
  Timestamp t1 = 0;
  std::vector<std::string> paths;
  nlohmann::json evidence = nlohmann::json::object();
  std::string narrative;
};

nlohmann::json FindingJson(const Finding& f);
nlohmann::json FindingsJson(const std::vector<Finding>& findings);

struct AmplificationOptions {
  double threshold_ratio = 2.0;
  double critical_ratio = 5.0;
  double mean_fanout = 0;  // observed distinct destinations per message
};

// One finding per maximal run of buckets with in > 0 and out/in at or
// above the threshold.
std::vector<Finding> DetectBusAmplification(const Series& in,
                                            const Series& out,
                                            const AmplificationOptions& opt);

// Streaming pass over a merged trace tracking pending-list membership and
// frees per connection generation.
class DoubleFreeDetector {
 public:
  void Add(const TraceEvent& event);
  std::vector<Finding> Finish();

 private:
  struct Context {
    bool in_list = false;
    Timestamp added_ts = 0;
    int64_t added_tid = 0;
    std::map<int64_t, Timestamp> first_seen;  // tid -> first activity
  };
  Context& ContextOf(const Connection& c);

  ConnectionTracker connections_;
  std::map<std::string, Context> contexts_;  // by "<host>/<fd>#<gen>"
  std::vector<Finding> findings_;
};

struct StallOptions {
  int64_t threshold_ns = 0;  // 0: three times the p99 cluster-read time
  int64_t window_ns = 10'000'000;
  double k = 2.0;
};

std::vector<Finding> DetectReadStalls(const FlowSet& flows, const Series& out,
                                      const StallOptions& opt);

struct LatencyStats {
  std::string command;
  uint64_t count = 0;
  double mean = 0;
  int64_t p50 = 0;
  int64_t p95 = 0;
  int64_t p99 = 0;
};

// Nearest-rank percentile of a sorted, non-empty sample.
int64_t NearestRank(const std::vector<int64_t>& sorted, double p);

class LatencyCollector {
 public:
  void Add(const TraceEvent& event);
  std::vector<LatencyStats> Report() const;  // sorted by command

 private:
  std::map<std::pair<std::string, int64_t>, Timestamp> open_;
  std::map<std::pair<std::string, int64_t>, std::string> commands_;
  std::map<std::string, std::vector<int64_t>> samples_;
};

nlohmann::json LatencyJson(const std::vector<LatencyStats>& stats);

struct DetectOptions {
  int64_t bucket_ns = 1'000'000;
  AmplificationOptions amplification;
  StallOptions stall;
};

struct DetectResult {
  Series in;
  Series out;
  std::vector<Finding> findings;
  std::vector<LatencyStats> latency;
  FlowSet flows;
};

// Runs every detector over a closed model and its merged trace, one
// streaming pass over the trace.
DetectResult RunDetectors(const std::string& model_path,
                          const std::string& merged_path,
                          const DetectOptions& options = {});

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_DETECT_DETECT_H_
