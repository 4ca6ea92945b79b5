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

#ifndef INCLUDE_KVSCOPE_AGGREGATE_EXPERIMENT_H_
#define INCLUDE_KVSCOPE_AGGREGATE_EXPERIMENT_H_

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kvscope/aggregate/clock_sync.h"
#include "kvscope/trace/ctf_lite.h"

namespace kvscope {

struct SourceInfo {
  std::string host;
  std::string path;
  uint64_t event_count = 0;
};

// Clock-corrected union of all per-host streams, ordered by
// (adjusted ts, host, seq).
struct Experiment {
  std::vector<TraceEvent> events;
  ClockOffsets offsets;
  std::vector<SourceInfo> sources;

  Timestamp start_ts() const;
  Timestamp end_ts() const;
};

// Strict weak order used by every merge in the project.
bool MergeOrderLess(const TraceEvent& a, const TraceEvent& b);

Experiment Merge(std::span<const TraceStream> streams,
                 const ClockOffsets& offsets);

// Sorted list of *.jsonl stream files in `dir`.
std::vector<std::string> ListStreamFiles(const std::string& dir);

struct MergeSummary {
  ClockOffsets offsets;
  uint64_t event_count = 0;
  std::vector<SourceInfo> sources;
};

// Streaming variant: estimates offsets (unless `sync` is false) with one pass
// over the files, then k-way merges them into `out` holding one event per
// input file in memory.
MergeSummary MergeFiles(const std::vector<std::string>& paths, bool sync,
                        std::ostream& out);

void WriteOffsetsJson(const ClockOffsets& offsets, const std::string& path);
ClockOffsets ReadOffsetsJson(const std::string& path);
std::string OffsetsSidecarPath(const std::string& merged_path);

void WriteExperiment(const Experiment& experiment,
                     const std::string& merged_path);
// Loads a merged file and its offsets sidecar when present.
Experiment ReadExperiment(const std::string& merged_path);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_AGGREGATE_EXPERIMENT_H_
