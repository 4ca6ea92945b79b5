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

#ifndef INCLUDE_KVSCOPE_SYNGEN_SYNGEN_H_
#define INCLUDE_KVSCOPE_SYNGEN_SYNGEN_H_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kvscope/trace/ctf_lite.h"

namespace kvscope {

enum class Fault {
  kBroadcastAmplification,
  kSslPendingDoubleFree,
  kReadStall,
  kReadStallFlat,  // stall without the accompanying bus burst
  kPipelinedHttp,
  kTruncate,
};

std::optional<Fault> ParseFault(std::string_view name);
std::string_view FaultName(Fault fault);

struct ScenarioConfig {
  // cluster-publish | ssl | ssl-double-free | microservices
  std::string scenario = "cluster-publish";
  uint64_t seed = 1;
  int nodes = 3;
  int clients = 0;  // 0: four per node
  int64_t requests = 1000;  // per command
  std::vector<std::string> commands;  // empty: scenario default
  int64_t payload = 10240;
  int64_t gossip_header = 2048;
  bool fixed_service = false;
  int64_t service_ns = 100'000;
  int64_t min_delay_ns = 100'000;
  int64_t jitter_ns = 50'000;  // mean of the exponential part
  int64_t stall_ns = 50'000'000;
  std::vector<int64_t> ssl_bytes = {8192, 101, 18};
  // raw = true - offset, so the offset is the correction a perfect
  // synchronizer recovers for the host.
  std::map<std::string, int64_t> offsets;
  std::set<Fault> faults;
};

// Throws Error(kConfigInvalid).
void ValidateConfig(const ScenarioConfig& config);

struct GeneratedTrace {
  std::vector<TraceStream> streams;  // one per host, sorted by host
  nlohmann::json ground_truth;
};

GeneratedTrace Generate(const ScenarioConfig& config);

// Writes <dir>/<host>.jsonl per stream and <dir>/ground_truth.json.
void WriteGenerated(const GeneratedTrace& trace, const std::string& dir);

// "<host>:<seq>", the identity of one emitted event.
std::string EventRef(const std::string& host, int64_t seq);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_SYNGEN_SYNGEN_H_
