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

#ifndef INCLUDE_KVSCOPE_SERVER_API_H_
#define INCLUDE_KVSCOPE_SERVER_API_H_

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "kvscope/detect/detect.h"
#include "kvscope/sht/history_tree.h"
#include "kvscope/spans/spans.h"

namespace kvscope {

nlohmann::json StateValueJson(const StateValue& value);

struct DisplayInterval {
  Timestamp start = 0;
  Timestamp end = 0;
  StateValue value;
  size_t merged = 1;  // source intervals folded into this one
};

// Folds runs of intervals shorter than `resolution` ns into one interval
// carrying the value that held longest within the run. Runs close once they
// span at least `resolution`. Input must be sorted; resolution <= 0 keeps
// everything.
std::vector<DisplayInterval> MergeForResolution(
    const std::vector<StateInterval>& intervals, int64_t resolution);

struct ApiResponse {
  int status = 200;
  std::string body;
};

using QueryParams = std::map<std::string, std::string, std::less<>>;

// Read-only view over a closed model and its merged trace, answering the
// serve-mode endpoints. Thread-safe.
class ApiService {
 public:
  ApiService(const std::string& model_path, const std::string& trace_path,
             const DetectOptions& options = {});

  ApiResponse Handle(std::string_view endpoint, const QueryParams& params);

  const DetectResult& detections() const { return detect_; }
  const SpanForest& spans() const { return spans_; }

 private:
  ApiResponse Tree();
  ApiResponse States(const QueryParams& params);
  ApiResponse SeriesOf(const QueryParams& params);
  ApiResponse Spans(const QueryParams& params);
  ApiResponse Flows(const QueryParams& params);
  ApiResponse Findings();

  std::pair<Timestamp, Timestamp> Window(const QueryParams& params) const;

  std::mutex model_mu_;
  HistoryTreeReader model_;
  DetectResult detect_;
  SpanForest spans_;
  std::vector<std::pair<Timestamp, int64_t>> ingress_;  // start_read bytes
  std::map<std::string, size_t, std::less<>> flow_index_;
};

// HTTP front end for an ApiService, GET only.
class ApiServer {
 public:
  explicit ApiServer(ApiService& service);
  ~ApiServer();

  // Binds and returns the port, or -1. Port 0 picks a free one.
  int Bind(const std::string& host, int port);
  // Blocks until Stop().
  bool Listen();
  void Stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_SERVER_API_H_
