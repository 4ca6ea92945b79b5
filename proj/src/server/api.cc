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

#include "kvscope/server/api.h"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "httplib.h"
#include "kvscope/base/error.h"
#include "kvscope/trace/ctf_lite.h"

namespace kvscope {

using nlohmann::json;

json StateValueJson(const StateValue& value) {
  switch (value.type()) {
    case StateValue::Type::kNull:
      return nullptr;
    case StateValue::Type::kInt:
      return value.as_int();
    case StateValue::Type::kFloat:
      return value.as_float();
    case StateValue::Type::kStr:
      return value.as_str();
  }
  return nullptr;
}

namespace {

struct Group {
  std::vector<DisplayInterval> parts;

  bool empty() const { return parts.empty(); }
  Timestamp span() const {
    return empty() ? 0 : parts.back().end - parts.front().start;
  }

  void FlushInto(std::vector<DisplayInterval>* out) {
    if (parts.empty())
      return;
    if (parts.size() == 1) {
      out->push_back(std::move(parts.front()));
      parts.clear();
      return;
    }
    // Dominant value by total duration; the earliest wins a tie.
    std::vector<std::pair<const StateValue*, int64_t>> totals;
    for (const DisplayInterval& p : parts) {
      auto it = std::find_if(totals.begin(), totals.end(), [&](auto& t) {
        return *t.first == p.value;
      });
      if (it == totals.end())
        totals.emplace_back(&p.value, p.end - p.start);
      else
        it->second += p.end - p.start;
    }
    const StateValue* best = totals.front().first;
    int64_t best_total = totals.front().second;
    for (const auto& [v, total] : totals) {
      if (total > best_total) {
        best = v;
        best_total = total;
      }
    }
    DisplayInterval merged;
    merged.start = parts.front().start;
    merged.end = parts.back().end;
    merged.value = *best;
    merged.merged = parts.size();
    out->push_back(std::move(merged));
    parts.clear();
  }
};

}  // namespace

std::vector<DisplayInterval> MergeForResolution(
    const std::vector<StateInterval>& intervals, int64_t resolution) {
  std::vector<DisplayInterval> out;
  Group group;
  for (const StateInterval& iv : intervals) {
    DisplayInterval d{iv.start, iv.end, iv.value, 1};
    if (resolution <= 0 || iv.end - iv.start >= resolution) {
      group.FlushInto(&out);
      out.push_back(std::move(d));
      continue;
    }
    group.parts.push_back(std::move(d));
    if (group.span() >= resolution)
      group.FlushInto(&out);
  }
  group.FlushInto(&out);
  return out;
}

namespace {

struct BadRequest {
  int status;
  std::string message;
};

std::optional<int64_t> IntParam(const QueryParams& params,
                                std::string_view key) {
  auto it = params.find(key);
  if (it == params.end() || it->second.empty())
    return std::nullopt;
  const std::string& s = it->second;
  int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw BadRequest{400, std::string(key) + " must be an integer"};
  return v;
}

ApiResponse Ok(const json& body) { return {200, body.dump()}; }

ApiResponse Fail(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

constexpr int64_t kMaxBuckets = 10'000'000;

}  // namespace

ApiService::ApiService(const std::string& model_path,
                       const std::string& trace_path,
                       const DetectOptions& options)
    : model_(model_path) {
  detect_ = RunDetectors(model_path, trace_path, options);
  spans_ = ReconstructSpansFromFile(trace_path);
  AttachRedisFlows(&spans_, detect_.flows);
  for (size_t i = 0; i < detect_.flows.flows.size(); ++i)
    flow_index_.emplace(detect_.flows.flows[i].id, i);

  std::ifstream in(trace_path);
  if (!in)
    throw Error(ErrorCode::kIoFailure, "cannot open " + trace_path);
  StreamReader reader(in, trace_path, StreamOrder::kMerged);
  TraceEvent e;
  while (reader.Next(&e)) {
    if (ClassifyEvent(e.name) == EventKind::kStartReadClientQuery)
      ingress_.emplace_back(e.ts, e.GetInt("bytes").value_or(0));
  }
}

ApiResponse ApiService::Handle(std::string_view endpoint,
                               const QueryParams& params) {
  try {
    if (endpoint == "/api/tree")
      return Tree();
    if (endpoint == "/api/states")
      return States(params);
    if (endpoint == "/api/series")
      return SeriesOf(params);
    if (endpoint == "/api/spans")
      return Spans(params);
    if (endpoint == "/api/flows")
      return Flows(params);
    if (endpoint == "/api/findings")
      return Findings();
    return Fail(404, "unknown endpoint " + std::string(endpoint));
  } catch (const BadRequest& e) {
    return Fail(e.status, e.message);
  } catch (const Error& e) {
    return Fail(400, e.what());
  }
}

std::pair<Timestamp, Timestamp> ApiService::Window(
    const QueryParams& params) const {
  Timestamp t0 = IntParam(params, "t0").value_or(model_.start_time());
  Timestamp t1 = IntParam(params, "t1").value_or(model_.end_time());
  if (t0 > t1)
    throw BadRequest{400, "t0 must not exceed t1"};
  if (t1 < model_.start_time() || t0 > model_.end_time())
    throw BadRequest{400, "window outside the experiment"};
  return {std::max(t0, model_.start_time()), std::min(t1, model_.end_time())};
}

ApiResponse ApiService::Tree() {
  json paths = json::array();
  for (size_t q = 0; q < model_.paths().size(); ++q)
    paths.push_back({{"quark", q}, {"path", model_.paths()[q]}});
  return Ok({{"start", model_.start_time()},
             {"end", model_.end_time()},
             {"paths", std::move(paths)}});
}

ApiResponse ApiService::States(const QueryParams& params) {
  auto path = params.find("path");
  if (path == params.end() || path->second.empty())
    return Fail(400, "path is required");
  auto [t0, t1] = Window(params);
  int64_t resolution = IntParam(params, "resolution").value_or(0);
  if (resolution < 0)
    return Fail(400, "resolution must not be negative");
  auto quark = model_.FindQuark(path->second);
  if (!quark)
    return Fail(404, "unknown attribute " + path->second);
  std::vector<StateInterval> intervals;
  {
    std::lock_guard<std::mutex> lock(model_mu_);
    intervals = model_.QueryRange(*quark, t0, t1);
  }
  json out = json::array();
  for (const DisplayInterval& d : MergeForResolution(intervals, resolution)) {
    json row = {{"t0", d.start}, {"t1", d.end}, {"value", StateValueJson(d.value)}};
    if (d.merged > 1)
      row["merged"] = d.merged;
    out.push_back(std::move(row));
  }
  return Ok({{"path", path->second},
             {"t0", t0},
             {"t1", t1},
             {"resolution", resolution},
             {"intervals", std::move(out)}});
}

ApiResponse ApiService::SeriesOf(const QueryParams& params) {
  auto metric = params.find("metric");
  std::string name =
      metric == params.end() ? "bus_volume_out" : metric->second;
  int64_t bucket = IntParam(params, "bucket_ns").value_or(detect_.out.bucket_ns);
  if (bucket <= 0)
    return Fail(400, "bucket_ns must be positive");
  if ((model_.end_time() - model_.start_time()) / bucket > kMaxBuckets)
    return Fail(400, "bucket_ns too small for the experiment span");
  Series s;
  if (name == "bus_volume_out") {
    std::lock_guard<std::mutex> lock(model_mu_);
    s = BusVolumeOutSeries(model_, bucket);
  } else if (name == "bus_volume_in") {
    s = Series::Make(name, model_.start_time(), model_.end_time(), bucket);
    for (const auto& [ts, bytes] : ingress_)
      s.AddAt(ts, static_cast<double>(bytes));
  } else {
    return Fail(400, "unknown metric " + name);
  }
  return Ok({{"metric", s.metric},
             {"bucket_ns", s.bucket_ns},
             {"origin", s.origin},
             {"values", s.values}});
}

ApiResponse ApiService::Spans(const QueryParams& params) {
  auto [t0, t1] = Window(params);
  json out = json::array();
  for (const Span& s : spans_.spans)
    if (s.t1 >= t0 && s.t0 <= t1)
      out.push_back(SpanJson(s));
  return Ok({{"t0", t0},
             {"t1", t1},
             {"unmatched", spans_.unmatched},
             {"depth", spans_.Depth()},
             {"spans", std::move(out)}});
}

ApiResponse ApiService::Flows(const QueryParams& params) {
  auto id = params.find("id");
  if (id != params.end()) {
    auto it = flow_index_.find(id->second);
    if (it == flow_index_.end())
      return Fail(404, "unknown flow " + id->second);
    return Ok(FlowJson(detect_.flows.flows[it->second]));
  }
  json index = json::array();
  for (const RequestFlow& f : detect_.flows.flows)
    index.push_back({{"id", f.id},
                     {"origin", f.origin},
                     {"command", f.command},
                     {"complete", f.complete},
                     {"t0", f.start()},
                     {"t1", f.end()}});
  return Ok({{"flows", std::move(index)},
             {"complete", detect_.flows.complete_count()},
             {"incomplete",
              detect_.flows.flows.size() - detect_.flows.complete_count()}});
}

ApiResponse ApiService::Findings() {
  return Ok({{"findings", FindingsJson(detect_.findings)},
             {"latency", LatencyJson(detect_.latency)}});
}

struct ApiServer::Impl {
  ApiService& service;
  httplib::Server server;
};

ApiServer::ApiServer(ApiService& service)
    : impl_(new Impl{service, {}}) {
  impl_->server.Get(R"(/api/.*)", [this](const httplib::Request& req,
                                         httplib::Response& res) {
    QueryParams params;
    for (const auto& [k, v] : req.params)
      params.emplace(k, v);
    ApiResponse r = impl_->service.Handle(req.path, params);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  impl_->server.set_error_handler(
      [](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty())
          res.set_content(
              json{{"error", "no route for " + req.path}}.dump(),
              "application/json");
      });
}

ApiServer::~ApiServer() { Stop(); }

int ApiServer::Bind(const std::string& host, int port) {
  if (port == 0)
    return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool ApiServer::Listen() { return impl_->server.listen_after_bind(); }

void ApiServer::Stop() {
  if (impl_)
    impl_->server.stop();
}

}  // namespace kvscope
