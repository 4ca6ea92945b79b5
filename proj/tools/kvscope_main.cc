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

// Command-line entry point: gen, merge, analyze, flows, spans, report,
// detect, query and serve.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kvscope/aggregate/experiment.h"
#include "kvscope/analysis/redis_analysis.h"
#include "kvscope/base/error.h"
#include "kvscope/detect/detect.h"
#include "kvscope/flows/flows.h"
#include "kvscope/server/api.h"
#include "kvscope/spans/spans.h"
#include "kvscope/syngen/syngen.h"

namespace kvscope {
namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

// Usage errors raised after CLI11 parsing succeeded.
struct UsageError {
  std::string message;
};

std::ofstream OpenOut(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError(ErrorCode::kIoFailure, path, 0, "cannot open for writing");
  return out;
}

void WriteJsonFile(const json& doc, const std::string& path) {
  std::ofstream out = OpenOut(path);
  out << doc.dump(2) << "\n";
  if (!out)
    throw DataError(ErrorCode::kIoFailure, path, 0, "write failed");
}

void RequireFile(const std::string& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw DataError(ErrorCode::kIoFailure, path, 0, "no such file");
}

json OffsetsJson(const ClockOffsets& o) {
  return {{"reference", o.reference_host},
          {"offsets", o.offsets},
          {"uncertainty", o.uncertainty},
          {"warnings", o.warnings},
          {"violations", o.violations.size()}};
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string scenario;
  ScenarioConfig config;
  std::vector<std::string> faults;
  std::vector<std::string> offsets;
  std::string commands;
  std::string ssl_bytes;
  std::string out;
};

std::vector<std::string> SplitComma(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty())
      out.push_back(item);
  return out;
}

int64_t ParseI64(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(s, &used);
    if (used == s.size())
      return v;
  } catch (const std::exception&) {
  }
  throw UsageError{what + ": not an integer: " + s};
}

int RunGen(GenArgs& a) {
  ScenarioConfig& c = a.config;
  c.scenario = a.scenario;
  for (const std::string& f : a.faults) {
    auto fault = ParseFault(f);
    if (!fault)
      throw UsageError{"unknown fault: " + f};
    c.faults.insert(*fault);
  }
  for (const std::string& o : a.offsets) {
    auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw UsageError{"--offset expects host=ns, got " + o};
    c.offsets[o.substr(0, eq)] = ParseI64(o.substr(eq + 1), "--offset");
  }
  if (!a.commands.empty())
    c.commands = SplitComma(a.commands);
  if (!a.ssl_bytes.empty()) {
    c.ssl_bytes.clear();
    for (const std::string& b : SplitComma(a.ssl_bytes))
      c.ssl_bytes.push_back(ParseI64(b, "--ssl-bytes"));
  }
  try {
    ValidateConfig(c);
  } catch (const Error& e) {
    throw UsageError{e.what()};
  }
  GeneratedTrace trace = Generate(c);
  WriteGenerated(trace, a.out);
  json summary = {{"out", a.out}, {"hosts", json::array()}};
  for (const TraceStream& s : trace.streams)
    summary["hosts"].push_back({{"host", s.host}, {"events", s.events.size()}});
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int RunMerge(const std::string& in, const std::string& out, bool no_sync) {
  std::vector<std::string> files = ListStreamFiles(in);
  if (files.empty())
    throw DataError(ErrorCode::kIoFailure, in, 0, "no *.jsonl stream files");
  std::ofstream stream = OpenOut(out);
  MergeSummary s = MergeFiles(files, !no_sync, stream);
  stream.close();
  if (!stream)
    throw DataError(ErrorCode::kIoFailure, out, 0, "write failed");
  json summary = {{"events", s.event_count},
                  {"sources", json::array()},
                  {"clock", OffsetsJson(s.offsets)}};
  for (const SourceInfo& src : s.sources)
    summary["sources"].push_back({{"host", src.host},
                                  {"path", src.path},
                                  {"events", src.event_count}});
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

int RunAnalyze(const std::string& in, const std::string& out,
               uint32_t fanout, uint32_t block_size) {
  RequireFile(in);
  StateSystemOptions options;
  options.tree.fanout = fanout;
  options.tree.block_size = block_size;
  AnalysisReport report = AnalyzeFile(in, out, options);
  std::cout << AnalysisReportJson(report) << "\n";
  return kExitOk;
}

FlowSet FlowsOf(const std::string& trace) {
  RequireFile(trace);
  return BuildFlowsFromFile(trace);
}

int RunFlows(const std::string& trace, const std::string& out) {
  WriteJsonFile(FlowSetJson(FlowsOf(trace)), out);
  return kExitOk;
}

int RunSpans(const std::string& trace, const std::string& out) {
  FlowSet flows = FlowsOf(trace);
  SpanForest forest = ReconstructSpansFromFile(trace);
  size_t attached = AttachRedisFlows(&forest, flows);
  json doc = SpanForestJson(forest);
  doc["redis_flows_attached"] = attached;
  WriteJsonFile(doc, out);
  return kExitOk;
}

int RunReport(const std::string& model_path, const std::string& trace,
              const std::string& out, const DetectOptions& options) {
  RequireFile(model_path);
  RequireFile(trace);
  DetectResult r = RunDetectors(model_path, trace, options);
  HistoryTreeReader model(model_path);
  SpanForest spans = ReconstructSpansFromFile(trace);
  AttachRedisFlows(&spans, r.flows);

  json requests = json::object();
  uint64_t total = 0;
  for (const LatencyStats& s : r.latency) {
    requests[s.command] = s.count;
    total += s.count;
  }
  std::map<std::string, std::map<std::string, int>> by_kind;
  for (const Finding& f : r.findings)
    ++by_kind[f.kind][std::string(SeverityName(f.severity))];
  json doc = {
      {"experiment",
       {{"start", model.start_time()},
        {"end", model.end_time()},
        {"duration_ns", model.end_time() - model.start_time()}}},
      {"model",
       {{"quarks", model.quark_count()},
        {"depth", model.depth()},
        {"nodes", model.node_count()},
        {"leaves", model.leaf_count()}}},
      {"requests", requests},
      {"total_requests", total},
      {"latency", LatencyJson(r.latency)},
      {"flows",
       {{"total", r.flows.flows.size()},
        {"complete", r.flows.complete_count()},
        {"incomplete", r.flows.flows.size() - r.flows.complete_count()},
        {"dangling_msg_ids", r.flows.dangling_msg_ids.size()}}},
      {"spans",
       {{"count", spans.spans.size()},
        {"unmatched", spans.unmatched},
        {"depth", spans.Depth()}}},
      {"bus",
       {{"bytes_in", r.in.Sum()},
        {"bytes_out", r.out.Sum()},
        {"ratio", r.in.Sum() > 0 ? r.out.Sum() / r.in.Sum() : 0.0}}},
      {"findings", by_kind}};
  WriteJsonFile(doc, out);
  return kExitOk;
}

struct DetectArgs {
  std::string model;
  std::string trace;
  std::string out;
  std::string series_out;
  std::string series_in;
  DetectOptions options;
};

int RunDetect(DetectArgs& a) {
  RequireFile(a.model);
  RequireFile(a.trace);
  if (a.options.bucket_ns <= 0)
    throw UsageError{"--bucket-ns must be positive"};
  DetectResult r = RunDetectors(a.model, a.trace, a.options);
  WriteJsonFile(FindingsJson(r.findings), a.out);
  if (!a.series_out.empty()) {
    std::ofstream csv = OpenOut(a.series_out);
    WriteSeriesCsv(r.out, csv);
  }
  if (!a.series_in.empty()) {
    std::ofstream csv = OpenOut(a.series_in);
    WriteSeriesCsv(r.in, csv);
  }
  std::map<std::string, int> counts;
  for (const Finding& f : r.findings)
    ++counts[f.kind + "/" + std::string(SeverityName(f.severity))];
  std::cout << json(counts).dump() << "\n";
  return kExitOk;
}

int RunQuery(const std::string& model_path, const std::string& path,
             std::optional<int64_t> t0, std::optional<int64_t> t1,
             int64_t resolution) {
  RequireFile(model_path);
  HistoryTreeReader model(model_path);
  auto quark = model.FindQuark(path);
  if (!quark)
    throw DataError(ErrorCode::kUnknownPath, model_path, 0,
                    "no attribute " + path);
  Timestamp a = t0.value_or(model.start_time());
  Timestamp b = t1.value_or(model.end_time());
  if (a > b)
    throw UsageError{"--t0 must not exceed --t1"};
  auto intervals = model.QueryRange(*quark, a, b);
  for (const DisplayInterval& d : MergeForResolution(intervals, resolution))
    std::cout << d.start << "\t" << d.end << "\t"
              << StateValueJson(d.value).dump() << "\n";
  return kExitOk;
}

int RunServe(const std::string& model, const std::string& trace,
             const std::string& host, int port) {
  RequireFile(model);
  RequireFile(trace);
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  ApiService service(model, trace);
  ApiServer server(service);
  int bound = server.Bind(host, port);
  if (bound < 0)
    throw DataError(ErrorCode::kIoFailure, host + ":" + std::to_string(port),
                    0, "cannot bind");
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    server.Stop();
  });
  server.Listen();
  // Wake the waiter if Listen returned on its own.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kExitOk;
}

// ---------------------------------------------------------------------------

int Main(int argc, char** argv) {
  CLI::App app{"kvscope: trace analysis for key-value clusters"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all subcommand help");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic trace");
  gen_cmd->add_option("scenario", gen.scenario,
                      "cluster-publish | ssl | ssl-double-free | microservices")
      ->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--nodes", gen.config.nodes, "Cluster nodes");
  gen_cmd->add_option("--clients", gen.config.clients,
                      "Clients in total (0: four per node)");
  gen_cmd->add_option("--requests", gen.config.requests,
                      "Requests per command");
  gen_cmd->add_option("--commands", gen.commands,
                      "Comma separated command mix");
  gen_cmd->add_option("--payload", gen.config.payload, "Payload bytes V");
  gen_cmd->add_option("--gossip-header", gen.config.gossip_header,
                      "Bus header bytes H");
  gen_cmd->add_option("--seed", gen.config.seed, "RNG seed");
  gen_cmd->add_option("--fault", gen.faults, "Fault to inject (repeatable)");
  gen_cmd->add_option("--offset", gen.offsets,
                      "Clock offset host=ns (repeatable)");
  gen_cmd->add_flag("--fixed-service", gen.config.fixed_service,
                    "Deterministic service time");
  gen_cmd->add_option("--service-ns", gen.config.service_ns,
                      "Mean service time");
  gen_cmd->add_option("--min-delay-ns", gen.config.min_delay_ns,
                      "Minimum one-way network delay");
  gen_cmd->add_option("--jitter-ns", gen.config.jitter_ns,
                      "Mean extra network delay");
  gen_cmd->add_option("--stall-ns", gen.config.stall_ns,
                      "Injected read stall length");
  gen_cmd->add_option("--ssl-bytes", gen.ssl_bytes,
                      "Comma separated ssl_read sizes");

  std::string in, out, model, trace, path, host = "127.0.0.1";
  bool no_sync = false;
  auto* merge_cmd = app.add_subcommand("merge", "Merge and clock-sync streams");
  merge_cmd->add_option("--in", in, "Directory of per-host *.jsonl")
      ->required();
  merge_cmd->add_option("--out", out, "Merged trace file")->required();
  merge_cmd->add_flag("--no-sync", no_sync, "Skip clock synchronization");

  uint32_t fanout = 50, block_size = 64 * 1024;
  auto* analyze_cmd =
      app.add_subcommand("analyze", "Build the state history model");
  analyze_cmd->add_option("--in", in, "Merged trace")->required();
  analyze_cmd->add_option("--out", out, "Model file")->required();
  analyze_cmd->add_option("--fanout", fanout, "Tree fan-out")
      ->check(CLI::Range(2u, 1000u));
  analyze_cmd->add_option("--block-size", block_size, "Block bytes")
      ->check(CLI::Range(4096u, 1u << 24));

  auto add_model_trace = [&](CLI::App* cmd, bool model_required) {
    auto* m = cmd->add_option("--model", model, "Model file");
    if (model_required)
      m->required();
    cmd->add_option("--trace", trace, "Merged trace")->required();
    cmd->add_option("--out", out, "Output file")->required();
  };
  auto* flows_cmd = app.add_subcommand("flows", "Reconstruct request flows");
  add_model_trace(flows_cmd, false);
  auto* spans_cmd =
      app.add_subcommand("spans", "Reconstruct microservice spans");
  add_model_trace(spans_cmd, false);

  DetectArgs detect;
  auto add_detect_options = [&](CLI::App* cmd) {
    cmd->add_option("--bucket-ns", detect.options.bucket_ns,
                    "Series bucket width");
    cmd->add_option("--threshold-ratio",
                    detect.options.amplification.threshold_ratio,
                    "Amplification threshold");
    cmd->add_option("--critical-ratio",
                    detect.options.amplification.critical_ratio,
                    "Ratio that makes an amplification critical");
    cmd->add_option("--stall-threshold-ns", detect.options.stall.threshold_ns,
                    "Read stall threshold (0: 3 x p99)");
    cmd->add_option("--corr-window-ns", detect.options.stall.window_ns,
                    "Correlation window half-width");
    cmd->add_option("--corr-k", detect.options.stall.k,
                    "Correlation factor over the global mean");
  };
  auto* report_cmd = app.add_subcommand("report", "Summary report");
  add_model_trace(report_cmd, true);
  add_detect_options(report_cmd);
  auto* detect_cmd = app.add_subcommand("detect", "Run the detectors");
  add_model_trace(detect_cmd, true);
  add_detect_options(detect_cmd);
  detect_cmd->add_option("--series-out", detect.series_out,
                         "CSV of bus volume out");
  detect_cmd->add_option("--series-in", detect.series_in,
                         "CSV of client ingress");

  std::optional<int64_t> t0, t1;
  int64_t resolution = 0;
  auto* query_cmd = app.add_subcommand("query", "Print state intervals");
  query_cmd->add_option("--model", model, "Model file")->required();
  query_cmd->add_option("--path", path, "Attribute path")->required();
  query_cmd->add_option("--t0", t0, "Window start");
  query_cmd->add_option("--t1", t1, "Window end");
  query_cmd->add_option("--resolution", resolution,
                        "Merge intervals shorter than this many ns");

  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API");
  serve_cmd->add_option("--model", model, "Model file")->required();
  serve_cmd->add_option("--trace", trace, "Merged trace")->required();
  serve_cmd->add_option("--port", port, "Port (0 picks one)")
      ->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", host, "Bind address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd)
      return RunGen(gen);
    if (*merge_cmd)
      return RunMerge(in, out, no_sync);
    if (*analyze_cmd)
      return RunAnalyze(in, out, fanout, block_size);
    if (*flows_cmd)
      return RunFlows(trace, out);
    if (*spans_cmd)
      return RunSpans(trace, out);
    if (*report_cmd)
      return RunReport(model, trace, out, detect.options);
    if (*detect_cmd) {
      detect.model = model;
      detect.trace = trace;
      detect.out = out;
      return RunDetect(detect);
    }
    if (*query_cmd)
      return RunQuery(model, path, t0, t1, resolution);
    if (*serve_cmd)
      return RunServe(model, trace, host, port);
  } catch (const UsageError& e) {
    std::cerr << "kvscope: " << e.message << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    // DataError messages already carry file and line.
    std::cerr << "kvscope: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "kvscope: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace
}  // namespace kvscope

int main(int argc, char** argv) { return kvscope::Main(argc, argv); }
