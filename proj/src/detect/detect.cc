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

#include "kvscope/detect/detect.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <tuple>
#include <utility>

#include "kvscope/base/error.h"
#include "kvscope/state/model_schema.h"
#include "kvscope/trace/ctf_lite.h"

namespace kvscope {

using nlohmann::json;

Series Series::Make(std::string metric, Timestamp origin, Timestamp end,
                    int64_t bucket_ns) {
  if (bucket_ns <= 0)
    throw Error(ErrorCode::kInvalidArgument, "bucket width must be positive");
  Series s;
  s.metric = std::move(metric);
  s.bucket_ns = bucket_ns;
  s.origin = origin;
  int64_t span = std::max<int64_t>(0, end - origin);
  s.values.assign(
      static_cast<size_t>(std::max<int64_t>(1, (span + bucket_ns - 1) /
                                                   bucket_ns)),
      0.0);
  return s;
}

void Series::AddAt(Timestamp ts, double v) {
  int64_t i = ts < origin ? 0 : (ts - origin) / bucket_ns;
  i = std::min<int64_t>(i, static_cast<int64_t>(values.size()) - 1);
  values[static_cast<size_t>(i)] += v;
}

double Series::Sum() const {
  double sum = 0;
  for (double v : values)
    sum += v;
  return sum;
}

double Series::Mean() const {
  return values.empty() ? 0 : Sum() / static_cast<double>(values.size());
}

double Series::MeanOver(Timestamp t0, Timestamp t1) const {
  if (values.empty())
    return 0;
  int64_t last = static_cast<int64_t>(values.size()) - 1;
  int64_t a = std::clamp<int64_t>((t0 - origin) / bucket_ns, 0, last);
  int64_t b = std::clamp<int64_t>((t1 - origin) / bucket_ns, 0, last);
  double sum = 0;
  for (int64_t i = a; i <= b; ++i)
    sum += values[static_cast<size_t>(i)];
  return sum / static_cast<double>(b - a + 1);
}

void WriteSeriesCsv(const Series& series, std::ostream& out) {
  out << "ts," << series.metric << "\n";
  char buf[64];
  for (size_t i = 0; i < series.values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", series.values[i]);
    out << series.origin + static_cast<int64_t>(i) * series.bucket_ns << ","
        << buf << "\n";
  }
}

Series BusVolumeOutSeries(HistoryTreeReader& model, int64_t bucket_ns) {
  if (model.end_time() <= model.start_time())
    throw Error(ErrorCode::kEmptyModel, "model has no time span");
  Series s = Series::Make("bus_volume_out", model.start_time(),
                          model.end_time(), bucket_ns);
  std::string path = BusAttr(schema::kVolume);
  auto quark = model.FindQuark(path);
  if (!quark)
    return s;
  auto intervals =
      model.QueryRange(*quark, model.start_time(), model.end_time());
  std::sort(intervals.begin(), intervals.end(),
            [](const StateInterval& a, const StateInterval& b) {
              return std::tie(a.start, a.end) < std::tie(b.start, b.end);
            });
  int64_t previous = 0;
  for (const StateInterval& iv : intervals) {
    if (iv.value.type() != StateValue::Type::kInt)
      continue;
    int64_t v = iv.value.as_int();
    if (v != previous)
      s.AddAt(iv.start, static_cast<double>(v - previous));
    previous = v;
  }
  return s;
}

std::string_view SeverityName(Severity s) {
  switch (s) {
    case Severity::kInfo:
      return "info";
    case Severity::kWarn:
      return "warn";
    case Severity::kCritical:
      return "critical";
  }
  return "info";
}

json FindingJson(const Finding& f) {
  return {{"kind", f.kind},
          {"severity", SeverityName(f.severity)},
          {"t0", f.t0},
          {"t1", f.t1},
          {"paths", f.paths},
          {"evidence", f.evidence},
          {"narrative", f.narrative}};
}

json FindingsJson(const std::vector<Finding>& findings) {
  json out = json::array();
  for (const Finding& f : findings)
    out.push_back(FindingJson(f));
  return out;
}

namespace {

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

std::vector<Finding> DetectBusAmplification(const Series& in,
                                            const Series& out,
                                            const AmplificationOptions& opt) {
  if (in.values.size() != out.values.size() || in.origin != out.origin ||
      in.bucket_ns != out.bucket_ns)
    throw Error(ErrorCode::kInvalidArgument, "series are not aligned");
  std::vector<Finding> findings;
  size_t n = in.values.size();
  size_t i = 0;
  auto hot = [&](size_t k) {
    return in.values[k] > 0 &&
           out.values[k] >= opt.threshold_ratio * in.values[k];
  };
  while (i < n) {
    if (!hot(i)) {
      ++i;
      continue;
    }
    size_t j = i;
    double sum_in = 0, sum_out = 0;
    while (j < n && hot(j)) {
      sum_in += in.values[j];
      sum_out += out.values[j];
      ++j;
    }
    double ratio = sum_out / sum_in;
    Finding f;
    f.kind = "BusAmplification";
    f.severity =
        ratio >= opt.critical_ratio ? Severity::kCritical : Severity::kWarn;
    f.t0 = in.origin + static_cast<int64_t>(i) * in.bucket_ns;
    f.t1 = in.origin + static_cast<int64_t>(j) * in.bucket_ns;
    f.paths = {BusAttr(schema::kVolume),
               BusAttr(schema::kType)};
    f.evidence = {{"ratio", ratio},
                  {"bytes_in", sum_in},
                  {"bytes_out", sum_out},
                  {"buckets", j - i},
                  {"bucket_ns", in.bucket_ns},
                  {"mean_fanout", opt.mean_fanout}};
    f.narrative = "cluster bus sent " + Fixed(ratio, 2) +
                  "x the client ingress over " + std::to_string(j - i) +
                  " bucket(s); mean broadcast fan-out " +
                  Fixed(opt.mean_fanout, 2);
    findings.push_back(std::move(f));
    i = j;
  }
  return findings;
}

DoubleFreeDetector::Context& DoubleFreeDetector::ContextOf(
    const Connection& c) {
  return contexts_[c.host + "/" + c.key];
}

void DoubleFreeDetector::Add(const TraceEvent& e) {
  connections_.ThreadKey(e.host, e.tid);
  EventKind kind = ClassifyEvent(e.name);
  if (kind == EventKind::kRunPendingReads) {
    connections_.ForEachOnHost(e.host, [&](Connection& conn) {
      ContextOf(conn).in_list = false;
    });
    return;
  }
  bool opens = kind == EventKind::kStartReadClientQuery;
  if (!opens && kind != EventKind::kCallCommandStart &&
      kind != EventKind::kWriteToClientStart && kind != EventKind::kSslRead &&
      kind != EventKind::kFreeClient && kind != EventKind::kClusterRead)
    return;
  auto fd = e.GetInt("fd");
  if (!fd)
    return;
  auto found = connections_.Resolve(e.host, *fd, e.ts, opens);
  Connection& conn = *found.connection;
  std::string conn_path =
      std::string(schema::kConnections) + "/" + conn.key;

  if (kind == EventKind::kFreeClient && found.orphan) {
    int64_t first_tid = conn.freed_tid;
    Context& ctx = ContextOf(conn);
    auto seen = ctx.first_seen.find(e.tid);
    bool overlap =
        seen != ctx.first_seen.end() && seen->second < conn.freed_ts;
    Finding f;
    f.kind = "DoubleFree";
    f.severity = Severity::kCritical;
    f.t0 = conn.freed_ts;
    f.t1 = e.ts;
    f.paths = {conn_path,
               ThreadAttr(connections_.ThreadKey(e.host, first_tid),
                          schema::kOperation),
               ThreadAttr(connections_.ThreadKey(e.host, e.tid),
                          schema::kOperation)};
    f.evidence = {{"host", e.host},
                  {"fd", conn.fd},
                  {"gen", conn.gen},
                  {"tid_first", first_tid},
                  {"tid_second", e.tid},
                  {"free_ts_first", conn.freed_ts},
                  {"free_ts_second", e.ts},
                  {"overlap", overlap}};
    f.narrative = "fd " + std::to_string(conn.fd) + " on " + e.host +
                  " freed by tid " + std::to_string(first_tid) +
                  " and again by tid " + std::to_string(e.tid) +
                  " with no reopen in between";
    findings_.push_back(std::move(f));
    return;
  }
  if (found.orphan)
    return;

  Context& ctx = ContextOf(conn);
  ctx.first_seen.try_emplace(e.tid, e.ts);
  if (kind == EventKind::kSslRead) {
    if (e.GetInt("pending").value_or(0) == 0) {
      ctx.in_list = false;
    } else if (ctx.in_list) {
      Finding f;
      f.kind = "DoubleFree";
      f.severity = Severity::kWarn;
      f.t0 = ctx.added_ts;
      f.t1 = e.ts;
      f.paths = {conn_path};
      f.evidence = {{"host", e.host},
                    {"fd", conn.fd},
                    {"gen", conn.gen},
                    {"tid_first", ctx.added_tid},
                    {"tid_second", e.tid}};
      f.narrative = "fd " + std::to_string(conn.fd) + " on " + e.host +
                    " added to the pending-read list twice without a drain";
      findings_.push_back(std::move(f));
    } else {
      ctx.in_list = true;
      ctx.added_ts = e.ts;
      ctx.added_tid = e.tid;
    }
  } else if (kind == EventKind::kFreeClient) {
    ctx.in_list = false;
    connections_.Free(conn, e.ts, e.tid);
  }
}

std::vector<Finding> DoubleFreeDetector::Finish() {
  return std::move(findings_);
}

std::vector<Finding> DetectReadStalls(const FlowSet& flows, const Series& out,
                                      const StallOptions& opt) {
  std::vector<const FlowSegment*> reads;
  for (const RequestFlow& flow : flows.flows)
    for (const FlowSegment& seg : flow.segments)
      if (seg.label == "Cluster read")
        reads.push_back(&seg);
  std::vector<Finding> findings;
  if (reads.empty())
    return findings;
  int64_t threshold = opt.threshold_ns;
  int64_t p99 = 0;
  {
    std::vector<int64_t> d;
    d.reserve(reads.size());
    for (const FlowSegment* s : reads)
      d.push_back(s->t1 - s->t0);
    std::sort(d.begin(), d.end());
    p99 = NearestRank(d, 99);
    if (threshold <= 0)
      threshold = 3 * p99;
  }
  double global = out.Mean();
  for (const FlowSegment* s : reads) {
    int64_t dur = s->t1 - s->t0;
    if (dur < threshold || dur <= 0)
      continue;
    double local = out.MeanOver(s->t0 - opt.window_ns, s->t1 + opt.window_ns);
    bool correlated = global > 0 && local > opt.k * global;
    Finding f;
    f.kind = "ReadStall";
    f.severity = correlated ? Severity::kWarn : Severity::kInfo;
    f.t0 = s->t0;
    f.t1 = s->t1;
    f.paths = {EventLoopAttr(s->host, schema::kPhase),
               BusAttr(schema::kVolume)};
    f.evidence = {{"host", s->host},
                  {"msg_id", s->msg_id},
                  {"duration_ns", dur},
                  {"threshold_ns", threshold},
                  {"p99_ns", p99},
                  {"window_mean", local},
                  {"global_mean", global},
                  {"correlated", correlated}};
    f.narrative = "cluster read of message " + std::to_string(s->msg_id) +
                  " on " + s->host + " took " + std::to_string(dur) +
                  " ns" +
                  (correlated ? ", during a bus volume burst"
                              : ", with no bus burst nearby");
    findings.push_back(std::move(f));
  }
  return findings;
}

int64_t NearestRank(const std::vector<int64_t>& sorted, double p) {
  if (sorted.empty())
    throw Error(ErrorCode::kInvalidArgument, "empty sample");
  auto rank = static_cast<size_t>(
      std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

void LatencyCollector::Add(const TraceEvent& e) {
  EventKind kind = ClassifyEvent(e.name);
  if (kind != EventKind::kCallCommandStart &&
      kind != EventKind::kCallCommandEnd)
    return;
  auto fd = e.GetInt("fd");
  if (!fd)
    return;
  auto key = std::make_pair(e.host, *fd);
  if (kind == EventKind::kCallCommandStart) {
    // Keyed by start time and command; a restart drops the open one.
    open_[key] = e.ts;
    commands_[key] = std::string(e.GetString("command").value_or(""));
    return;
  }
  auto it = open_.find(key);
  if (it == open_.end())
    return;
  samples_[commands_[key]].push_back(e.ts - it->second);
  open_.erase(it);
}

std::vector<LatencyStats> LatencyCollector::Report() const {
  std::vector<LatencyStats> out;
  for (const auto& [command, raw] : samples_) {
    std::vector<int64_t> d = raw;
    std::sort(d.begin(), d.end());
    LatencyStats s;
    s.command = command;
    s.count = d.size();
    long double sum = 0;
    for (int64_t v : d)
      sum += v;
    s.mean = static_cast<double>(sum / static_cast<long double>(d.size()));
    s.p50 = NearestRank(d, 50);
    s.p95 = NearestRank(d, 95);
    s.p99 = NearestRank(d, 99);
    out.push_back(std::move(s));
  }
  return out;
}

json LatencyJson(const std::vector<LatencyStats>& stats) {
  json out = json::array();
  for (const LatencyStats& s : stats)
    out.push_back({{"command", s.command},
                   {"count", s.count},
                   {"mean_ns", s.mean},
                   {"p50_ns", s.p50},
                   {"p95_ns", s.p95},
                   {"p99_ns", s.p99}});
  return out;
}

DetectResult RunDetectors(const std::string& model_path,
                          const std::string& merged_path,
                          const DetectOptions& options) {
  HistoryTreeReader model(model_path);
  DetectResult result;
  result.out = BusVolumeOutSeries(model, options.bucket_ns);
  result.in = Series::Make("bus_volume_in", model.start_time(),
                           model.end_time(), options.bucket_ns);

  std::ifstream in(merged_path);
  if (!in)
    throw Error(ErrorCode::kIoFailure, "cannot open " + merged_path);
  StreamReader reader(in, merged_path, StreamOrder::kMerged);
  DoubleFreeDetector double_free;
  LatencyCollector latency;
  FlowBuilder flows;
  std::map<std::pair<std::string, int64_t>, std::set<std::string>> fanout;
  TraceEvent e;
  while (reader.Next(&e)) {
    EventKind kind = ClassifyEvent(e.name);
    if (kind == EventKind::kStartReadClientQuery) {
      result.in.AddAt(e.ts,
                      static_cast<double>(e.GetInt("bytes").value_or(0)));
    } else if (kind == EventKind::kClusterSend) {
      auto& dsts = fanout[{e.host, e.GetInt("msg_id").value_or(-1)}];
      if (const AttrValue* dst = e.FindAttr("dst"))
        dsts.insert(AttrToString(*dst));
    }
    double_free.Add(e);
    latency.Add(e);
    flows.Add(e);
  }
  result.flows = flows.Finish();
  result.latency = latency.Report();

  AmplificationOptions amp = options.amplification;
  if (!fanout.empty()) {
    size_t total = 0;
    for (const auto& [msg, dsts] : fanout)
      total += dsts.size();
    amp.mean_fanout =
        static_cast<double>(total) / static_cast<double>(fanout.size());
  }
  result.findings = DetectBusAmplification(result.in, result.out, amp);
  for (Finding& f : double_free.Finish())
    result.findings.push_back(std::move(f));
  for (Finding& f : DetectReadStalls(result.flows, result.out, options.stall))
    result.findings.push_back(std::move(f));
  std::stable_sort(result.findings.begin(), result.findings.end(),
                   [](const Finding& a, const Finding& b) {
                     return std::tie(a.t0, a.t1, a.kind) <
                            std::tie(b.t0, b.t1, b.kind);
                   });
  return result;
}

}  // namespace kvscope
