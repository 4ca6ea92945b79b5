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

#include <sstream>

#include <gtest/gtest.h>

#include "kvscope/base/error.h"
#include "pipeline_util.h"
#include "trace_script.h"

namespace kvscope {
namespace {

using nlohmann::json;
using testing::TempDir;
using testing::TraceScript;

std::vector<Finding> OfKind(const std::vector<Finding>& all,
                            const std::string& kind) {
  std::vector<Finding> out;
  for (const auto& f : all)
    if (f.kind == kind)
      out.push_back(f);
  return out;
}

DetectResult Detect(const std::string& merged, const TempDir& dir,
                    const DetectOptions& opt = {}) {
  return RunDetectors(testing::BuildModel(merged, dir), merged, opt);
}

DetectResult DetectScript(const TraceScript& script, const TempDir& dir) {
  std::string merged = dir.File("script.jsonl");
  script.WriteMerged(merged);
  return Detect(merged, dir);
}

ScenarioConfig Publish(int nodes, int requests) {
  ScenarioConfig c;
  c.nodes = nodes;
  c.requests = requests;
  c.commands = {"publish"};
  return c;
}

TEST(SeriesTest, ShapeAndClamping) {
  Series s = Series::Make("x", 1000, 3500, 1000);
  ASSERT_EQ(s.values.size(), 3u);
  s.AddAt(999, 1);
  s.AddAt(1000, 1);
  s.AddAt(2999, 2);
  s.AddAt(3500, 4);
  EXPECT_EQ(s.values, (std::vector<double>{2, 2, 4}));
  EXPECT_DOUBLE_EQ(s.Sum(), 8);
  EXPECT_DOUBLE_EQ(s.MeanOver(2000, 9000), 3);
  EXPECT_EQ(Series::Make("x", 5, 5, 10).values.size(), 1u);
  EXPECT_THROW(Series::Make("x", 0, 10, 0), Error);
}

TEST(SeriesTest, CsvHasOneRowPerBucket) {
  Series s = Series::Make("bus_volume_out", 100, 300, 100);
  s.values = {1.5, 3};
  std::ostringstream out;
  WriteSeriesCsv(s, out);
  EXPECT_EQ(out.str(), "ts,bus_volume_out\n100,1.5\n200,3\n");
}

TEST(LatencyTest, NearestRank) {
  std::vector<int64_t> v;
  for (int i = 1; i <= 100; ++i)
    v.push_back(i);
  EXPECT_EQ(NearestRank(v, 50), 50);
  EXPECT_EQ(NearestRank(v, 95), 95);
  EXPECT_EQ(NearestRank(v, 99), 99);
  EXPECT_EQ(NearestRank(v, 100), 100);
  EXPECT_EQ(NearestRank({7}, 99), 7);
  EXPECT_EQ(NearestRank({1, 2, 3}, 50), 2);
  EXPECT_THROW(NearestRank({}, 50), Error);
}

TEST(AmplificationTest, MaximalRunsAndSeverity) {
  Series in = Series::Make("in", 0, 5, 1);
  Series out = Series::Make("out", 0, 5, 1);
  in.values = {10, 10, 10, 0, 10};
  out.values = {100, 100, 5, 7, 30};
  auto f = DetectBusAmplification(in, out, {});
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].t0, 0);
  EXPECT_EQ(f[0].t1, 2);
  EXPECT_EQ(f[0].severity, Severity::kCritical);
  EXPECT_DOUBLE_EQ(f[0].evidence["ratio"].get<double>(), 10);
  EXPECT_EQ(f[1].t0, 4);
  EXPECT_EQ(f[1].severity, Severity::kWarn);
  EXPECT_DOUBLE_EQ(f[1].evidence["ratio"].get<double>(), 3);
}

TEST(AmplificationTest, EqualSeriesGiveNothing) {
  Series in = Series::Make("in", 0, 3, 1);
  in.values = {4, 5, 6};
  Series out = in;
  EXPECT_TRUE(DetectBusAmplification(in, out, {}).empty());
  Series shifted = Series::Make("out", 1, 4, 1);
  EXPECT_THROW(DetectBusAmplification(in, shifted, {}), Error);
}

TEST(SeriesTest, NoClusterEventsGiveZeroOutSeries) {
  TempDir dir;
  TraceScript s;
  s.Add(1000, "n1", 1, "start_read_client_query",
        {{"fd", int64_t{5}}, {"bytes", int64_t{64}}});
  s.Add(5000, "n1", 1, "end_read_client_query", {{"fd", int64_t{5}}});
  DetectResult r = DetectScript(s, dir);
  EXPECT_DOUBLE_EQ(r.out.Sum(), 0);
  EXPECT_DOUBLE_EQ(r.in.Sum(), 64);
  EXPECT_TRUE(r.findings.empty());
}

TEST(SeriesTest, ConservationAcrossBucketWidths) {
  TempDir dir;
  json truth;
  ScenarioConfig c = Publish(3, 500);
  c.commands = {"get", "publish"};
  std::string merged = testing::GenerateAndMerge(c, dir, &truth);
  std::string model = testing::BuildModel(merged, dir);
  HistoryTreeReader reader(model);
  double expected = truth["cluster_send_bytes"].get<double>();
  for (int64_t width : {int64_t{1'000'000'000}, int64_t{1'000'000},
                        int64_t{1'000}}) {
    Series out = BusVolumeOutSeries(reader, width);
    EXPECT_DOUBLE_EQ(out.Sum(), expected) << width;
    int64_t span = reader.end_time() - reader.start_time();
    EXPECT_EQ(static_cast<int64_t>(out.values.size()),
              (span + width - 1) / width);
  }
}

TEST(AmplificationTest, ClosedFormRatio) {
  for (int nodes : {2, 3, 5}) {
    TempDir dir;
    ScenarioConfig c = Publish(nodes, 1000);
    std::string merged = testing::GenerateAndMerge(c, dir);
    DetectResult r = Detect(merged, dir);
    double expected = (nodes - 1) *
                      static_cast<double>(c.payload + c.gossip_header) /
                      static_cast<double>(c.payload);
    EXPECT_NEAR(r.out.Sum() / r.in.Sum(), expected, expected * 0.01)
        << nodes;
  }
}

TEST(AmplificationTest, TenfoldScenarioGivesOneCriticalFinding) {
  TempDir dir;
  ScenarioConfig c = Publish(3, 3000);
  c.gossip_header = 4 * c.payload;
  c.faults = {Fault::kBroadcastAmplification};
  std::string merged = testing::GenerateAndMerge(c, dir);
  DetectResult r = Detect(merged, dir);
  auto amp = OfKind(r.findings, "BusAmplification");
  ASSERT_EQ(amp.size(), 1u);
  EXPECT_EQ(amp[0].severity, Severity::kCritical);
  EXPECT_NEAR(amp[0].evidence["ratio"].get<double>(), 10, 0.5);
  EXPECT_DOUBLE_EQ(amp[0].evidence["mean_fanout"].get<double>(), 2);
}

TEST(DoubleFreeTest, FreeReconnectFreeIsClean) {
  TempDir dir;
  TraceScript s;
  auto fd = AttrMap{{"fd", int64_t{9}}};
  s.Add(1000, "n1", 1, "start_read_client_query",
        {{"fd", int64_t{9}}, {"bytes", int64_t{10}}});
  s.Add(2000, "n1", 1, "free_client", fd);
  s.Add(3000, "n1", 2, "start_read_client_query",
        {{"fd", int64_t{9}}, {"bytes", int64_t{10}}});
  s.Add(4000, "n1", 2, "free_client", fd);
  EXPECT_TRUE(OfKind(DetectScript(s, dir).findings, "DoubleFree").empty());
}

TEST(DoubleFreeTest, SecondFreeWithoutReopenIsCritical) {
  TempDir dir;
  TraceScript s;
  auto fd = AttrMap{{"fd", int64_t{9}}};
  s.Add(1000, "n1", 1, "start_read_client_query",
        {{"fd", int64_t{9}}, {"bytes", int64_t{10}}});
  s.Add(1500, "n1", 2, "call_command_start",
        {{"fd", int64_t{9}}, {"command", std::string("get")}});
  s.Add(2000, "n1", 1, "free_client", fd);
  s.Add(3000, "n1", 2, "free_client", fd);
  auto f = OfKind(DetectScript(s, dir).findings, "DoubleFree");
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].severity, Severity::kCritical);
  EXPECT_EQ(f[0].t0, 2000);
  EXPECT_EQ(f[0].t1, 3000);
  EXPECT_EQ(f[0].evidence["tid_first"], 1);
  EXPECT_EQ(f[0].evidence["tid_second"], 2);
  EXPECT_EQ(f[0].evidence["overlap"], true);
  EXPECT_EQ(f[0].paths[0], "Connections/9#0");
  EXPECT_EQ(f[0].paths[1], "Threads/1/Operation");
  EXPECT_EQ(f[0].paths[2], "Threads/2/Operation");
}

TEST(DoubleFreeTest, DuplicateListAddIsWarn) {
  TempDir dir;
  TraceScript s;
  auto ssl = [](int64_t pending) {
    return AttrMap{{"fd", int64_t{9}},
                   {"bytes_requested", int64_t{16384}},
                   {"bytes_read", int64_t{100}},
                   {"pending", pending}};
  };
  s.Add(1000, "n1", 1, "start_read_client_query",
        {{"fd", int64_t{9}}, {"bytes", int64_t{10}}});
  s.Add(2000, "n1", 1, "ssl_read", ssl(1));
  s.Add(3000, "n1", 1, "run_pending_reads", {});
  s.Add(4000, "n1", 2, "ssl_read", ssl(1));  // re-add after drain: fine
  s.Add(5000, "n1", 3, "ssl_read", ssl(1));  // second add, no drain
  s.Add(6000, "n1", 3, "ssl_read", ssl(0));
  s.Add(7000, "n1", 3, "ssl_read", ssl(1));  // re-add after pending = 0
  auto f = OfKind(DetectScript(s, dir).findings, "DoubleFree");
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].severity, Severity::kWarn);
  EXPECT_EQ(f[0].t0, 4000);
  EXPECT_EQ(f[0].t1, 5000);
  EXPECT_EQ(f[0].evidence["tid_first"], 2);
  EXPECT_EQ(f[0].evidence["tid_second"], 3);
}

TEST(DoubleFreeTest, GeneratedSslDoubleFree) {
  TempDir dir;
  json truth;
  ScenarioConfig c;
  c.scenario = "ssl-double-free";
  c.faults = {Fault::kSslPendingDoubleFree};
  std::string merged = testing::GenerateAndMerge(c, dir, &truth);
  auto f = OfKind(Detect(merged, dir).findings, "DoubleFree");
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].severity, Severity::kCritical);
  const json& gt = truth["faults"][0];
  EXPECT_EQ(f[0].evidence["tid_first"], gt["tids"][0]);
  EXPECT_EQ(f[0].evidence["tid_second"], gt["tids"][1]);
  EXPECT_NE(f[0].evidence["tid_first"], f[0].evidence["tid_second"]);
  EXPECT_EQ(f[0].t0, gt["free_ts"][0]);
  EXPECT_EQ(f[0].t1, gt["free_ts"][1]);
  EXPECT_EQ(f[0].evidence["fd"], 132);
}

struct SuiteCase {
  std::string scenario;
  std::set<Fault> faults;
};

TEST(DoubleFreeTest, NoFalsePositivesOnDefaultSuite) {
  std::vector<SuiteCase> suite = {
      {"cluster-publish", {}},
      {"cluster-publish", {Fault::kReadStall}},
      {"cluster-publish", {Fault::kBroadcastAmplification}},
      {"cluster-publish", {Fault::kTruncate}},
      {"ssl", {}},
      {"microservices", {}},
      {"microservices", {Fault::kPipelinedHttp}},
  };
  for (const SuiteCase& sc : suite) {
    for (uint64_t seed : {1, 2}) {
      TempDir dir;
      ScenarioConfig c;
      c.scenario = sc.scenario;
      c.faults = sc.faults;
      c.seed = seed;
      c.requests = 300;
      std::string merged = testing::GenerateAndMerge(c, dir);
      EXPECT_TRUE(OfKind(Detect(merged, dir).findings, "DoubleFree").empty())
          << sc.scenario << " seed " << seed;
    }
  }
}

// The correlation gate compares against the global mean, so the trace has to
// be several times longer than the 70 ms window around the stall.
TEST(ReadStallTest, BurstCorrelatedStallIsWarn) {
  TempDir dir;
  json truth;
  ScenarioConfig c = Publish(3, 10000);
  c.faults = {Fault::kReadStall};
  std::string merged = testing::GenerateAndMerge(c, dir, &truth);
  auto f = OfKind(Detect(merged, dir).findings, "ReadStall");
  ASSERT_EQ(f.size(), 1u);
  const json& gt = truth["faults"][0];
  EXPECT_EQ(f[0].severity, Severity::kWarn);
  EXPECT_EQ(f[0].evidence["host"], gt["host"]);
  EXPECT_EQ(f[0].evidence["msg_id"], gt["msg_id"]);
  EXPECT_GE(f[0].evidence["duration_ns"].get<int64_t>(), c.stall_ns);
  EXPECT_GT(f[0].evidence["window_mean"].get<double>(),
            2 * f[0].evidence["global_mean"].get<double>());
}

TEST(ReadStallTest, FlatVolumeStallIsInfo) {
  TempDir dir;
  ScenarioConfig c = Publish(3, 2000);
  c.faults = {Fault::kReadStallFlat};
  std::string merged = testing::GenerateAndMerge(c, dir);
  auto f = OfKind(Detect(merged, dir).findings, "ReadStall");
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].severity, Severity::kInfo);
}

TEST(ReadStallTest, NoStallNoFinding) {
  TempDir dir;
  std::string merged = testing::GenerateAndMerge(Publish(3, 2000), dir);
  EXPECT_TRUE(OfKind(Detect(merged, dir).findings, "ReadStall").empty());
}

TEST(LatencyTest, FixedServiceIsExact) {
  TempDir dir;
  ScenarioConfig c;
  c.commands = {"get"};
  c.requests = 20000;
  c.fixed_service = true;
  std::string merged = testing::GenerateAndMerge(c, dir);
  DetectResult r = Detect(merged, dir);
  ASSERT_EQ(r.latency.size(), 1u);
  EXPECT_EQ(r.latency[0].command, "get");
  EXPECT_EQ(r.latency[0].count, 20000u);
  EXPECT_EQ(r.latency[0].mean, 100000.0);
  EXPECT_EQ(r.latency[0].p50, 100000);
  EXPECT_EQ(r.latency[0].p95, 100000);
  EXPECT_EQ(r.latency[0].p99, 100000);
}

TEST(LatencyTest, MixedCommandsGroupAndCount) {
  TempDir dir;
  json truth;
  ScenarioConfig c;
  c.commands = {"get", "set", "subscribe", "publish"};
  c.requests = 200;
  std::string merged = testing::GenerateAndMerge(c, dir, &truth);
  DetectResult r = Detect(merged, dir);
  ASSERT_EQ(r.latency.size(), 4u);
  for (const auto& s : r.latency) {
    EXPECT_EQ(s.count, truth["requests"][s.command].get<uint64_t>());
    EXPECT_LE(s.p50, s.p95);
    EXPECT_LE(s.p95, s.p99);
  }
  EXPECT_EQ(LatencyJson(r.latency).size(), 4u);
}

TEST(LatencyTest, NoCommandsEmptyReport) {
  LatencyCollector c;
  EXPECT_TRUE(c.Report().empty());
}

TEST(DetectTest, DeterministicFindings) {
  TempDir a, b;
  ScenarioConfig c = Publish(3, 1000);
  c.gossip_header = 4 * c.payload;
  c.faults = {Fault::kReadStall};
  std::string ma = testing::GenerateAndMerge(c, a);
  std::string mb = testing::GenerateAndMerge(c, b);
  json fa = FindingsJson(Detect(ma, a).findings);
  json fb = FindingsJson(Detect(mb, b).findings);
  EXPECT_FALSE(fa.empty());
  EXPECT_EQ(fa.dump(), fb.dump());
  for (const auto& f : fa)
    EXPECT_FALSE(f["evidence"].empty());
}

}  // namespace
}  // namespace kvscope
