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

#include "kvscope/analysis/redis_analysis.h"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <random>

#include <gtest/gtest.h>

#include "kvscope/sht/history_tree.h"
#include "kvscope/state/model_schema.h"
#include "test_util.h"
#include "trace_script.h"

namespace kvscope {
namespace {

using testing::TempDir;
using testing::TraceScript;

constexpr Timestamp kT0 = 1'000'000;

// Runs the analysis over the script and leaves the tree at `sht`.
AnalysisReport Analyze(const TraceScript& script, const std::string& sht) {
  Timestamp start = script.events().empty() ? 0 : script.events()[0].ts;
  StateSystem model(sht, start);
  RedisAnalysis analysis(&model);
  for (const auto& e : script.events())
    analysis.Handle(e);
  return analysis.Finalize(script.events().empty()
                               ? 0
                               : script.events().back().ts + 1);
}

// Non-null values taken by `path`, in time order, markers included.
std::vector<std::string> History(HistoryTreeReader& reader,
                                 const std::string& path) {
  std::vector<std::string> out;
  auto q = reader.FindQuark(path);
  if (!q)
    return out;
  for (const auto& iv :
       reader.QueryRange(*q, reader.start_time(), reader.end_time())) {
    if (!iv.value.is_null())
      out.push_back(iv.value.ToString());
  }
  return out;
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void PublishRequest(TraceScript& s, Timestamp t, int64_t fd) {
  s.Add(t, "n1", 1000, "start_read_client_query",
        {{"fd", fd}, {"bytes", int64_t{64}}, {"mem", int64_t{4096}}});
  s.Add(t + 10, "n1", 1000, "call_command_start",
        {{"fd", fd}, {"command", std::string("publish")}});
  s.Add(t + 20, "n1", 1000, "add_file_event", {{"fd", fd}});
  s.Add(t + 30, "n1", 1000, "call_command_end",
        {{"fd", fd}, {"command", std::string("publish")}});
  s.Add(t + 40, "n1", 1000, "end_read_client_query", {{"fd", fd}});
  s.Add(t + 50, "n1", 1000, "write_to_client_start", {{"fd", fd}});
  s.Add(t + 60, "n1", 1000, "write_to_client_end", {{"fd", fd}});
  s.Add(t + 70, "n1", 1000, "delete_file_event", {{"fd", fd}});
}

TEST(RedisAnalysisTest, PublishLifeCycle) {
  TempDir dir;
  TraceScript s;
  PublishRequest(s, kT0, 7);
  AnalysisReport report = Analyze(s, dir.File("t.sht"));
  EXPECT_EQ(report.requests, 1u);
  EXPECT_EQ(report.unmatched, 0u);
  EXPECT_EQ(report.contexts, 1u);

  HistoryTreeReader reader(dir.File("t.sht"));
  EXPECT_EQ(History(reader, "Threads/1000/Operation"),
            (std::vector<std::string>{"Read", "publish", "Write to client"}));
  EXPECT_EQ(History(reader, "EventLoop/n1/Phase"),
            (std::vector<std::string>{"ReadingClient", "ExecutingCommand",
                                      "WritingClient", "Polling"}));
  EXPECT_EQ(History(reader, "Requests/n1:7#0:1/DataStructure"),
            (std::vector<std::string>{"query_buffer", "el_queue"}));
  EXPECT_EQ(History(reader, "Requests/n1:7#0:1/Type"),
            (std::vector<std::string>{"write"}));
  EXPECT_EQ(History(reader, "Threads/1000/Request"),
            (std::vector<std::string>{"n1:7#0:1"}));
  EXPECT_EQ(History(reader, "Connections/7#0/Type"),
            (std::vector<std::string>{"client"}));
  EXPECT_EQ(History(reader, "Connections/7#0/Memory"),
            (std::vector<std::string>{"4096"}));

  // Request attributes end when the reply has been written.
  auto q = reader.FindQuark("Requests/n1:7#0:1/Connection");
  ASSERT_TRUE(q);
  EXPECT_TRUE(reader.QuerySingle(*q, kT0 + 65).is_null());
  EXPECT_EQ(reader.QuerySingle(*q, kT0 + 55), StateValue::Str("7#0"));
}

TEST(RedisAnalysisTest, SslReadLabel) {
  TempDir dir;
  TraceScript s;
  s.Add(kT0, "n1", 1000, "start_read_client_query", {{"fd", int64_t{132}}});
  s.Add(kT0 + 5, "n1", 1000, "ssl_read",
        {{"fd", int64_t{132}},
         {"bytes_requested", int64_t{16384}},
         {"bytes_read", int64_t{8192}},
         {"pending", int64_t{1}}});
  Analyze(s, dir.File("t.sht"));
  HistoryTreeReader reader(dir.File("t.sht"));
  auto ops = History(reader, "Threads/1000/Operation");
  ASSERT_EQ(ops.size(), 2u);
  EXPECT_EQ(ops[1], "Reading SSL bytes=8192");
}

TEST(RedisAnalysisTest, UnmatchedEndLeavesMarker) {
  TempDir dir;
  TraceScript s;
  s.Add(kT0, "n1", 1000, "start_read_client_query", {{"fd", int64_t{3}}});
  s.Add(kT0 + 10, "n1", 1000, "call_command_end",
        {{"fd", int64_t{3}}, {"command", std::string("get")}});
  s.Add(kT0 + 20, "n1", 1000, "end_read_client_query", {{"fd", int64_t{3}}});
  AnalysisReport report = Analyze(s, dir.File("t.sht"));
  EXPECT_EQ(report.unmatched, 1u);

  HistoryTreeReader reader(dir.File("t.sht"));
  auto q = reader.FindQuark("Threads/1000/Operation");
  ASSERT_TRUE(q);
  auto ivs = reader.QueryRange(*q, kT0, kT0 + 20);
  auto marker = std::find_if(ivs.begin(), ivs.end(), [](const auto& iv) {
    return iv.start == iv.end;
  });
  ASSERT_NE(marker, ivs.end());
  EXPECT_EQ(marker->value, StateValue::Str("Unmatched call_command_end"));
  EXPECT_EQ(marker->start, kT0 + 10);
  // The open state continues across the marker.
  EXPECT_EQ(reader.QuerySingle(*q, kT0 + 15), StateValue::Str("Read"));
}

TEST(RedisAnalysisTest, UnmatchedProcessPacket) {
  TempDir dir;
  TraceScript s;
  s.Add(kT0, "n2", 2000, "cluster_read",
        {{"fd", int64_t{40}}, {"msg_id", int64_t{1}}});
  s.Add(kT0 + 10, "n2", 2000, "cluster_process_packet",
        {{"fd", int64_t{40}}, {"msg_id", int64_t{1}}});
  s.Add(kT0 + 20, "n2", 2000, "cluster_process_packet",
        {{"fd", int64_t{40}}, {"msg_id", int64_t{2}}});
  AnalysisReport report = Analyze(s, dir.File("t.sht"));
  EXPECT_EQ(report.unmatched, 1u);
  HistoryTreeReader reader(dir.File("t.sht"));
  EXPECT_EQ(History(reader, "Connections/40#0/Type"),
            (std::vector<std::string>{"cluster"}));
}

TEST(RedisAnalysisTest, QueueLengthMatchesCounter) {
  TempDir dir;
  TraceScript s;
  std::mt19937_64 rng(7);
  std::vector<std::pair<Timestamp, int64_t>> expected;
  int64_t depth = 0;
  uint64_t floor_hits = 0;
  Timestamp t = kT0;
  for (int i = 0; i < 2000; ++i) {
    t += 1 + static_cast<Timestamp>(rng() % 50);
    bool add = rng() % 100 < 55;
    s.Add(t, "n1", 1000, add ? "add_file_event" : "delete_file_event",
          {{"fd", int64_t{9}}});
    if (add)
      ++depth;
    else if (depth > 0)
      --depth;
    else
      ++floor_hits;
    expected.emplace_back(t, depth);
  }
  AnalysisReport report = Analyze(s, dir.File("t.sht"));
  EXPECT_EQ(report.warnings, floor_hits);

  HistoryTreeReader reader(dir.File("t.sht"));
  auto q = reader.FindQuark("EventLoop/n1/QueueLength");
  ASSERT_TRUE(q);
  for (const auto& [ts, value] : expected) {
    StateValue got = reader.QuerySingle(*q, ts);
    int64_t v = got.is_null() ? 0 : got.as_int();
    ASSERT_EQ(v, value) << "at " << ts;
  }
}

TEST(RedisAnalysisTest, FreeRetiresConnectionAndReuseBumpsGeneration) {
  TempDir dir;
  TraceScript s;
  PublishRequest(s, kT0, 5);
  s.Add(kT0 + 100, "n1", 1000, "free_client", {{"fd", int64_t{5}}});
  s.Add(kT0 + 110, "n1", 1001, "free_client", {{"fd", int64_t{5}}});
  PublishRequest(s, kT0 + 200, 5);
  AnalysisReport report = Analyze(s, dir.File("t.sht"));
  EXPECT_EQ(report.orphan_fd, 1u);
  EXPECT_EQ(report.contexts, 2u);
  EXPECT_EQ(report.requests, 2u);

  HistoryTreeReader reader(dir.File("t.sht"));
  auto old_type = reader.FindQuark("Connections/5#0/Type");
  auto new_type = reader.FindQuark("Connections/5#1/Type");
  ASSERT_TRUE(old_type);
  ASSERT_TRUE(new_type);
  EXPECT_EQ(reader.QuerySingle(*old_type, kT0 + 50), StateValue::Str("client"));
  EXPECT_TRUE(reader.QuerySingle(*old_type, kT0 + 150).is_null());
  EXPECT_EQ(reader.QuerySingle(*new_type, kT0 + 250),
            StateValue::Str("client"));
  EXPECT_TRUE(reader.FindQuark("Requests/n1:5#1:1/Type").has_value());
  EXPECT_EQ(History(reader, "Threads/1001/Operation"),
            (std::vector<std::string>{"FREEING CLIENT"}));
}

TEST(RedisAnalysisTest, TidSeenOnTwoHostsGetsQualified) {
  TempDir dir;
  TraceScript s;
  s.Add(kT0, "n1", 1000, "start_read_client_query", {{"fd", int64_t{5}}});
  s.Add(kT0, "n2", 1000, "start_read_client_query", {{"fd", int64_t{6}}});
  Analyze(s, dir.File("t.sht"));
  HistoryTreeReader reader(dir.File("t.sht"));
  EXPECT_TRUE(reader.FindQuark("Threads/1000/Operation").has_value());
  EXPECT_TRUE(reader.FindQuark("Threads/1000@n2/Operation").has_value());
}

TEST(RedisAnalysisTest, BusVolumeIsCumulative) {
  TempDir dir;
  TraceScript s;
  for (int i = 0; i < 4; ++i) {
    s.Add(kT0 + i * 10, "n1", 1000, "cluster_send",
          {{"msg_id", int64_t{i}},
           {"bytes", int64_t{100}},
           {"kind", std::string("broadcast")}});
  }
  Analyze(s, dir.File("t.sht"));
  HistoryTreeReader reader(dir.File("t.sht"));
  EXPECT_EQ(History(reader, "Bus/Volume"),
            (std::vector<std::string>{"100", "200", "300", "400"}));
}

TEST(RedisAnalysisTest, UnknownEventsCounted) {
  TempDir dir;
  TraceScript s;
  s.Add(kT0, "n1", 1000, "mystery_event");
  s.Add(kT0 + 1, "n1", 1000, "http_client_request",
        {{"src_addr", std::string("a")},
         {"dst_addr", std::string("b")},
         {"src_port", int64_t{1}},
         {"dst_port", int64_t{2}},
         {"service", std::string("x")},
         {"fd", int64_t{3}}});
  AnalysisReport report = Analyze(s, dir.File("t.sht"));
  EXPECT_EQ(report.events, 2u);
  EXPECT_EQ(report.unknown_events, 1u);
}

TEST(RedisAnalysisTest, ReplayIsBitIdentical) {
  TempDir dir;
  TraceScript s;
  for (int i = 0; i < 300; ++i)
    PublishRequest(s, kT0 + i * 1000, 10 + i % 7);
  s.WriteMerged(dir.File("merged.jsonl"));
  AnalysisReport a = AnalyzeFile(dir.File("merged.jsonl"), dir.File("a.sht"));
  AnalysisReport b = AnalyzeFile(dir.File("merged.jsonl"), dir.File("b.sht"));
  EXPECT_EQ(AnalysisReportJson(a), AnalysisReportJson(b));
  EXPECT_EQ(a.requests, 300u);
  EXPECT_EQ(ReadFile(dir.File("a.sht")), ReadFile(dir.File("b.sht")));
}

TEST(RedisAnalysisTest, EmptyTrace) {
  TempDir dir;
  std::ofstream(dir.File("empty.jsonl")).close();
  AnalysisReport r = AnalyzeFile(dir.File("empty.jsonl"), dir.File("e.sht"));
  EXPECT_EQ(r.events, 0u);
  HistoryTreeReader reader(dir.File("e.sht"));
  EXPECT_EQ(reader.quark_count(), 0u);
}

}  // namespace
}  // namespace kvscope
