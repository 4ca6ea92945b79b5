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

#include <fstream>
#include <sstream>

#include "gtest/gtest.h"
#include "kvscope/aggregate/clock_sync.h"
#include "kvscope/aggregate/experiment.h"
#include "kvscope/base/error.h"
#include "test_util.h"

namespace kvscope {
namespace {

TraceEvent Ev(Timestamp ts, std::string host, int64_t seq, std::string name,
              AttrMap attrs = {}) {
  return TraceEvent{ts, host, 1, seq, std::move(name), std::move(attrs)};
}

// Two hosts exchanging cluster messages with a fixed one-way delay. `skew`
// is what host b's clock lags behind the true time.
std::vector<TraceStream> PingPong(int64_t skew, int64_t delay, int rounds) {
  TraceStream a{"a", "", {}};
  TraceStream b{"b", "", {}};
  int64_t msg = 0;
  for (int i = 0; i < rounds; ++i) {
    Timestamp t = 10'000'000 + i * 5'000'000;
    a.events.push_back(Ev(t, "a", 2 * i + 1, "cluster_send",
                          {{"msg_id", ++msg}, {"bytes", 10}, {"kind", "ping"}}));
    b.events.push_back(Ev(t + delay - skew, "b", 2 * i + 1, "cluster_read",
                          {{"fd", 9}, {"msg_id", msg}}));
    b.events.push_back(Ev(t + delay + 5'000 - skew, "b", 2 * i + 2, "cluster_send",
                          {{"msg_id", ++msg}, {"bytes", 10}, {"kind", "pong"}}));
    a.events.push_back(Ev(t + 2 * delay + 5'000, "a", 2 * i + 2, "cluster_read",
                          {{"fd", 9}, {"msg_id", msg}}));
  }
  return {a, b};
}

TEST(ClockSync, SingleStreamIsReference) {
  std::vector<TraceStream> streams{{"n1", "", {Ev(5, "n1", 1, "x")}}};
  ClockOffsets off = EstimateOffsets(streams);
  EXPECT_EQ(off.reference_host, "n1");
  EXPECT_EQ(off.OffsetOf("n1"), 0);
  EXPECT_TRUE(off.warnings.empty());
}

TEST(ClockSync, RecoversSymmetricOffset) {
  auto streams = PingPong(5'000'000, 1'000'000, 10);
  ClockOffsets off = EstimateOffsets(streams);
  EXPECT_EQ(off.reference_host, "a");
  EXPECT_NEAR(off.OffsetOf("b"), 5'000'000, 1'000'000);
  EXPECT_TRUE(off.violations.empty());
}

TEST(ClockSync, NegativeOffset) {
  auto streams = PingPong(-3'000'000, 200'000, 5);
  ClockOffsets off = EstimateOffsets(streams);
  EXPECT_NEAR(off.OffsetOf("b"), -3'000'000, 200'000);
}

TEST(ClockSync, NoPairsFallsBackWithWarning) {
  std::vector<TraceStream> streams{{"a", "", {Ev(1, "a", 1, "x")}},
                                   {"b", "", {Ev(1, "b", 1, "x")}}};
  ClockOffsets off = EstimateOffsets(streams);
  EXPECT_EQ(off.OffsetOf("b"), 0);
  ASSERT_EQ(off.warnings.size(), 1u);
  EXPECT_NE(off.warnings[0].find("b"), std::string::npos);
}

TEST(ClockSync, OneDirectionOnlyRepairsCausality) {
  // b's clock is 10 units behind and we only see a->b messages.
  std::vector<MessagePair> pairs{{"a", 100, "b", 95, "m1"},
                                 {"a", 200, "b", 193, "m2"}};
  ClockOffsets off = EstimateOffsets({"a", "b"}, pairs);
  EXPECT_EQ(off.OffsetOf("b"), 7);
  EXPECT_TRUE(off.violations.empty());
}

TEST(ClockSync, HttpPairsByTupleFifo) {
  AttrMap tuple{{"src_addr", "10.0.0.1"}, {"src_port", 4000},
                {"dst_addr", "10.0.0.2"}, {"dst_port", 80},
                {"service", "user"},      {"fd", 3}};
  TraceStream a{"a", "", {Ev(10, "a", 1, "http_client_request", tuple),
                          Ev(20, "a", 2, "http_client_request", tuple)}};
  TraceStream b{"b", "", {Ev(12, "b", 1, "http_server_receive", tuple),
                          Ev(25, "b", 2, "http_server_receive", tuple)}};
  std::vector<TraceStream> streams{a, b};
  auto pairs = CollectPairs(streams);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].send_ts, 10);
  EXPECT_EQ(pairs[0].recv_ts, 12);
  EXPECT_EQ(pairs[1].send_ts, 20);
  EXPECT_EQ(pairs[1].recv_ts, 25);
}

TEST(ClockSync, BroadcastMatchesByDestination) {
  TraceStream a{"a", "", {Ev(10, "a", 1, "cluster_send",
                             {{"msg_id", 1}, {"bytes", 5}, {"kind", "b"},
                              {"dst", "c"}}),
                          Ev(10, "a", 2, "cluster_send",
                             {{"msg_id", 1}, {"bytes", 5}, {"kind", "b"},
                              {"dst", "b"}})}};
  TraceStream b{"b", "", {Ev(14, "b", 1, "cluster_read",
                             {{"fd", 1}, {"msg_id", 1}})}};
  TraceStream c{"c", "", {Ev(17, "c", 1, "cluster_read",
                             {{"fd", 1}, {"msg_id", 1}})}};
  std::vector<TraceStream> streams{a, b, c};
  auto pairs = CollectPairs(streams);
  ASSERT_EQ(pairs.size(), 2u);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.send_host, "a");
    EXPECT_EQ(p.send_ts, 10);
  }
}

TEST(Merge, InterleavesByTimestamp) {
  std::vector<TraceStream> streams{
      {"A", "", {Ev(1, "A", 1, "x"), Ev(3, "A", 2, "x")}},
      {"B", "", {Ev(2, "B", 1, "x")}}};
  Experiment e = Merge(streams, ZeroOffsets({"A", "B"}));
  ASSERT_EQ(e.events.size(), 3u);
  EXPECT_EQ(e.events[0].ts, 1);
  EXPECT_EQ(e.events[1].ts, 2);
  EXPECT_EQ(e.events[2].ts, 3);
}

TEST(Merge, TieBreaksByHost) {
  std::vector<TraceStream> streams{{"b", "", {Ev(5, "b", 1, "x")}},
                                   {"a", "", {Ev(5, "a", 1, "x")}}};
  Experiment e = Merge(streams, ZeroOffsets({"a", "b"}));
  EXPECT_EQ(e.events[0].host, "a");
  EXPECT_EQ(e.events[1].host, "b");
}

TEST(Merge, AppliesOffsetsAndRestoresCausality) {
  auto streams = PingPong(5'000'000, 1'000'000, 10);
  ClockOffsets off = EstimateOffsets(streams);
  Experiment e = Merge(streams, off);
  EXPECT_EQ(e.events.size(), 40u);
  std::map<int64_t, Timestamp> sent;
  for (const TraceEvent& ev : e.events) {
    if (ev.name == "cluster_send")
      sent[*ev.GetInt("msg_id")] = ev.ts;
    if (ev.name == "cluster_read") {
      ASSERT_TRUE(sent.count(*ev.GetInt("msg_id")));
      EXPECT_GE(ev.ts, sent[*ev.GetInt("msg_id")]);
    }
  }
  for (size_t i = 1; i < e.events.size(); ++i)
    EXPECT_FALSE(MergeOrderLess(e.events[i], e.events[i - 1]));
}

TEST(Merge, StreamingMatchesInMemory) {
  testing::TempDir dir;
  auto streams = PingPong(-2'000'000, 300'000, 20);
  std::vector<std::string> paths;
  for (const auto& s : streams) {
    paths.push_back(dir.File(s.host + ".jsonl"));
    WriteStreamFile(s, paths.back());
  }
  EXPECT_EQ(ListStreamFiles(dir.path()), paths);
  std::ostringstream streamed;
  MergeSummary summary = MergeFiles(paths, true, streamed);
  EXPECT_EQ(summary.event_count, 80u);

  Experiment e = Merge(streams, EstimateOffsets(streams));
  std::string expected;
  for (const auto& ev : e.events) {
    AppendEventJson(ev, &expected);
    expected += '\n';
  }
  EXPECT_EQ(streamed.str(), expected);
  EXPECT_EQ(summary.offsets.offsets, e.offsets.offsets);
}

TEST(Merge, ExperimentFileRoundTrip) {
  testing::TempDir dir;
  auto streams = PingPong(1'000'000, 100'000, 3);
  Experiment e = Merge(streams, EstimateOffsets(streams));
  std::string path = dir.File("merged.jsonl");
  WriteExperiment(e, path);
  Experiment back = ReadExperiment(path);
  EXPECT_EQ(back.events, e.events);
  EXPECT_EQ(back.offsets.offsets, e.offsets.offsets);
  EXPECT_EQ(back.offsets.reference_host, e.offsets.reference_host);
}

TEST(Merge, ListRejectsMissingDirectory) {
  EXPECT_THROW(ListStreamFiles("/nonexistent/dir"), DataError);
}

}  // namespace
}  // namespace kvscope
