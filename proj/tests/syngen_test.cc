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

#include "kvscope/syngen/syngen.h"

#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "kvscope/base/error.h"

namespace kvscope {
namespace {

std::string Serialize(const GeneratedTrace& trace) {
  std::ostringstream out;
  for (const auto& s : trace.streams)
    WriteStream(s, out);
  out << trace.ground_truth.dump();
  return out.str();
}

size_t CountNamed(const GeneratedTrace& trace, const std::string& name) {
  size_t n = 0;
  for (const auto& s : trace.streams) {
    for (const auto& e : s.events)
      n += e.name == name;
  }
  return n;
}

const TraceEvent& Resolve(const GeneratedTrace& trace, const std::string& ref) {
  auto colon = ref.rfind(':');
  std::string host = ref.substr(0, colon);
  size_t seq = std::stoul(ref.substr(colon + 1));
  for (const auto& s : trace.streams) {
    if (s.host == host)
      return s.events.at(seq);
  }
  throw std::runtime_error("no host " + host);
}

ScenarioConfig Small(const std::string& scenario) {
  ScenarioConfig c;
  c.scenario = scenario;
  c.requests = 200;
  return c;
}

TEST(SyngenTest, SameSeedSameBytes) {
  for (const char* scenario : {"cluster-publish", "ssl-double-free",
                               "microservices"}) {
    ScenarioConfig c = Small(scenario);
    EXPECT_EQ(Serialize(Generate(c)), Serialize(Generate(c))) << scenario;
    ScenarioConfig d = c;
    d.seed = 2;
    EXPECT_NE(Serialize(Generate(c)), Serialize(Generate(d))) << scenario;
  }
}

TEST(SyngenTest, StreamsAreWellFormed) {
  for (const char* scenario : {"cluster-publish", "ssl", "microservices"}) {
    GeneratedTrace trace = Generate(Small(scenario));
    for (const auto& s : trace.streams) {
      std::ostringstream out;
      WriteStream(s, out);
      std::istringstream in(out.str());
      TraceStream back = ParseStream(in, s.path);  // checks order and schema
      EXPECT_EQ(back.events, s.events);
      for (const auto& e : s.events)
        EXPECT_FALSE(CheckSchema(e).has_value()) << FormatEvent(e);
    }
  }
}

TEST(SyngenTest, SingleNodeHasNoBusTraffic) {
  ScenarioConfig c = Small("cluster-publish");
  c.nodes = 1;
  GeneratedTrace trace = Generate(c);
  EXPECT_EQ(CountNamed(trace, "cluster_send"), 0u);
  EXPECT_EQ(CountNamed(trace, "call_command_start"), 200u);
}

TEST(SyngenTest, BroadcastReachesEveryPeer) {
  ScenarioConfig c = Small("cluster-publish");
  c.nodes = 4;
  GeneratedTrace trace = Generate(c);
  EXPECT_EQ(CountNamed(trace, "cluster_send"), 200u * 3);
  EXPECT_EQ(CountNamed(trace, "cluster_read"), 200u * 3);
  EXPECT_EQ(CountNamed(trace, "cluster_process_packet"), 200u * 3);
  EXPECT_EQ(trace.ground_truth["cluster_send_bytes"].get<int64_t>(),
            200 * 3 * (c.payload + c.gossip_header));
}

TEST(SyngenTest, OffsetsShiftRawTimestamps) {
  ScenarioConfig c = Small("cluster-publish");
  GeneratedTrace base = Generate(c);
  c.offsets = {{"n2", 5'000'000}, {"n3", -3'000'000}};
  GeneratedTrace shifted = Generate(c);
  ASSERT_EQ(base.streams.size(), shifted.streams.size());
  for (size_t i = 0; i < base.streams.size(); ++i) {
    int64_t offset = c.offsets.count(base.streams[i].host)
                         ? c.offsets[base.streams[i].host]
                         : 0;
    ASSERT_EQ(base.streams[i].events.size(), shifted.streams[i].events.size());
    for (size_t j = 0; j < base.streams[i].events.size(); ++j) {
      EXPECT_EQ(base.streams[i].events[j].ts - offset,
                shifted.streams[i].events[j].ts);
    }
  }
  EXPECT_EQ(shifted.ground_truth["offsets"]["n2"].get<int64_t>(), 5'000'000);
}

TEST(SyngenTest, GroundTruthFlowsPointAtEmittedEvents) {
  GeneratedTrace trace = Generate(Small("cluster-publish"));
  const auto& flows = trace.ground_truth["flows"];
  ASSERT_EQ(flows.size(), 200u);
  std::set<std::string> ids;
  for (const auto& flow : flows) {
    EXPECT_TRUE(ids.insert(flow["id"].get<std::string>()).second);
    EXPECT_TRUE(flow["complete"].get<bool>());
    // Read, publish, two branches of two segments, one Write to client.
    ASSERT_EQ(flow["segments"].size(), 7u);
    for (const auto& seg : flow["segments"]) {
      const TraceEvent& start = Resolve(trace, seg["start"]);
      const TraceEvent& end = Resolve(trace, seg["end"]);
      std::string label = seg["label"];
      if (label == "Read") {
        EXPECT_EQ(start.name, "start_read_client_query");
        EXPECT_EQ(end.name, "call_command_start");
      } else if (label == "Bus transit") {
        EXPECT_EQ(start.name, "cluster_send");
        EXPECT_EQ(end.name, "cluster_read");
        EXPECT_EQ(start.GetInt("msg_id"), end.GetInt("msg_id"));
        EXPECT_EQ(*start.GetString("dst"), end.host);
      } else if (label == "Write to client") {
        EXPECT_EQ(start.name, "write_to_client_start");
        EXPECT_EQ(end.name, "write_to_client_end");
      }
      EXPECT_LE(seg["t0"].get<int64_t>(), seg["t1"].get<int64_t>());
    }
  }
}

TEST(SyngenTest, FixedServiceTimeIsExact) {
  ScenarioConfig c = Small("cluster-publish");
  c.commands = {"get"};
  c.fixed_service = true;
  GeneratedTrace trace = Generate(c);
  for (const auto& s : trace.streams) {
    std::map<int64_t, Timestamp> open;
    for (const auto& e : s.events) {
      if (e.name == "call_command_start")
        open[*e.GetInt("fd")] = e.ts;
      if (e.name == "call_command_end")
        EXPECT_EQ(e.ts - open.at(*e.GetInt("fd")), 100'000);
    }
  }
}

TEST(SyngenTest, CommandMixCounts) {
  ScenarioConfig c = Small("cluster-publish");
  c.commands = {"get", "set", "publish", "subscribe"};
  GeneratedTrace trace = Generate(c);
  for (const char* cmd : {"get", "set", "publish", "subscribe"})
    EXPECT_EQ(trace.ground_truth["requests"][cmd].get<int64_t>(), 200) << cmd;
}

TEST(SyngenTest, SslSequence) {
  GeneratedTrace fault = Generate(Small("ssl-double-free"));
  GeneratedTrace control = Generate(Small("ssl"));
  auto frees_on_132 = [](const GeneratedTrace& t) {
    std::vector<int64_t> tids;
    for (const auto& s : t.streams) {
      for (const auto& e : s.events) {
        if (e.name == "free_client" && e.GetInt("fd") == 132)
          tids.push_back(e.tid);
      }
    }
    return tids;
  };
  EXPECT_EQ(frees_on_132(fault), (std::vector<int64_t>{1001, 1002}));
  EXPECT_EQ(frees_on_132(control), (std::vector<int64_t>{1001}));
  ASSERT_EQ(fault.ground_truth["faults"].size(), 1u);
  EXPECT_EQ(fault.ground_truth["faults"][0]["kind"], "DoubleFree");
  EXPECT_TRUE(control.ground_truth["faults"].empty());

  std::vector<int64_t> reads;
  for (const auto& e : fault.streams[0].events) {
    if (e.name == "ssl_read")
      reads.push_back(*e.GetInt("bytes_read"));
  }
  EXPECT_EQ(reads, (std::vector<int64_t>{8192, 101, 18, -1, -1}));
}

TEST(SyngenTest, SslReconnectCycles) {
  GeneratedTrace trace = Generate(Small("ssl"));
  EXPECT_GT(CountNamed(trace, "free_client"), 1u);
  // Flow ids carry the connection generation.
  bool reused = false;
  for (const auto& flow : trace.ground_truth["flows"])
    reused |= flow["id"].get<std::string>().find("#1:") != std::string::npos;
  EXPECT_TRUE(reused);
}

TEST(SyngenTest, MicroservicesSingleRequest) {
  ScenarioConfig c = Small("microservices");
  c.requests = 1;
  GeneratedTrace trace = Generate(c);
  size_t http = 0;
  for (const auto& s : trace.streams) {
    for (const auto& e : s.events)
      http += e.name.rfind("http_", 0) == 0;
  }
  EXPECT_EQ(http, 8u);
  EXPECT_EQ(CountNamed(trace, "call_command_start"), 1u);
  const auto& spans = trace.ground_truth["spans"];
  ASSERT_EQ(spans.size(), 4u);
  EXPECT_TRUE(spans[0]["parent"].is_null());
  for (size_t i = 1; i < 4; ++i)
    EXPECT_EQ(spans[i]["parent"], spans[i - 1]["id"]);
  // Containment in true time.
  for (size_t i = 1; i < 4; ++i) {
    EXPECT_LE(spans[i - 1]["t0"].get<int64_t>(), spans[i]["t0"].get<int64_t>());
    EXPECT_GE(spans[i - 1]["t1"].get<int64_t>(), spans[i]["t1"].get<int64_t>());
  }
}

TEST(SyngenTest, PipelinedReusesTuples) {
  ScenarioConfig c = Small("microservices");
  c.faults = {Fault::kPipelinedHttp};
  GeneratedTrace trace = Generate(c);
  std::set<int64_t> ports;
  for (const auto& s : trace.streams) {
    if (s.host != "gateway")
      continue;
    for (const auto& e : s.events)
      ports.insert(*e.GetInt("src_port"));
  }
  EXPECT_EQ(ports.size(), 4u);
}

TEST(SyngenTest, TruncationDropsTail) {
  ScenarioConfig c = Small("cluster-publish");
  c.faults = {Fault::kTruncate};
  GeneratedTrace trace = Generate(c);
  size_t incomplete = 0;
  for (const auto& flow : trace.ground_truth["flows"])
    incomplete += !flow["complete"].get<bool>();
  EXPECT_GT(incomplete, 0u);
  EXPECT_LT(CountNamed(trace, "cluster_process_packet"), 400u);
}

TEST(SyngenTest, ReadStallRecordsFault) {
  ScenarioConfig c = Small("cluster-publish");
  c.faults = {Fault::kReadStall};
  GeneratedTrace trace = Generate(c);
  const auto& faults = trace.ground_truth["faults"];
  ASSERT_EQ(faults.size(), 1u);
  EXPECT_EQ(faults[0]["kind"], "ReadStall");
  EXPECT_EQ(faults[0]["t1"].get<int64_t>() - faults[0]["t0"].get<int64_t>(),
            c.stall_ns);
  EXPECT_TRUE(faults[0]["burst"].get<bool>());
}

TEST(SyngenTest, InvalidConfigRejected) {
  auto code_of = [](ScenarioConfig c) {
    try {
      Generate(c);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  ScenarioConfig c;
  c.scenario = "nope";
  EXPECT_EQ(code_of(c), ErrorCode::kConfigInvalid);
  c = ScenarioConfig{};
  c.nodes = 0;
  EXPECT_EQ(code_of(c), ErrorCode::kConfigInvalid);
  c = ScenarioConfig{};
  c.nodes = 1;
  c.faults = {Fault::kBroadcastAmplification};
  EXPECT_EQ(code_of(c), ErrorCode::kConfigInvalid);
  c = ScenarioConfig{};
  c.offsets = {{"n9", 1}};
  EXPECT_EQ(code_of(c), ErrorCode::kConfigInvalid);
}

}  // namespace
}  // namespace kvscope
