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

#include <random>
#include <sstream>

#include "gtest/gtest.h"
#include "kvscope/base/error.h"
#include "kvscope/trace/ctf_lite.h"
#include "test_util.h"

namespace kvscope {
namespace {

TEST(CtfLite, ParsesSingleEvent) {
  std::istringstream in(
      R"({"ts":100,"host":"n1","tid":7,"seq":1,"name":"start_read_client_query","attrs":{"fd":72}})"
      "\n");
  TraceStream s = ParseStream(in, "x.jsonl");
  ASSERT_EQ(s.events.size(), 1u);
  EXPECT_EQ(s.host, "n1");
  EXPECT_EQ(s.events[0].GetInt("fd"), 72);
  EXPECT_EQ(s.events[0].tid, 7);
}

TEST(CtfLite, EmptyInput) {
  std::istringstream in("");
  EXPECT_TRUE(ParseStream(in).events.empty());
}

TEST(CtfLite, RejectsSeqRegression) {
  std::istringstream in(
      R"({"ts":1,"host":"n1","tid":1,"seq":2,"name":"x","attrs":{}})"
      "\n"
      R"({"ts":2,"host":"n1","tid":1,"seq":1,"name":"x","attrs":{}})"
      "\n");
  try {
    ParseStream(in, "f.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonMonotoneSeq);
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(CtfLite, SchemaViolationNamesLine) {
  std::istringstream in(
      R"({"ts":1,"host":"n1","tid":1,"seq":1,"name":"call_command_start","attrs":{"fd":3}})"
      "\n");
  try {
    ParseStream(in, "f.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchemaViolation);
    EXPECT_NE(std::string(e.what()).find("f.jsonl:1"), std::string::npos);
  }
}

TEST(CtfLite, WrongAttrTypeIsSchemaViolation) {
  std::istringstream in(
      R"({"ts":1,"host":"n1","tid":1,"seq":1,"name":"free_client","attrs":{"fd":"3"}})"
      "\n");
  EXPECT_THROW(ParseStream(in), DataError);
}

TEST(CtfLite, RejectsExtraOrMissingKeys) {
  for (const char* line : {
           R"({"ts":1,"host":"n1","tid":1,"seq":1,"name":"x"})",
           R"({"ts":1,"host":"n1","tid":1,"seq":1,"name":"x","attrs":{},"y":0})",
           R"({"ts":-1,"host":"n1","tid":1,"seq":1,"name":"x","attrs":{}})",
           R"({"ts":1,"host":"n1","tid":1,"seq":1,"name":"x","attrs":{"a":[1]}})",
           R"([1,2])",
           R"({"ts":1,)",
       }) {
    std::istringstream in(std::string(line) + "\n");
    try {
      ParseStream(in);
      ADD_FAILURE() << line;
    } catch (const DataError& e) {
      EXPECT_EQ(e.code(), ErrorCode::kMalformedLine) << line;
    }
  }
}

TEST(CtfLite, UnknownEventPassesThrough) {
  TraceStream s;
  s.host = "n1";
  TraceEvent e{5, "n1", 2, 1, "nodejs_gc", {{"heap", 1.5}, {"x", "y"}}};
  s.events.push_back(e);
  std::ostringstream out;
  WriteStream(s, out);
  std::istringstream in(out.str());
  TraceStream back = ParseStream(in);
  ASSERT_EQ(back.events.size(), 1u);
  EXPECT_EQ(back.events[0], e);
}

TEST(CtfLite, LegacyWriteEndAlias) {
  std::istringstream in(
      R"({"ts":1,"host":"n1","tid":1,"seq":1,"name":"write_to_end_start","attrs":{"fd":4}})"
      "\n");
  TraceStream s = ParseStream(in);
  EXPECT_EQ(s.events[0].name, "write_to_client_end");
}

TEST(CtfLite, EscapesStrings) {
  TraceEvent e{1, "n1", 1, 1, "x", {{"s", std::string("a\"b\\c\n\x01")}}};
  TraceStream s{"n1", "", {e}};
  std::ostringstream out;
  WriteStream(s, out);
  std::istringstream in(out.str());
  EXPECT_EQ(ParseStream(in).events[0], e);
}

// Random streams survive write -> parse -> write byte for byte.
TEST(CtfLite, RoundTripRandomStream) {
  std::mt19937_64 rng(11);
  const char* names[] = {"start_read_client_query", "free_client",
                         "cluster_send", "run_pending_reads", "custom"};
  TraceStream s;
  s.host = "h";
  Timestamp ts = 1;
  for (int i = 0; i < 10000; ++i) {
    TraceEvent e;
    ts += static_cast<Timestamp>(rng() % 3);
    e.ts = ts;
    e.host = "h";
    e.tid = static_cast<int64_t>(rng() % 8);
    e.seq = i + 1;
    e.name = names[rng() % 5];
    e.attrs["fd"] = static_cast<int64_t>(rng() % 1000);
    if (e.name == "cluster_send") {
      e.attrs["msg_id"] = static_cast<int64_t>(i);
      e.attrs["bytes"] = static_cast<int64_t>(rng() % 100000);
      e.attrs["kind"] = std::string("broadcast");
    }
    if (rng() % 4 == 0)
      e.attrs["ratio"] = static_cast<double>(rng() % 1000) / 7.0;
    s.events.push_back(std::move(e));
  }
  std::ostringstream first;
  WriteStream(s, first);
  std::istringstream in(first.str());
  TraceStream back = ParseStream(in);
  EXPECT_EQ(back.events, s.events);
  std::ostringstream second;
  WriteStream(back, second);
  EXPECT_EQ(first.str(), second.str());
}

// Random bytes and mangled records must raise DataError, never crash.
TEST(CtfLite, FuzzNeverCrashes) {
  std::mt19937_64 rng(3);
  std::string valid =
      R"({"ts":10,"host":"n1","tid":7,"seq":1,"name":"ssl_read","attrs":{"fd":1,"bytes_requested":16,"bytes_read":8}})";
  for (int i = 0; i < 5000; ++i) {
    std::string line = valid;
    int edits = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < edits; ++k) {
      size_t pos = rng() % line.size();
      switch (rng() % 3) {
        case 0:
          line[pos] = static_cast<char>(rng() % 256);
          break;
        case 1:
          line.erase(pos, 1 + rng() % 5);
          break;
        default:
          line.insert(pos, 1, "{}[]\":,0a-."[rng() % 11]);
      }
      if (line.empty())
        line = "x";
    }
    std::istringstream in(line + "\n");
    try {
      ParseStream(in);
    } catch (const DataError&) {
    }
  }
}

TEST(CtfLite, FileRoundTrip) {
  testing::TempDir dir;
  TraceStream s{"n2", "", {{3, "n2", 1, 1, "add_file_event", {}}}};
  WriteStreamFile(s, dir.File("n2.jsonl"));
  TraceStream back = ReadStreamFile(dir.File("n2.jsonl"));
  EXPECT_EQ(back.events, s.events);
  EXPECT_EQ(back.host, "n2");
}

TEST(CtfLite, MissingFileIsIoFailure) {
  try {
    ReadStreamFile("/nonexistent/trace.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoFailure);
  }
}

}  // namespace
}  // namespace kvscope
