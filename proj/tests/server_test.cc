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

#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "httplib.h"
#include "pipeline_util.h"

namespace kvscope {
namespace {

using nlohmann::json;
using testing::TempDir;

StateInterval Iv(Timestamp a, Timestamp b, const char* v) {
  return StateInterval{0, a, b, StateValue::Str(v)};
}

TEST(MergeForResolutionTest, FoldsShortRunsByDominantValue) {
  std::vector<StateInterval> in = {Iv(0, 10, "A"), Iv(10, 12, "B"),
                                   Iv(12, 13, "C"), Iv(13, 14, "B"),
                                   Iv(14, 30, "A")};
  auto out = MergeForResolution(in, 5);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[1].start, 10);
  EXPECT_EQ(out[1].end, 14);
  EXPECT_EQ(out[1].value.as_str(), "B");
  EXPECT_EQ(out[1].merged, 3u);
  EXPECT_EQ(MergeForResolution(in, 0).size(), 5u);
}

TEST(MergeForResolutionTest, RunClosesOnceItSpansOnePixel) {
  std::vector<StateInterval> in;
  for (int i = 0; i < 10; ++i)
    in.push_back(Iv(i, i + 1, i % 3 == 0 ? "x" : "y"));
  auto out = MergeForResolution(in, 4);
  ASSERT_EQ(out.size(), 3u);  // [0,4) [4,8) [8,10)
  EXPECT_EQ(out[0].end, 4);
  EXPECT_EQ(out[0].value.as_str(), "x");  // x,y,y,x: a tie goes to the first
  EXPECT_EQ(out[1].value.as_str(), "y");  // y,y,x,y
  EXPECT_EQ(out[2].start, 8);
}

TEST(MergeForResolutionTest, CoverageIsResolutionInvariant) {
  std::mt19937_64 rng(7);
  std::vector<StateInterval> in;
  Timestamp t = 0;
  const char* labels[] = {"a", "b", "c"};
  for (int i = 0; i < 2000; ++i) {
    Timestamp d = static_cast<Timestamp>(rng() % 50);
    in.push_back(Iv(t, t + d, labels[rng() % 3]));
    t += d;
  }
  for (int64_t res : {1, 10, 100, 1000, 100000}) {
    auto out = MergeForResolution(in, res);
    Timestamp covered = 0;
    size_t folded = 0;
    for (const auto& d : out) {
      covered += d.end - d.start;
      folded += d.merged;
    }
    EXPECT_EQ(covered, t) << res;
    EXPECT_EQ(folded, in.size()) << res;
  }
}

class ApiTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    ScenarioConfig c;
    c.requests = 200;
    c.commands = {"get", "publish"};
    truth_ = new json;
    std::string merged = testing::GenerateAndMerge(c, *dir_, truth_);
    service_ = new ApiService(testing::BuildModel(merged, *dir_), merged);
  }
  static void TearDownTestSuite() {
    delete service_;
    delete truth_;
    delete dir_;
  }

  static json Get(std::string_view endpoint, const QueryParams& p,
                  int expect_status = 200) {
    ApiResponse r = service_->Handle(endpoint, p);
    EXPECT_EQ(r.status, expect_status) << r.body;
    return json::parse(r.body);
  }

  static inline TempDir* dir_ = nullptr;
  static inline json* truth_ = nullptr;
  static inline ApiService* service_ = nullptr;
};

TEST_F(ApiTest, TreeListsPaths) {
  json tree = Get("/api/tree", {});
  EXPECT_LT(tree["start"].get<int64_t>(), tree["end"].get<int64_t>());
  bool bus = false;
  for (const auto& p : tree["paths"])
    bus |= p["path"] == "Bus/Volume";
  EXPECT_TRUE(bus);
}

TEST_F(ApiTest, StatesShowPublishLifeCycle) {
  json tree = Get("/api/tree", {});
  bool seen = false;
  for (const auto& p : tree["paths"]) {
    std::string path = p["path"];
    if (path.rfind("Threads/", 0) != 0 ||
        path.size() < 10 || path.substr(path.size() - 10) != "/Operation")
      continue;
    json st = Get("/api/states", {{"path", path}});
    std::vector<std::string> labels;
    for (const auto& iv : st["intervals"])
      if (iv["value"].is_string())
        labels.push_back(iv["value"]);
    for (size_t i = 0; i + 2 < labels.size(); ++i)
      if (labels[i] == "Read" && labels[i + 1] == "publish" &&
          labels[i + 2] == "Write to client")
        seen = true;
  }
  EXPECT_TRUE(seen);
}

TEST_F(ApiTest, StatesResolutionKeepsCoverage) {
  QueryParams p = {{"path", "Bus/Volume"}};
  json fine = Get("/api/states", p);
  p["resolution"] = "1000000";
  json coarse = Get("/api/states", p);
  auto covered = [](const json& st) {
    int64_t sum = 0;
    for (const auto& iv : st["intervals"])
      sum += iv["t1"].get<int64_t>() - iv["t0"].get<int64_t>();
    return sum;
  };
  EXPECT_EQ(covered(fine), covered(coarse));
  EXPECT_LT(coarse["intervals"].size(), fine["intervals"].size());
}

TEST_F(ApiTest, StatesErrors) {
  EXPECT_TRUE(Get("/api/states", {}, 400).contains("error"));
  EXPECT_TRUE(
      Get("/api/states", {{"path", "Nope/x"}}, 404).contains("error"));
  EXPECT_TRUE(Get("/api/states", {{"path", "Bus/Volume"}, {"t0", "12ab"}},
                  400)
                  .contains("error"));
  EXPECT_TRUE(Get("/api/states",
                  {{"path", "Bus/Volume"}, {"t0", "5"}, {"t1", "4"}}, 400)
                  .contains("error"));
  EXPECT_TRUE(Get("/api/states", {{"path", "Bus/Volume"}, {"t1", "0"}}, 400)
                  .contains("error"));
  EXPECT_TRUE(Get("/api/nothing", {}, 404).contains("error"));
}

TEST_F(ApiTest, SeriesConserveBytes) {
  json out = Get("/api/series", {{"metric", "bus_volume_out"}});
  double sum = 0;
  for (double v : out["values"])
    sum += v;
  EXPECT_DOUBLE_EQ(sum, (*truth_)["cluster_send_bytes"].get<double>());
  json wide =
      Get("/api/series", {{"metric", "bus_volume_out"}, {"bucket_ns", "1000000000"}});
  EXPECT_EQ(wide["values"].size(), 1u);
  EXPECT_DOUBLE_EQ(wide["values"][0].get<double>(), sum);
  json in = Get("/api/series", {{"metric", "bus_volume_in"}});
  EXPECT_EQ(in["values"].size(), out["values"].size());
  EXPECT_GT(in["values"].size(), 0u);
  Get("/api/series", {{"metric", "cpu"}}, 400);
  Get("/api/series", {{"bucket_ns", "0"}}, 400);
  Get("/api/series", {{"bucket_ns", "1"}}, 400);
}

TEST_F(ApiTest, FlowsIndexAndLookup) {
  json index = Get("/api/flows", {});
  ASSERT_EQ(index["flows"].size(),
            (*truth_)["total_requests"].get<size_t>());
  std::string id = index["flows"][0]["id"];
  json flow = Get("/api/flows", {{"id", id}});
  EXPECT_EQ(flow["id"], id);
  EXPECT_FALSE(flow["segments"].empty());
  Get("/api/flows", {{"id", "n9:1#0:1"}}, 404);
}

TEST_F(ApiTest, FindingsListed) {
  json f = Get("/api/findings", {});
  EXPECT_TRUE(f["findings"].is_array());
  EXPECT_EQ(f["latency"].size(), 2u);
}

TEST(ApiSpansTest, WindowFiltersSpans) {
  TempDir dir;
  json truth;
  ScenarioConfig c;
  c.scenario = "microservices";
  c.requests = 50;
  std::string merged = testing::GenerateAndMerge(c, dir, &truth);
  ApiService service(testing::BuildModel(merged, dir), merged);
  json all = json::parse(service.Handle("/api/spans", {}).body);
  EXPECT_EQ(all["unmatched"], 0);
  EXPECT_EQ(all["spans"].size(), service.spans().spans.size());
  EXPECT_GE(all["spans"].size(), truth["spans"].size());
  const json& first = truth["spans"][0];
  json some = json::parse(
      service
          .Handle("/api/spans", {{"t0", std::to_string(first["t0"].get<int64_t>())},
                                 {"t1", std::to_string(first["t0"].get<int64_t>())}})
          .body);
  EXPECT_GT(some["spans"].size(), 0u);
  EXPECT_LT(some["spans"].size(), all["spans"].size());
}

TEST_F(ApiTest, HttpRoundTripAndConcurrency) {
  ApiServer server(*service_);
  int port = server.Bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread loop([&] { server.Listen(); });
  httplib::Client client("127.0.0.1", port);
  for (int i = 0; i < 50 && !client.Get("/api/tree"); ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(20));

  auto tree = client.Get("/api/tree");
  ASSERT_TRUE(tree);
  EXPECT_EQ(tree->status, 200);
  EXPECT_EQ(tree->get_header_value("Content-Type"), "application/json");

  auto missing = client.Get("/api/states?path=Nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_TRUE(json::parse(missing->body).contains("error"));

  auto nowhere = client.Get("/elsewhere");
  ASSERT_TRUE(nowhere);
  EXPECT_EQ(nowhere->status, 404);
  EXPECT_TRUE(json::parse(nowhere->body).contains("error"));

  std::string expected =
      service_->Handle("/api/states", {{"path", "Bus/Volume"}}).body;
  std::vector<std::thread> workers;
  std::atomic<int> good{0};
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&] {
      httplib::Client c("127.0.0.1", port);
      for (int i = 0; i < 10; ++i) {
        auto r = c.Get("/api/states?path=Bus/Volume");
        if (r && r->status == 200 && r->body == expected)
          ++good;
      }
    });
  }
  for (auto& w : workers)
    w.join();
  EXPECT_EQ(good.load(), 40);
  server.Stop();
  loop.join();
}

}  // namespace
}  // namespace kvscope
