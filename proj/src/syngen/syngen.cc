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

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <queue>
#include <random>

#include "kvscope/base/error.h"

namespace kvscope {
namespace {

using nlohmann::json;

constexpr Timestamp kBase = 1'000'000'000;
constexpr int64_t kParseNs = 2'000;
constexpr int64_t kWriteNs = 3'000;
constexpr int64_t kStepNs = 1'000;
constexpr int64_t kRequestsPerConnection = 10;  // ssl scenario reconnects
constexpr int kBurstPublishes = 40;
constexpr int64_t kCorrelationWindowNs = 10'000'000;

constexpr std::pair<Fault, std::string_view> kFaultNames[] = {
    {Fault::kBroadcastAmplification, "broadcast-amplification"},
    {Fault::kSslPendingDoubleFree, "ssl-double-free"},
    {Fault::kReadStall, "read-stall"},
    {Fault::kReadStallFlat, "read-stall-flat"},
    {Fault::kPipelinedHttp, "pipelined-http"},
    {Fault::kTruncate, "truncate"},
};

struct Ref {
  std::string host;
  int64_t seq = -1;
  Timestamp ts = 0;  // true time
};

class Streams {
 public:
  Streams(const std::vector<std::string>& hosts,
          const std::map<std::string, int64_t>& offsets) {
    for (const auto& h : hosts) {
      Host& host = hosts_[h];
      host.stream.host = h;
      auto it = offsets.find(h);
      host.offset = it == offsets.end() ? 0 : it->second;
    }
  }

  Ref Emit(const std::string& host_name, Timestamp ts, int64_t tid,
           std::string name, AttrMap attrs = {}) {
    Host& host = hosts_.at(host_name);
    if (!host.true_ts.empty() && ts < host.true_ts.back()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "generator emitted out of order on " + host_name);
    }
    TraceEvent e;
    e.ts = ts - host.offset;
    e.host = host_name;
    e.tid = tid;
    e.seq = static_cast<int64_t>(host.stream.events.size());
    e.name = std::move(name);
    e.attrs = std::move(attrs);
    host.stream.events.push_back(std::move(e));
    host.true_ts.push_back(ts);
    return Ref{host_name, static_cast<int64_t>(host.true_ts.size()) - 1, ts};
  }

  Timestamp LastTrueTs() const {
    Timestamp last = 0;
    for (const auto& [name, host] : hosts_) {
      if (!host.true_ts.empty())
        last = std::max(last, host.true_ts.back());
    }
    return last;
  }

  // Drops the events of `host` after `cut` (true time).
  void TruncateAfter(const std::string& host_name, Timestamp cut) {
    Host& host = hosts_.at(host_name);
    auto it = std::upper_bound(host.true_ts.begin(), host.true_ts.end(), cut);
    size_t keep = static_cast<size_t>(it - host.true_ts.begin());
    host.true_ts.resize(keep);
    host.stream.events.resize(keep);
  }

  bool Kept(const Ref& ref) const {
    const Host& host = hosts_.at(ref.host);
    return ref.seq >= 0 && static_cast<size_t>(ref.seq) < host.true_ts.size();
  }

  std::vector<TraceStream> Take() {
    std::vector<TraceStream> out;
    for (auto& [name, host] : hosts_) {
      host.stream.path = name + ".jsonl";
      out.push_back(std::move(host.stream));
    }
    return out;
  }

 private:
  struct Host {
    TraceStream stream;
    std::vector<Timestamp> true_ts;
    int64_t offset = 0;
  };
  std::map<std::string, Host> hosts_;
};

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  int64_t Exp(int64_t mean) {
    if (mean <= 0)
      return 0;
    std::exponential_distribution<double> d(1.0 / static_cast<double>(mean));
    return static_cast<int64_t>(std::llround(d(engine_)));
  }
  uint64_t Next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

struct Segment {
  std::string label;
  std::string branch;  // "" on the trunk, else the destination host
  int64_t tid = 0;
  Ref start;
  Ref end;
};

struct FlowTruth {
  std::string id;
  std::string origin;
  std::string command;
  Ref command_start;
  std::vector<Segment> segments;
};

json RefJson(const Ref& ref) {
  return EventRef(ref.host, ref.seq);
}

json FlowsJson(const std::vector<FlowTruth>& flows, const Streams& streams) {
  json out = json::array();
  for (const FlowTruth& flow : flows) {
    if (!streams.Kept(flow.command_start))
      continue;
    // Canonical order: trunk first, then branches by host, each in causal
    // order. The sort is stable so per-branch order is kept.
    std::vector<Segment> segments = flow.segments;
    std::stable_sort(segments.begin(), segments.end(),
                     [](const Segment& a, const Segment& b) {
                       return a.branch < b.branch;
                     });
    bool complete = true;
    json segs = json::array();
    for (const Segment& s : segments) {
      if (!streams.Kept(s.start) || !streams.Kept(s.end)) {
        complete = false;
        continue;
      }
      segs.push_back({{"label", s.label},
                      {"host", s.label == "Bus transit" ? s.start.host
                                                        : s.end.host},
                      {"tid", s.tid},
                      {"branch", s.branch},
                      {"t0", s.start.ts},
                      {"t1", s.end.ts},
                      {"start", RefJson(s.start)},
                      {"end", RefJson(s.end)}});
    }
    out.push_back({{"id", flow.id},
                   {"origin", flow.origin},
                   {"command", flow.command},
                   {"complete", complete},
                   {"segments", std::move(segs)}});
  }
  return out;
}

json BaseTruth(const ScenarioConfig& c, const std::vector<std::string>& hosts) {
  json offsets = json::object();
  for (const auto& h : hosts) {
    auto it = c.offsets.find(h);
    offsets[h] = it == c.offsets.end() ? 0 : it->second;
  }
  json faults = json::array();
  for (Fault f : c.faults)
    faults.push_back(std::string(FaultName(f)));
  return {{"scenario", c.scenario},
          {"seed", c.seed},
          {"hosts", hosts},
          {"offsets", offsets},
          {"min_one_way_delay_ns", c.min_delay_ns},
          {"injected_faults", faults},
          {"faults", json::array()}};
}

// ---------------------------------------------------------------------------
// Redis cluster: client connections on every node, publish broadcast over
// the bus, one subscriber per node.

class ClusterSim {
 public:
  explicit ClusterSim(const ScenarioConfig& c)
      : c_(c),
        rng_(c.seed),
        n_(c.nodes),
        hosts_(MakeHosts(c.nodes)),
        streams_(hosts_, c.offsets),
        busy_(static_cast<size_t>(c.nodes), kBase) {
    commands_ = c.commands;
    if (commands_.empty()) {
      if (IsSsl())
        commands_ = {"get", "set"};
      else
        commands_ = {"publish"};
    }
    total_ = c.requests * static_cast<int64_t>(commands_.size());
    int64_t publishes = 0;
    for (const auto& cmd : commands_)
      publishes += cmd == "publish" ? c.requests : 0;
    stall_msg_ = c.faults.count(Fault::kReadStall) ||
                         c.faults.count(Fault::kReadStallFlat)
                     ? std::max<int64_t>(publishes / 2, 1)
                     : -1;
  }

  GeneratedTrace Run() {
    int clients = c_.clients > 0 ? c_.clients : 4 * n_;
    for (int k = 0; k < clients; ++k) {
      Client cl;
      cl.node = k % n_;
      cl.fd = 200 + k;
      clients_.push_back(cl);
    }
    for (int k = 0; k < clients; ++k)
      ScheduleClient(k, kBase + k * 7'000 + Delay());
    if (IsSsl())
      Push(Arrival{kBase + 2'000'000, 0, kSsl, 0, 0});

    while (!queue_.empty()) {
      Arrival a = queue_.top();
      queue_.pop();
      switch (a.kind) {
        case kClient:
          OnClient(a);
          break;
        case kBus:
          OnBus(a);
          break;
        case kBurst:
          OnBurst(a);
          break;
        case kSsl:
          OnSsl(a);
          break;
      }
    }

    if (c_.faults.count(Fault::kTruncate)) {
      Timestamp last = streams_.LastTrueTs();
      Timestamp cut = kBase + (last - kBase) * 9 / 10;
      streams_.TruncateAfter(hosts_[std::min(1, n_ - 1)], cut);
      truth_faults_.push_back({{"kind", "Truncate"},
                               {"host", hosts_[std::min(1, n_ - 1)]},
                               {"after", cut}});
    }

    GeneratedTrace out;
    out.ground_truth = BaseTruth(c_, hosts_);
    json counts = json::object();
    for (const auto& [cmd, n] : command_counts_)
      counts[cmd] = n;
    out.ground_truth["requests"] = counts;
    out.ground_truth["total_requests"] = flows_.size();
    out.ground_truth["payload"] = c_.payload;
    out.ground_truth["gossip_header"] = c_.gossip_header;
    out.ground_truth["cluster_send_bytes"] = bus_bytes_;
    out.ground_truth["faults"] = truth_faults_;
    out.ground_truth["flows"] = FlowsJson(flows_, streams_);
    out.streams = streams_.Take();
    return out;
  }

 private:
  enum Kind { kClient, kBus, kBurst, kSsl };
  struct Arrival {
    Timestamp t;
    uint64_t order;
    Kind kind;
    int node;
    int64_t index;  // client, message or burst index
  };
  struct Later {
    bool operator()(const Arrival& a, const Arrival& b) const {
      if (a.t != b.t)
        return a.t > b.t;
      return a.order > b.order;
    }
  };
  struct Client {
    int node = 0;
    int64_t fd = 0;
    int64_t gen = 0;
    int64_t served = 0;  // on the current connection
    std::string command;
  };
  struct Message {
    size_t flow = 0;
    int origin = 0;
    int subscriber = -1;
    int64_t bytes = 0;
    std::map<int, Ref> sends;  // by destination node
  };
  struct Burst {
    int node;
    int64_t payload;
  };

  static std::vector<std::string> MakeHosts(int n) {
    std::vector<std::string> hosts;
    for (int i = 0; i < n; ++i)
      hosts.push_back("n" + std::to_string(i + 1));
    return hosts;
  }

  bool IsSsl() const {
    return c_.scenario == "ssl" || c_.scenario == "ssl-double-free";
  }
  int64_t Tid(int node) const { return 1000 * (node + 1); }
  int64_t Delay() { return c_.min_delay_ns + rng_.Exp(c_.jitter_ns); }
  int64_t Service() {
    return c_.fixed_service ? c_.service_ns
                            : std::max<int64_t>(1, rng_.Exp(c_.service_ns));
  }
  int64_t ProcessTime() {
    return c_.fixed_service ? 20'000 : 1 + rng_.Exp(20'000);
  }
  static int64_t BusFd(int from, int to) { return 5000 + from * 64 + to; }
  static int64_t SubscriberFd(int node) { return 4000 + node; }

  void Push(Arrival a) {
    a.order = next_order_++;
    queue_.push(a);
  }

  void ScheduleClient(int k, Timestamp t) {
    if (issued_ >= total_)
      return;
    clients_[static_cast<size_t>(k)].command =
        commands_[static_cast<size_t>(issued_) % commands_.size()];
    ++issued_;
    Push(Arrival{t, 0, kClient, clients_[static_cast<size_t>(k)].node, k});
  }

  // One client request on `node`; returns the time the node is free again.
  Timestamp ServeRequest(Timestamp s, int node, int64_t fd, int64_t gen,
                         int64_t n, const std::string& command,
                         int64_t payload) {
    const std::string& host = hosts_[static_cast<size_t>(node)];
    int64_t tid = Tid(node);
    int64_t bytes = command == "publish" ? payload
                    : command == "set"   ? 32 + payload
                                         : 32;
    ++command_counts_[command];
    FlowTruth flow;
    flow.id = host + ":" + std::to_string(fd) + "#" + std::to_string(gen) +
              ":" + std::to_string(n);
    flow.origin = host;
    flow.command = command;

    Ref read = streams_.Emit(
        host, s, tid, "start_read_client_query",
        {{"fd", fd}, {"bytes", bytes}, {"mem", 16384 + bytes}});
    Timestamp t = s + kParseNs;
    Ref cmd = streams_.Emit(host, t, tid, "call_command_start",
                            {{"fd", fd}, {"command", command}});
    flow.command_start = cmd;
    streams_.Emit(host, t, tid, "add_file_event", {{"fd", fd}});
    flow.segments.push_back({"Read", "", tid, read, cmd});

    int64_t service = Service();
    bool broadcast = command == "publish" && n_ >= 2;
    if (broadcast) {
      Message msg;
      msg.flow = flows_.size();
      msg.origin = node;
      msg.subscriber = (node + 1) % n_;
      msg.bytes = payload + c_.gossip_header;
      int64_t msg_id = static_cast<int64_t>(messages_.size());
      Timestamp ts = t + service / 2;
      for (int j = 0; j < n_; ++j) {
        if (j == node)
          continue;
        Ref send = streams_.Emit(
            host, ts, tid, "cluster_send",
            {{"msg_id", msg_id},
             {"bytes", msg.bytes},
             {"kind", std::string("broadcast")},
             {"dst", hosts_[static_cast<size_t>(j)]},
             {"fd", BusFd(node, j)}});
        msg.sends[j] = send;
        bus_bytes_ += msg.bytes;
        Push(Arrival{ts + Delay(), 0, kBus, j, msg_id});
      }
      flow.segments.push_back(
          {command, "", tid, cmd, msg.sends.begin()->second});
      messages_.push_back(std::move(msg));
    }
    t += service;
    streams_.Emit(host, t, tid, "call_command_end",
                  {{"fd", fd}, {"command", command}});
    streams_.Emit(host, t, tid, "end_read_client_query", {{"fd", fd}});
    t += kStepNs;
    Ref ws = streams_.Emit(host, t, tid, "write_to_client_start", {{"fd", fd}});
    t += kWriteNs;
    Ref we = streams_.Emit(host, t, tid, "write_to_client_end", {{"fd", fd}});
    streams_.Emit(host, t, tid, "delete_file_event", {{"fd", fd}});
    if (!broadcast) {
      flow.segments.push_back({command, "", tid, cmd, ws});
      flow.segments.push_back({"Write to client", "", tid, ws, we});
    }
    flows_.push_back(std::move(flow));
    return t;
  }

  void OnClient(const Arrival& a) {
    Client& cl = clients_[static_cast<size_t>(a.index)];
    size_t node = static_cast<size_t>(cl.node);
    Timestamp s = std::max(a.t, busy_[node]);
    ++cl.served;
    Timestamp end = ServeRequest(s, cl.node, cl.fd, cl.gen, cl.served,
                                 cl.command, c_.payload);
    if (IsSsl() && cl.served % kRequestsPerConnection == 0) {
      end += kStepNs;
      streams_.Emit(hosts_[node], end, Tid(cl.node), "free_client",
                    {{"fd", cl.fd}});
      ++cl.gen;
      cl.served = 0;
    }
    busy_[node] = end + 1;
    ScheduleClient(static_cast<int>(a.index), end + Delay() + Delay());
  }

  void OnBurst(const Arrival& a) {
    const Burst& b = bursts_[static_cast<size_t>(a.index)];
    size_t node = static_cast<size_t>(b.node);
    Timestamp s = std::max(a.t, busy_[node]);
    int64_t fd = 7000 + a.index;
    busy_[node] = ServeRequest(s, b.node, fd, 0, 1, "publish", b.payload) + 1;
  }

  void OnBus(const Arrival& a) {
    Message& msg = messages_[static_cast<size_t>(a.index)];
    int j = a.node;
    size_t node = static_cast<size_t>(j);
    const std::string& host = hosts_[node];
    int64_t tid = Tid(j);
    int64_t fd = BusFd(msg.origin, j) + 1000;
    Timestamp s = std::max(a.t, busy_[node]);
    Ref read = streams_.Emit(
        host, s, tid, "cluster_read",
        {{"fd", fd}, {"msg_id", a.index}, {"bytes", msg.bytes}});
    int stall_target =
        n_ >= 3 ? (msg.origin + 2) % n_ : (msg.origin + 1) % n_;
    bool stall = a.index == stall_msg_ && j == stall_target;
    Timestamp p = s + (stall ? c_.stall_ns : ProcessTime());
    if (stall)
      InjectStall(s, j, a.index);
    Ref packet = streams_.Emit(host, p, tid, "cluster_process_packet",
                               {{"fd", fd}, {"msg_id", a.index}});
    FlowTruth& flow = flows_[msg.flow];
    std::string branch = host;
    const Ref& send = msg.sends.at(j);
    flow.segments.push_back(
        {"Bus transit", branch, Tid(msg.origin), send, read});
    Timestamp end = p;
    if (j == msg.subscriber) {
      int64_t sub = SubscriberFd(j);
      Ref ws = streams_.Emit(host, p, tid, "write_to_client_start",
                             {{"fd", sub}, {"msg_id", a.index}});
      end = p + kWriteNs;
      Ref we = streams_.Emit(host, end, tid, "write_to_client_end",
                             {{"fd", sub}, {"msg_id", a.index}});
      flow.segments.push_back({"Cluster read", branch, tid, read, ws});
      flow.segments.push_back({"Write to client", branch, tid, ws, we});
    } else {
      flow.segments.push_back({"Cluster read", branch, tid, read, packet});
    }
    busy_[node] = end + 1;
  }

  // A 50 ms class stall on one cluster read; unless the flat variant is
  // requested a burst of large publishes from the other nodes overlaps it.
  void InjectStall(Timestamp s, int node, int64_t msg_id) {
    json fault = {{"kind", "ReadStall"},
                  {"host", hosts_[static_cast<size_t>(node)]},
                  {"msg_id", msg_id},
                  {"t0", s},
                  {"t1", s + c_.stall_ns},
                  {"burst", false}};
    if (c_.faults.count(Fault::kReadStall) && n_ >= 2) {
      // Size the burst from the bus rate so far: four times the volume the
      // correlation window would otherwise carry.
      double elapsed = static_cast<double>(std::max<Timestamp>(s - kBase, 1));
      double rate = static_cast<double>(bus_bytes_) / elapsed;
      double window =
          static_cast<double>(c_.stall_ns + 2 * kCorrelationWindowNs);
      double per_publish = 4.0 * rate * window / kBurstPublishes /
                           static_cast<double>(n_ - 1);
      int64_t burst_payload = std::max<int64_t>(
          c_.payload,
          static_cast<int64_t>(per_publish) - c_.gossip_header);
      for (int k = 0; k < kBurstPublishes; ++k) {
        int target = k % (n_ - 1);
        if (target >= node)
          ++target;
        bursts_.push_back(Burst{target, burst_payload});
        Push(Arrival{s + k * (c_.stall_ns / 2 / kBurstPublishes), 0, kBurst,
                     target, static_cast<int64_t>(bursts_.size()) - 1});
      }
      fault["burst"] = true;
      fault["burst_payload"] = burst_payload;
      fault["burst_publishes"] = kBurstPublishes;
    }
    truth_faults_.push_back(std::move(fault));
  }

  // The pending-read sequence of the SSL connection on fd 132.
  void OnSsl(const Arrival& a) {
    const std::string& host = hosts_[0];
    const int64_t fd = 132;
    int64_t main = Tid(0), io_a = main + 1, io_b = main + 2;
    Timestamp t = std::max(a.t, busy_[0]);
    auto step = [&](int64_t tid, const char* name, AttrMap attrs) {
      Ref r = streams_.Emit(host, t, tid, name, std::move(attrs));
      t += 5'000;
      return r;
    };
    auto ssl = [&](int64_t tid, int64_t bytes, bool pending) {
      return step(tid, "ssl_read",
                  {{"fd", fd},
                   {"bytes_requested", int64_t{16384}},
                   {"bytes_read", bytes},
                   {"pending", int64_t{pending ? 1 : 0}}});
    };
    const auto& b = c_.ssl_bytes;
    step(main, "start_read_client_query",
         {{"fd", fd}, {"bytes", b[0]}, {"mem", int64_t{16384}}});
    ssl(main, b[0], true);
    step(main, "end_read_client_query", {{"fd", fd}});
    step(main, "run_pending_reads", {});
    ssl(io_a, b[1], true);
    step(io_a, "run_pending_reads", {});
    ssl(io_a, b[2], true);
    ssl(io_a, -1, false);
    Ref first = step(io_a, "free_client", {{"fd", fd}});
    if (c_.faults.count(Fault::kSslPendingDoubleFree)) {
      ssl(io_b, -1, false);
      Ref second = step(io_b, "free_client", {{"fd", fd}});
      truth_faults_.push_back({{"kind", "DoubleFree"},
                               {"host", host},
                               {"fd", fd},
                               {"tids", {io_a, io_b}},
                               {"free_ts", {first.ts, second.ts}},
                               {"events", {RefJson(first), RefJson(second)}}});
    }
    busy_[0] = t;
  }

  const ScenarioConfig& c_;
  Rng rng_;
  int n_;
  std::vector<std::string> hosts_;
  Streams streams_;
  std::vector<Timestamp> busy_;
  std::vector<std::string> commands_;
  int64_t total_ = 0;
  int64_t issued_ = 0;
  int64_t stall_msg_ = -1;
  int64_t bus_bytes_ = 0;
  uint64_t next_order_ = 0;
  std::priority_queue<Arrival, std::vector<Arrival>, Later> queue_;
  std::vector<Client> clients_;
  std::vector<Message> messages_;
  std::vector<Burst> bursts_;
  std::vector<FlowTruth> flows_;
  std::map<std::string, int64_t> command_counts_;
  json truth_faults_ = json::array();
};

// ---------------------------------------------------------------------------
// Microservices: Gateway -> {User, Order} -> RedisGateway, with Redis
// co-located on the RedisGateway host.

class MicroservicesSim {
 public:
  explicit MicroservicesSim(const ScenarioConfig& c)
      : c_(c),
        rng_(c.seed),
        streams_(Hosts(), c.offsets),
        pipelined_(c.faults.count(Fault::kPipelinedHttp) > 0) {}

  static std::vector<std::string> Hosts() {
    return {"gateway", "order", "redisgw", "user"};
  }

  GeneratedTrace Run() {
    Timestamp t = kBase;
    for (int64_t k = 0; k < c_.requests; ++k) {
      t += 1 + rng_.Exp(400'000);
      requests_.push_back(Request{});
      Push(t, kGatewaySend, k);
    }
    while (!queue_.empty()) {
      Event e = queue_.top();
      queue_.pop();
      Dispatch(e);
    }

    GeneratedTrace out;
    out.ground_truth = BaseTruth(c_, Hosts());
    json spans = json::array();
    json parents = json::object();
    for (const Request& r : requests_) {
      spans.push_back(SpanJson(r.gw_client, "client", nullptr));
      spans.push_back(SpanJson(r.x_server, "server", RefJson(r.gw_client.open)));
      spans.push_back(SpanJson(r.x_client, "client", RefJson(r.x_server.open)));
      spans.push_back(SpanJson(r.rg_server, "server", RefJson(r.x_client.open)));
      parents[r.flow_id] = RefJson(r.rg_server.open);
    }
    out.ground_truth["requests"] = {{"get", c_.requests}};
    out.ground_truth["total_requests"] = c_.requests;
    out.ground_truth["spans"] = std::move(spans);
    out.ground_truth["redis_parents"] = std::move(parents);
    out.ground_truth["flows"] = FlowsJson(flows_, streams_);
    out.streams = streams_.Take();
    return out;
  }

 private:
  enum Kind {
    kGatewaySend,
    kServiceArrive,
    kServiceFree,
    kRedisGatewayArrive,
    kRedisGatewayFree,
    kServiceReturn,
    kGatewayReturn,
  };
  struct Event {
    Timestamp t;
    uint64_t order;
    Kind kind;
    int64_t request;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.t != b.t)
        return a.t > b.t;
      return a.order > b.order;
    }
  };
  struct Tuple {
    std::string src_addr;
    int64_t src_port = 0;
    std::string dst_addr;
    int64_t dst_port = 0;
    int64_t fd = 0;
  };
  struct SpanTruth {
    std::string service;
    std::string host;
    Tuple tuple;
    Ref open;
    Ref close;
  };
  struct Request {
    int service = 0;  // 0 User, 1 Order
    Tuple front;      // gateway -> service
    Tuple back;       // service -> RedisGateway
    SpanTruth gw_client, x_server, x_client, rg_server;
    std::string flow_id;
  };
  struct Station {
    bool busy = false;
    std::deque<int64_t> waiting;
  };

  static constexpr const char* kServiceNames[2] = {"User", "Order"};
  static constexpr const char* kServiceHosts[2] = {"user", "order"};
  static constexpr const char* kServiceAddrs[2] = {"10.0.0.2", "10.0.0.3"};
  static constexpr const char* kGatewayAddr = "10.0.0.1";
  static constexpr const char* kRedisGatewayAddr = "10.0.0.4";
  static constexpr int64_t kRedisFd = 300;
  static constexpr int64_t kRedisTid = 500;
  static constexpr int64_t kWorkNs = 20'000;

  static int64_t HostTid(const std::string& host) {
    if (host == "gateway")
      return 100;
    if (host == "user")
      return 200;
    if (host == "order")
      return 300;
    return 400;
  }

  int64_t Delay() { return c_.min_delay_ns + rng_.Exp(c_.jitter_ns); }
  int64_t Service() {
    return c_.fixed_service ? c_.service_ns
                            : std::max<int64_t>(1, rng_.Exp(c_.service_ns));
  }

  void Push(Timestamp t, Kind kind, int64_t request) {
    queue_.push(Event{t, next_order_++, kind, request});
  }

  // In-order delivery on one direction of a connection.
  Timestamp Deliver(const Tuple& tuple, bool forward, Timestamp sent) {
    std::string key = tuple.src_addr + ":" + std::to_string(tuple.src_port) +
                      ">" + tuple.dst_addr + ":" +
                      std::to_string(tuple.dst_port) + (forward ? "f" : "r");
    Timestamp& last = last_delivery_[key];
    last = std::max(sent + Delay(), last + 1);
    return last;
  }

  Ref EmitHttp(const std::string& host, Timestamp t, const char* name,
               const Tuple& tuple, const std::string& service) {
    return streams_.Emit(host, t, HostTid(host), name,
                         {{"src_addr", tuple.src_addr},
                          {"src_port", tuple.src_port},
                          {"dst_addr", tuple.dst_addr},
                          {"dst_port", tuple.dst_port},
                          {"service", service},
                          {"fd", tuple.fd}});
  }

  json SpanJson(const SpanTruth& s, const char* kind, json parent) const {
    return {{"id", RefJson(s.open)},
            {"service", s.service},
            {"host", s.host},
            {"kind", kind},
            {"parent", parent},
            {"t0", s.open.ts},
            {"t1", s.close.ts},
            {"src_addr", s.tuple.src_addr},
            {"src_port", s.tuple.src_port},
            {"dst_addr", s.tuple.dst_addr},
            {"dst_port", s.tuple.dst_port}};
  }

  void Dispatch(const Event& e) {
    Request& r = requests_[static_cast<size_t>(e.request)];
    switch (e.kind) {
      case kGatewaySend: {
        r.service = static_cast<int>(e.request % 2);
        int64_t port = pipelined_ ? 41000 + r.service * 10 + (e.request / 2) % 2
                                  : 30000 + e.request % 30000;
        r.front = Tuple{kGatewayAddr, port, kServiceAddrs[r.service], 8080,
                        100 + port % 1000};
        int64_t back_port = pipelined_ ? 51000 + r.service
                                       : 50000 + e.request % 15000;
        r.back = Tuple{kServiceAddrs[r.service], back_port, kRedisGatewayAddr,
                       9000, 100 + back_port % 1000};
        std::string callee = kServiceNames[r.service];
        r.gw_client = {callee, "gateway", r.front, {}, {}};
        r.gw_client.open =
            EmitHttp("gateway", e.t, "http_client_request", r.front, callee);
        Push(Deliver(r.front, true, e.t), kServiceArrive, e.request);
        break;
      }
      case kServiceArrive: {
        Station& st = services_[r.service];
        st.waiting.push_back(e.request);
        if (!st.busy)
          StartService(r.service, e.t);
        break;
      }
      case kServiceFree: {
        int svc = r.service;
        services_[svc].busy = false;
        if (!services_[svc].waiting.empty())
          StartService(svc, e.t);
        break;
      }
      case kRedisGatewayArrive:
        redis_gateway_.waiting.push_back(e.request);
        if (!redis_gateway_.busy)
          StartRedisGateway(e.t);
        break;
      case kRedisGatewayFree:
        redis_gateway_.busy = false;
        if (!redis_gateway_.waiting.empty())
          StartRedisGateway(e.t);
        break;
      case kServiceReturn: {
        const char* host = kServiceHosts[r.service];
        r.x_client.close = EmitHttp(host, e.t, "http_client_response", r.back,
                                    "RedisGateway");
        Timestamp done = e.t + kWorkNs;
        r.x_server.close = EmitHttp(host, done, "http_server_response",
                                    r.front, kServiceNames[r.service]);
        Push(Deliver(r.front, false, done), kGatewayReturn, e.request);
        Push(done + 1, kServiceFree, e.request);
        break;
      }
      case kGatewayReturn:
        r.gw_client.close =
            EmitHttp("gateway", e.t, "http_client_response", r.front,
                     kServiceNames[r.service]);
        break;
    }
  }

  void StartService(int svc, Timestamp t) {
    Station& st = services_[svc];
    int64_t k = st.waiting.front();
    st.waiting.pop_front();
    st.busy = true;
    Request& r = requests_[static_cast<size_t>(k)];
    const char* host = kServiceHosts[svc];
    r.x_server = {kServiceNames[svc], host, r.front, {}, {}};
    r.x_server.open = EmitHttp(host, t, "http_server_receive", r.front,
                               kServiceNames[svc]);
    Timestamp call = t + kWorkNs;
    r.x_client = {"RedisGateway", host, r.back, {}, {}};
    r.x_client.open =
        EmitHttp(host, call, "http_client_request", r.back, "RedisGateway");
    Push(Deliver(r.back, true, call), kRedisGatewayArrive, k);
  }

  void StartRedisGateway(Timestamp t) {
    int64_t k = redis_gateway_.waiting.front();
    redis_gateway_.waiting.pop_front();
    redis_gateway_.busy = true;
    Request& r = requests_[static_cast<size_t>(k)];
    const std::string host = "redisgw";
    r.rg_server = {"RedisGateway", host, r.back, {}, {}};
    r.rg_server.open = EmitHttp(host, t, "http_server_receive", r.back,
                                "RedisGateway");

    // The cached GET, on the gateway's persistent Redis connection.
    ++redis_requests_;
    FlowTruth flow;
    flow.id = host + ":" + std::to_string(kRedisFd) + "#0:" +
              std::to_string(redis_requests_);
    flow.origin = host;
    flow.command = "get";
    Timestamp s = t + 10'000;
    AttrMap read_attrs = {{"fd", kRedisFd},
                          {"bytes", int64_t{40}},
                          {"mem", int64_t{16384}},
                          {"src_addr", std::string(kRedisGatewayAddr)},
                          {"src_port", int64_t{6000}},
                          {"dst_addr", std::string(kRedisGatewayAddr)},
                          {"dst_port", int64_t{6379}}};
    Ref read = streams_.Emit(host, s, kRedisTid, "start_read_client_query",
                             std::move(read_attrs));
    s += kParseNs;
    Ref cmd = streams_.Emit(host, s, kRedisTid, "call_command_start",
                            {{"fd", kRedisFd}, {"command", std::string("get")}});
    streams_.Emit(host, s, kRedisTid, "add_file_event", {{"fd", kRedisFd}});
    s += Service();
    streams_.Emit(host, s, kRedisTid, "call_command_end",
                  {{"fd", kRedisFd}, {"command", std::string("get")}});
    streams_.Emit(host, s, kRedisTid, "end_read_client_query",
                  {{"fd", kRedisFd}});
    s += kStepNs;
    Ref ws = streams_.Emit(host, s, kRedisTid, "write_to_client_start",
                           {{"fd", kRedisFd}});
    s += kWriteNs;
    Ref we = streams_.Emit(host, s, kRedisTid, "write_to_client_end",
                           {{"fd", kRedisFd}});
    streams_.Emit(host, s, kRedisTid, "delete_file_event", {{"fd", kRedisFd}});
    flow.command_start = cmd;
    flow.segments = {{"Read", "", kRedisTid, read, cmd},
                     {"get", "", kRedisTid, cmd, ws},
                     {"Write to client", "", kRedisTid, ws, we}};
    r.flow_id = flow.id;
    flows_.push_back(std::move(flow));

    Timestamp done = s + 10'000;
    r.rg_server.close = EmitHttp(host, done, "http_server_response", r.back,
                                 "RedisGateway");
    Push(Deliver(r.back, false, done), kServiceReturn, k);
    Push(done + 1, kRedisGatewayFree, k);
  }

  const ScenarioConfig& c_;
  Rng rng_;
  Streams streams_;
  bool pipelined_;
  uint64_t next_order_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::vector<Request> requests_;
  Station services_[2];
  Station redis_gateway_;
  std::map<std::string, Timestamp> last_delivery_;
  int64_t redis_requests_ = 0;
  std::vector<FlowTruth> flows_;
};

}  // namespace

std::optional<Fault> ParseFault(std::string_view name) {
  for (const auto& [fault, fault_name] : kFaultNames) {
    if (fault_name == name)
      return fault;
  }
  return std::nullopt;
}

std::string_view FaultName(Fault fault) {
  for (const auto& [f, name] : kFaultNames) {
    if (f == fault)
      return name;
  }
  return "unknown";
}

std::string EventRef(const std::string& host, int64_t seq) {
  return host + ":" + std::to_string(seq);
}

void ValidateConfig(const ScenarioConfig& c) {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kConfigInvalid, msg);
  };
  bool cluster = c.scenario == "cluster-publish";
  bool ssl = c.scenario == "ssl" || c.scenario == "ssl-double-free";
  bool micro = c.scenario == "microservices";
  if (!cluster && !ssl && !micro)
    fail("unknown scenario '" + c.scenario + "'");
  if (c.nodes < 1)
    fail("--nodes must be at least 1");
  if (c.nodes > 64)
    fail("--nodes must be at most 64");
  if (c.requests < 0)
    fail("--requests must be non-negative");
  if (c.payload < 0 || c.gossip_header < 0)
    fail("--payload and --gossip-header must be non-negative");
  if (c.min_delay_ns <= 0)
    fail("the minimum network delay must be positive");
  if (c.service_ns <= 0)
    fail("the service time must be positive");
  if (c.clients < 0 || c.clients > 2000)
    fail("--clients must be in [0, 2000]");
  if (c.ssl_bytes.size() != 3)
    fail("--ssl-bytes takes three values");
  for (const auto& cmd : c.commands) {
    if (cmd != "get" && cmd != "set" && cmd != "publish" && cmd != "subscribe")
      fail("unsupported command '" + cmd + "'");
  }
  if (c.faults.count(Fault::kBroadcastAmplification) && c.nodes < 2)
    fail("broadcast-amplification needs at least 2 nodes");
  if (c.faults.count(Fault::kSslPendingDoubleFree) && !ssl)
    fail("ssl-double-free applies to the ssl scenario");
  if (c.faults.count(Fault::kPipelinedHttp) && !micro)
    fail("pipelined-http applies to the microservices scenario");
  if ((c.faults.count(Fault::kReadStall) ||
       c.faults.count(Fault::kReadStallFlat)) &&
      (!cluster || c.nodes < 2))
    fail("read stalls need the cluster-publish scenario with 2+ nodes");
  std::vector<std::string> hosts;
  if (micro) {
    hosts = MicroservicesSim::Hosts();
  } else {
    for (int i = 0; i < c.nodes; ++i)
      hosts.push_back("n" + std::to_string(i + 1));
  }
  for (const auto& [host, ns] : c.offsets) {
    if (std::find(hosts.begin(), hosts.end(), host) == hosts.end())
      fail("--offset names unknown host '" + host + "'");
    if (ns >= kBase || ns <= -kBase)
      fail("--offset for " + host + " is out of range");
  }
}

GeneratedTrace Generate(const ScenarioConfig& config) {
  ScenarioConfig c = config;
  if (c.scenario == "ssl-double-free")
    c.faults.insert(Fault::kSslPendingDoubleFree);
  ValidateConfig(c);
  if (c.scenario == "microservices")
    return MicroservicesSim(c).Run();
  return ClusterSim(c).Run();
}

void WriteGenerated(const GeneratedTrace& trace, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw Error(ErrorCode::kIoFailure, "cannot create " + dir);
  for (const TraceStream& stream : trace.streams)
    WriteStreamFile(stream, (std::filesystem::path(dir) / stream.path).string());
  std::string path = (std::filesystem::path(dir) / "ground_truth.json").string();
  std::ofstream out(path, std::ios::binary);
  // Streamed: the dumped string of a large run would dwarf the document.
  out << std::setw(1) << trace.ground_truth << "\n";
  if (!out)
    throw Error(ErrorCode::kIoFailure, "cannot write " + path);
}

}  // namespace kvscope
