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

#include "kvscope/aggregate/clock_sync.h"

#include <algorithm>
#include <array>
#include <limits>
#include <queue>
#include <set>

namespace kvscope {
namespace {

std::string TupleKey(const std::tuple<std::string, int64_t, std::string,
                                      int64_t>& tuple) {
  return std::get<0>(tuple) + ":" + std::to_string(std::get<1>(tuple)) + ">" +
         std::get<2>(tuple) + ":" + std::to_string(std::get<3>(tuple));
}

struct Direction {
  bool seen = false;
  int64_t min_delta = std::numeric_limits<int64_t>::max();
};

// Offset difference (offset[b] - offset[a]) for hosts a < b, plus the
// residual bound. `forward` holds a->b deltas, `backward` b->a deltas.
struct EdgeFit {
  int64_t delta = 0;
  int64_t slack = 0;
  bool feasible = true;
};

EdgeFit FitEdge(const Direction& forward, const Direction& backward) {
  EdgeFit fit;
  if (forward.seen && backward.seen) {
    int64_t lo = -forward.min_delta;
    int64_t hi = backward.min_delta;
    fit.feasible = lo <= hi;
    fit.delta = lo + (hi - lo) / 2;
    fit.slack = (hi >= lo ? hi - lo : lo - hi) / 2;
  } else if (forward.seen) {
    // Only a lower bound: keep the shared-clock assumption unless the
    // observed deltas contradict it.
    fit.delta = std::max<int64_t>(-forward.min_delta, 0);
    fit.slack = forward.min_delta + fit.delta;
  } else {
    fit.delta = std::min<int64_t>(backward.min_delta, 0);
    fit.slack = backward.min_delta - fit.delta;
  }
  return fit;
}

}  // namespace

void PairCollector::Add(const TraceEvent& event) {
  EventKind kind = ClassifyEvent(event.name);
  switch (kind) {
    case EventKind::kClusterSend: {
      auto msg = event.GetInt("msg_id");
      if (!msg)
        return;
      std::string dst(event.GetString("dst").value_or(""));
      sends_.emplace(*msg, SendRecord{event.host, event.ts, std::move(dst)});
      return;
    }
    case EventKind::kClusterRead: {
      if (auto msg = event.GetInt("msg_id"))
        reads_.emplace_back(*msg, event.host, event.ts);
      return;
    }
    case EventKind::kHttpClientRequest:
    case EventKind::kHttpServerReceive:
    case EventKind::kHttpServerResponse:
    case EventKind::kHttpClientResponse: {
      Tuple tuple{std::string(event.GetString("src_addr").value_or("")),
                  event.GetInt("src_port").value_or(0),
                  std::string(event.GetString("dst_addr").value_or("")),
                  event.GetInt("dst_port").value_or(0)};
      Stamp stamp{event.host, event.ts};
      if (kind == EventKind::kHttpClientRequest)
        http_requests_[tuple].push_back(stamp);
      else if (kind == EventKind::kHttpServerReceive)
        http_receives_[tuple].push_back(stamp);
      else if (kind == EventKind::kHttpServerResponse)
        http_responses_[tuple].push_back(stamp);
      else
        http_response_receipts_[tuple].push_back(stamp);
      return;
    }
    default:
      return;
  }
}

std::vector<MessagePair> PairCollector::Finish() {
  std::vector<MessagePair> pairs;
  for (const auto& [msg, host, ts] : reads_) {
    auto [begin, end] = sends_.equal_range(msg);
    const SendRecord* match = nullptr;
    for (auto it = begin; it != end; ++it) {
      if (it->second.dst == host) {
        match = &it->second;
        break;
      }
      if (!match && it->second.dst.empty() && it->second.host != host)
        match = &it->second;
    }
    if (!match)
      continue;
    pairs.push_back(MessagePair{match->host, match->ts, host, ts,
                                "msg:" + std::to_string(msg) + ">" + host});
  }

  auto zip = [&](const std::map<Tuple, std::vector<Stamp>>& senders,
                 const std::map<Tuple, std::vector<Stamp>>& receivers,
                 const char* tag) {
    for (const auto& [tuple, sent] : senders) {
      auto it = receivers.find(tuple);
      if (it == receivers.end())
        continue;
      size_t n = std::min(sent.size(), it->second.size());
      for (size_t i = 0; i < n; ++i) {
        pairs.push_back(MessagePair{
            sent[i].host, sent[i].ts, it->second[i].host, it->second[i].ts,
            std::string(tag) + TupleKey(tuple) + "#" + std::to_string(i)});
      }
    }
  };
  zip(http_requests_, http_receives_, "http:");
  zip(http_responses_, http_response_receipts_, "http-resp:");

  sends_.clear();
  reads_.clear();
  http_requests_.clear();
  http_receives_.clear();
  http_responses_.clear();
  http_response_receipts_.clear();
  return pairs;
}

std::vector<MessagePair> CollectPairs(std::span<const TraceStream> streams) {
  PairCollector collector;
  for (const TraceStream& stream : streams) {
    for (const TraceEvent& event : stream.events)
      collector.Add(event);
  }
  return collector.Finish();
}

int64_t ClockOffsets::OffsetOf(const std::string& host) const {
  auto it = offsets.find(host);
  return it == offsets.end() ? 0 : it->second;
}

int64_t ClockOffsets::UncertaintyOf(const std::string& host) const {
  auto it = uncertainty.find(host);
  return it == uncertainty.end() ? 0 : it->second;
}

ClockOffsets ZeroOffsets(const std::vector<std::string>& hosts) {
  ClockOffsets result;
  std::set<std::string> sorted(hosts.begin(), hosts.end());
  if (!sorted.empty())
    result.reference_host = *sorted.begin();
  for (const std::string& host : sorted) {
    result.offsets[host] = 0;
    result.uncertainty[host] = 0;
  }
  return result;
}

ClockOffsets EstimateOffsets(const std::vector<std::string>& hosts,
                             const std::vector<MessagePair>& pairs) {
  std::set<std::string> host_set(hosts.begin(), hosts.end());
  for (const MessagePair& p : pairs) {
    host_set.insert(p.send_host);
    host_set.insert(p.recv_host);
  }
  ClockOffsets result;
  if (host_set.empty())
    return result;
  result.reference_host = *host_set.begin();

  // Key (a, b) with a < b; [0] holds a->b deltas, [1] holds b->a deltas.
  std::map<std::pair<std::string, std::string>, std::array<Direction, 2>>
      edges;
  for (const MessagePair& p : pairs) {
    if (p.send_host == p.recv_host)
      continue;
    int64_t delta = p.recv_ts - p.send_ts;
    bool forward = p.send_host < p.recv_host;
    auto key = forward ? std::make_pair(p.send_host, p.recv_host)
                       : std::make_pair(p.recv_host, p.send_host);
    Direction& dir = edges[key][forward ? 0 : 1];
    dir.seen = true;
    dir.min_delta = std::min(dir.min_delta, delta);
  }

  std::map<std::string, std::vector<std::string>> neighbours;
  for (const auto& [key, dirs] : edges) {
    neighbours[key.first].push_back(key.second);
    neighbours[key.second].push_back(key.first);
  }

  result.offsets[result.reference_host] = 0;
  result.uncertainty[result.reference_host] = 0;
  // Two sweeps: first only over host pairs observed in both directions (a
  // bounded fit), then over one-directional pairs for anything left.
  for (bool require_both : {true, false}) {
    std::deque<std::string> queue;
    for (const auto& [host, _] : result.offsets)
      queue.push_back(host);
    while (!queue.empty()) {
      std::string from = queue.front();
      queue.pop_front();
      for (const std::string& to : neighbours[from]) {
        if (result.offsets.count(to))
          continue;
        bool from_is_a = from < to;
        const auto& dirs =
            edges.at(from_is_a ? std::make_pair(from, to)
                               : std::make_pair(to, from));
        if (require_both && !(dirs[0].seen && dirs[1].seen))
          continue;
        EdgeFit fit = FitEdge(dirs[0], dirs[1]);
        if (!fit.feasible) {
          result.warnings.push_back("contradictory delays between " +
                                    std::min(from, to) + " and " +
                                    std::max(from, to) +
                                    "; using midpoint");
        }
        int64_t base = result.offsets[from];
        result.offsets[to] = from_is_a ? base + fit.delta : base - fit.delta;
        result.uncertainty[to] = result.uncertainty[from] + fit.slack;
        queue.push_back(to);
      }
    }
  }

  for (const std::string& host : host_set) {
    if (result.offsets.count(host))
      continue;
    result.offsets[host] = 0;
    result.uncertainty[host] = 0;
    result.warnings.push_back("host " + host +
                              " has no matched pairs linking it to " +
                              result.reference_host + "; offset 0");
  }
  result.violations = FindCausalityViolations(pairs, result);
  return result;
}

ClockOffsets EstimateOffsets(std::span<const TraceStream> streams) {
  std::vector<std::string> hosts;
  for (const TraceStream& s : streams) {
    if (!s.host.empty())
      hosts.push_back(s.host);
  }
  return EstimateOffsets(hosts, CollectPairs(streams));
}

std::vector<MessagePair> FindCausalityViolations(
    const std::vector<MessagePair>& pairs, const ClockOffsets& offsets) {
  std::vector<MessagePair> out;
  for (const MessagePair& p : pairs) {
    Timestamp send = p.send_ts + offsets.OffsetOf(p.send_host);
    Timestamp recv = p.recv_ts + offsets.OffsetOf(p.recv_host);
    if (recv < send)
      out.push_back(p);
  }
  return out;
}

}  // namespace kvscope
