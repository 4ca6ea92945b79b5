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

#include "kvscope/spans/spans.h"

#include <algorithm>
#include <fstream>

#include "absl/container/flat_hash_map.h"
#include "kvscope/base/error.h"
#include "kvscope/trace/ctf_lite.h"

namespace kvscope {
namespace {

// Innermost of the candidate spans containing [t0, t1]: latest start, then
// earliest end, then lowest index.
template <typename Candidates>
std::optional<size_t> Innermost(const std::vector<Span>& spans,
                                const Candidates& candidates, Timestamp t0,
                                Timestamp t1) {
  std::optional<size_t> best;
  for (size_t i : candidates) {
    const Span& s = spans[i];
    if (s.open || s.t0 > t0 || s.t1 < t1)
      continue;
    if (!best || s.t0 > spans[*best].t0 ||
        (s.t0 == spans[*best].t0 && s.t1 < spans[*best].t1)) {
      best = i;
    }
  }
  return best;
}

bool Contains(const Span& parent, const Span& child) {
  return !parent.open && parent.t0 <= child.t0 && child.t1 <= parent.t1;
}

}  // namespace

int SpanForest::Depth() const {
  absl::flat_hash_map<std::string, size_t> index;
  for (size_t i = 0; i < spans.size(); ++i)
    index[spans[i].id] = i;
  std::vector<int> depth(spans.size(), -1);
  int deepest = 0;
  for (size_t i = 0; i < spans.size(); ++i) {
    if (depth[i] >= 0)
      continue;
    // Walk up until a span of known depth or a root; the chain is then
    // numbered top-down.
    std::vector<size_t> chain;
    size_t cur = i;
    int base = -1;
    while (depth[cur] < 0) {
      chain.push_back(cur);
      auto it = spans[cur].parent.empty() ? index.end()
                                          : index.find(spans[cur].parent);
      if (it == index.end() || chain.size() > spans.size())
        break;
      cur = it->second;
    }
    if (depth[cur] >= 0 && chain.back() != cur)
      base = depth[cur];
    int d = base + 1;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it)
      depth[*it] = d++;
    deepest = std::max(deepest, depth[i]);
  }
  return deepest;
}

size_t SpanForest::ContainmentViolations(int64_t tolerance) const {
  absl::flat_hash_map<std::string, size_t> index;
  for (size_t i = 0; i < spans.size(); ++i)
    index[spans[i].id] = i;
  size_t violations = 0;
  for (const Span& child : spans) {
    if (child.parent.empty())
      continue;
    auto it = index.find(child.parent);
    if (it == index.end()) {
      ++violations;
      continue;
    }
    const Span& parent = spans[it->second];
    if (child.t0 < parent.t0 - tolerance || child.t1 > parent.t1 + tolerance)
      ++violations;
  }
  return violations;
}

size_t SpanBuilder::NewSpan(const TraceEvent& e, const char* kind,
                            bool open) {
  Span s;
  s.id = e.host + ":" + std::to_string(e.seq);
  s.kind = kind;
  s.service = std::string(e.GetString("service").value_or(""));
  s.host = e.host;
  s.t0 = e.ts;
  s.t1 = e.ts;
  s.tuple = EndpointOf(e).value_or(Endpoint{});
  s.fd = e.GetInt("fd").value_or(-1);
  s.open = open;
  spans_.push_back(std::move(s));
  return spans_.size() - 1;
}

void SpanBuilder::Add(const TraceEvent& e) {
  EventKind kind = ClassifyEvent(e.name);
  if (kind != EventKind::kHttpClientRequest &&
      kind != EventKind::kHttpClientResponse &&
      kind != EventKind::kHttpServerReceive &&
      kind != EventKind::kHttpServerResponse) {
    return;
  }
  auto ep = EndpointOf(e);
  if (!ep)
    return;
  Lanes& lanes =
      lanes_[Tuple(ep->src_addr, ep->src_port, ep->dst_addr, ep->dst_port)];
  switch (kind) {
    case EventKind::kHttpClientRequest: {
      size_t i = NewSpan(e, "client", true);
      lanes.awaiting_response.push_back(i);
      lanes.awaiting_server.push_back(i);
      auto& active = active_servers_[e.host];
      if (!active.empty()) {
        spans_[i].parent = spans_[active.back()].id;
        nested_clients_.push_back(i);
      }
      break;
    }
    case EventKind::kHttpClientResponse:
      if (lanes.awaiting_response.empty()) {
        NewSpan(e, "client", true);
        ++unmatched_;
      } else {
        Span& s = spans_[lanes.awaiting_response.front()];
        lanes.awaiting_response.pop_front();
        s.t1 = e.ts;
        s.open = false;
      }
      break;
    case EventKind::kHttpServerReceive: {
      size_t i = NewSpan(e, "server", true);
      if (lanes.awaiting_server.empty()) {
        ++unmatched_;
      } else {
        spans_[i].parent = spans_[lanes.awaiting_server.front()].id;
        lanes.awaiting_server.pop_front();
      }
      lanes.serving.push_back(i);
      active_servers_[e.host].push_back(i);
      break;
    }
    case EventKind::kHttpServerResponse:
      if (lanes.serving.empty()) {
        NewSpan(e, "server", true);
        ++unmatched_;
      } else {
        size_t i = lanes.serving.front();
        lanes.serving.pop_front();
        spans_[i].t1 = e.ts;
        spans_[i].open = false;
        auto& active = active_servers_[e.host];
        active.erase(std::find(active.begin(), active.end(), i));
      }
      break;
    default:
      break;
  }
}

SpanForest SpanBuilder::Finish() {
  for (auto& [tuple, lanes] : lanes_) {
    unmatched_ += lanes.awaiting_response.size() +
                  lanes.awaiting_server.size() + lanes.serving.size();
  }

  // The parent picked at request time was the latest active server span;
  // confirm containment now that ends are known, else search the host.
  absl::flat_hash_map<std::string, size_t> index;
  std::map<std::string, std::vector<size_t>> servers_by_host;
  for (size_t i = 0; i < spans_.size(); ++i) {
    index[spans_[i].id] = i;
    if (spans_[i].kind == "server")
      servers_by_host[spans_[i].host].push_back(i);
  }
  for (size_t i : nested_clients_) {
    Span& child = spans_[i];
    const Span& parent = spans_[index.at(child.parent)];
    if (Contains(parent, child))
      continue;
    auto best = Innermost(spans_, servers_by_host[child.host], child.t0,
                          child.t1);
    child.parent = best ? spans_[*best].id : std::string();
  }

  SpanForest out;
  out.spans = std::move(spans_);
  out.unmatched = unmatched_;
  *this = SpanBuilder();
  return out;
}

SpanForest ReconstructSpans(std::span<const TraceEvent> events) {
  SpanBuilder builder;
  for (const TraceEvent& e : events)
    builder.Add(e);
  return builder.Finish();
}

SpanForest ReconstructSpansFromFile(const std::string& merged_path) {
  std::ifstream in(merged_path);
  if (!in)
    throw DataError(ErrorCode::kIoFailure, merged_path, 0, "cannot open");
  StreamReader reader(in, merged_path, StreamOrder::kMerged);
  SpanBuilder builder;
  TraceEvent e;
  while (reader.Next(&e))
    builder.Add(e);
  return builder.Finish();
}

size_t AttachRedisFlows(SpanForest* forest, const FlowSet& flows) {
  using Key = std::tuple<std::string, int64_t, std::string, int64_t>;
  std::map<Key, std::vector<size_t>> clients_by_tuple;
  std::map<std::string, std::vector<size_t>> servers_by_addr;
  const std::vector<Span>& spans = forest->spans;
  for (size_t i = 0; i < spans.size(); ++i) {
    const Span& s = spans[i];
    if (s.kind == "client") {
      clients_by_tuple[Key(s.tuple.src_addr, s.tuple.src_port,
                           s.tuple.dst_addr, s.tuple.dst_port)]
          .push_back(i);
    } else if (s.kind == "server") {
      servers_by_addr[s.tuple.dst_addr].push_back(i);
    }
  }

  std::vector<Span> added;
  size_t attached = 0;
  for (const RequestFlow& flow : flows.flows) {
    Span node;
    node.id = flow.id;
    node.kind = "redis";
    node.service = "Redis";
    node.host = flow.origin;
    node.t0 = flow.start();
    node.t1 = flow.end();
    node.open = !flow.complete;
    if (flow.endpoint) {
      node.tuple = *flow.endpoint;
      std::optional<size_t> parent;
      auto c = clients_by_tuple.find(Key(flow.endpoint->src_addr,
                                         flow.endpoint->src_port,
                                         flow.endpoint->dst_addr,
                                         flow.endpoint->dst_port));
      if (c != clients_by_tuple.end())
        parent = Innermost(spans, c->second, node.t0, node.t1);
      if (!parent) {
        auto s = servers_by_addr.find(flow.endpoint->src_addr);
        if (s != servers_by_addr.end())
          parent = Innermost(spans, s->second, node.t0, node.t1);
      }
      if (parent) {
        node.parent = spans[*parent].id;
        ++attached;
      }
    }
    added.push_back(std::move(node));
  }
  for (Span& s : added)
    forest->spans.push_back(std::move(s));
  return attached;
}

nlohmann::json SpanJson(const Span& s) {
  nlohmann::json j = {{"id", s.id},
                      {"kind", s.kind},
                      {"service", s.service},
                      {"host", s.host},
                      {"t0", s.t0},
                      {"t1", s.t1},
                      {"parent", s.parent.empty() ? nlohmann::json(nullptr)
                                                  : nlohmann::json(s.parent)},
                      {"open", s.open},
                      {"src_addr", s.tuple.src_addr},
                      {"src_port", s.tuple.src_port},
                      {"dst_addr", s.tuple.dst_addr},
                      {"dst_port", s.tuple.dst_port}};
  if (s.fd >= 0)
    j["fd"] = s.fd;
  return j;
}

nlohmann::json SpanForestJson(const SpanForest& forest) {
  nlohmann::json spans = nlohmann::json::array();
  for (const Span& s : forest.spans)
    spans.push_back(SpanJson(s));
  return {{"spans", std::move(spans)},
          {"unmatched", forest.unmatched},
          {"depth", forest.Depth()}};
}

}  // namespace kvscope
