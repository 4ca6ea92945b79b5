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

#include "kvscope/aggregate/experiment.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <queue>

#include "json.hpp"
#include "kvscope/base/error.h"

namespace kvscope {
namespace {

using nlohmann::json;

Timestamp Adjust(Timestamp ts, int64_t offset, const std::string& host) {
  Timestamp adjusted = ts + offset;
  if (adjusted < 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "clock correction moves an event of host " + host +
                    " before time 0");
  }
  return adjusted;
}

// Heap entry for the k-way merge; `source` indexes the input cursor.
struct Head {
  Timestamp ts;
  const std::string* host;
  int64_t seq;
  size_t source;
};

struct HeadAfter {
  bool operator()(const Head& a, const Head& b) const {
    if (a.ts != b.ts)
      return a.ts > b.ts;
    if (*a.host != *b.host)
      return *a.host > *b.host;
    if (a.seq != b.seq)
      return a.seq > b.seq;
    return a.source > b.source;
  }
};

}  // namespace

Timestamp Experiment::start_ts() const {
  return events.empty() ? 0 : events.front().ts;
}

Timestamp Experiment::end_ts() const {
  return events.empty() ? 0 : events.back().ts;
}

bool MergeOrderLess(const TraceEvent& a, const TraceEvent& b) {
  if (a.ts != b.ts)
    return a.ts < b.ts;
  if (a.host != b.host)
    return a.host < b.host;
  return a.seq < b.seq;
}

Experiment Merge(std::span<const TraceStream> streams,
                 const ClockOffsets& offsets) {
  Experiment experiment;
  experiment.offsets = offsets;
  size_t total = 0;
  for (const TraceStream& s : streams) {
    total += s.events.size();
    experiment.sources.push_back(SourceInfo{s.host, s.path, s.events.size()});
  }
  experiment.events.reserve(total);

  std::vector<size_t> cursor(streams.size(), 0);
  std::vector<int64_t> shift(streams.size(), 0);
  std::priority_queue<Head, std::vector<Head>, HeadAfter> heap;
  for (size_t i = 0; i < streams.size(); ++i) {
    shift[i] = offsets.OffsetOf(streams[i].host);
    if (!streams[i].events.empty()) {
      const TraceEvent& e = streams[i].events.front();
      heap.push(Head{Adjust(e.ts, shift[i], e.host), &e.host, e.seq, i});
    }
  }
  while (!heap.empty()) {
    Head head = heap.top();
    heap.pop();
    const TraceEvent& src = streams[head.source].events[cursor[head.source]];
    TraceEvent& out = experiment.events.emplace_back(src);
    out.ts = head.ts;
    size_t next = ++cursor[head.source];
    if (next < streams[head.source].events.size()) {
      const TraceEvent& e = streams[head.source].events[next];
      heap.push(
          Head{Adjust(e.ts, shift[head.source], e.host), &e.host, e.seq,
               head.source});
    }
  }
  return experiment;
}

std::vector<std::string> ListStreamFiles(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec))
    throw DataError(ErrorCode::kIoFailure, dir, 0, "not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

MergeSummary MergeFiles(const std::vector<std::string>& paths, bool sync,
                        std::ostream& out) {
  MergeSummary summary;
  std::vector<std::string> hosts;
  PairCollector collector;
  for (const std::string& path : paths) {
    std::ifstream in(path);
    if (!in)
      throw DataError(ErrorCode::kIoFailure, path, 0, "cannot open");
    StreamReader reader(in, path);
    TraceEvent event;
    SourceInfo info{"", path, 0};
    while (reader.Next(&event)) {
      if (info.host.empty())
        info.host = event.host;
      if (sync)
        collector.Add(event);
      ++info.event_count;
    }
    if (!info.host.empty())
      hosts.push_back(info.host);
    summary.sources.push_back(info);
  }
  summary.offsets = sync ? EstimateOffsets(hosts, collector.Finish())
                         : ZeroOffsets(hosts);

  struct Cursor {
    std::unique_ptr<std::ifstream> file;
    std::unique_ptr<StreamReader> reader;
    TraceEvent event;
    int64_t shift = 0;
  };
  std::vector<Cursor> cursors(paths.size());
  std::priority_queue<Head, std::vector<Head>, HeadAfter> heap;
  for (size_t i = 0; i < paths.size(); ++i) {
    Cursor& c = cursors[i];
    c.file = std::make_unique<std::ifstream>(paths[i]);
    c.reader = std::make_unique<StreamReader>(*c.file, paths[i]);
    c.shift = summary.offsets.OffsetOf(summary.sources[i].host);
    if (c.reader->Next(&c.event)) {
      heap.push(Head{Adjust(c.event.ts, c.shift, c.event.host), &c.event.host,
                     c.event.seq, i});
    }
  }
  std::string line;
  while (!heap.empty()) {
    Head head = heap.top();
    heap.pop();
    Cursor& c = cursors[head.source];
    c.event.ts = head.ts;
    line.clear();
    AppendEventJson(c.event, &line);
    line.push_back('\n');
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    ++summary.event_count;
    if (c.reader->Next(&c.event)) {
      heap.push(Head{Adjust(c.event.ts, c.shift, c.event.host), &c.event.host,
                     c.event.seq, head.source});
    }
  }
  out.flush();
  if (!out)
    throw Error(ErrorCode::kIoFailure, "failed writing merged output");
  return summary;
}

std::string OffsetsSidecarPath(const std::string& merged_path) {
  std::filesystem::path p(merged_path);
  return (p.parent_path() / "offsets.json").string();
}

void WriteOffsetsJson(const ClockOffsets& offsets, const std::string& path) {
  json doc;
  doc["reference_host"] = offsets.reference_host;
  doc["offsets"] = json::object();
  for (const auto& [host, off] : offsets.offsets)
    doc["offsets"][host] = off;
  doc["uncertainty"] = json::object();
  for (const auto& [host, u] : offsets.uncertainty)
    doc["uncertainty"][host] = u;
  doc["warnings"] = offsets.warnings;
  json violations = json::array();
  for (const MessagePair& p : offsets.violations) {
    violations.push_back({{"key", p.key},
                          {"send_host", p.send_host},
                          {"send_ts", p.send_ts},
                          {"recv_host", p.recv_host},
                          {"recv_ts", p.recv_ts}});
  }
  doc["violations"] = violations;
  std::ofstream out(path, std::ios::trunc);
  out << doc.dump(2) << "\n";
  if (!out)
    throw DataError(ErrorCode::kIoFailure, path, 0, "cannot write");
}

ClockOffsets ReadOffsetsJson(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw DataError(ErrorCode::kIoFailure, path, 0, "cannot open");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object())
    throw DataError(ErrorCode::kBadFormat, path, 0, "invalid offsets JSON");
  ClockOffsets offsets;
  try {
    offsets.reference_host = doc.at("reference_host").get<std::string>();
    for (const auto& [host, off] : doc.at("offsets").items())
      offsets.offsets[host] = off.get<int64_t>();
    if (doc.contains("uncertainty")) {
      for (const auto& [host, u] : doc["uncertainty"].items())
        offsets.uncertainty[host] = u.get<int64_t>();
    }
    if (doc.contains("warnings"))
      offsets.warnings = doc["warnings"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(ErrorCode::kBadFormat, path, 0, e.what());
  }
  return offsets;
}

void WriteExperiment(const Experiment& experiment,
                     const std::string& merged_path) {
  std::ofstream out(merged_path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError(ErrorCode::kIoFailure, merged_path, 0, "cannot create");
  std::string line;
  for (const TraceEvent& event : experiment.events) {
    line.clear();
    AppendEventJson(event, &line);
    line.push_back('\n');
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
  out.flush();
  if (!out)
    throw DataError(ErrorCode::kIoFailure, merged_path, 0, "write failed");
  WriteOffsetsJson(experiment.offsets, OffsetsSidecarPath(merged_path));
}

Experiment ReadExperiment(const std::string& merged_path) {
  std::ifstream in(merged_path);
  if (!in)
    throw DataError(ErrorCode::kIoFailure, merged_path, 0, "cannot open");
  Experiment experiment;
  StreamReader reader(in, merged_path, StreamOrder::kMerged);
  TraceEvent event;
  std::map<std::string, uint64_t> counts;
  while (reader.Next(&event)) {
    ++counts[event.host];
    experiment.events.push_back(std::move(event));
  }
  std::vector<std::string> hosts;
  for (const auto& [host, n] : counts) {
    hosts.push_back(host);
    experiment.sources.push_back(SourceInfo{host, merged_path, n});
  }
  std::string sidecar = OffsetsSidecarPath(merged_path);
  if (std::filesystem::exists(sidecar))
    experiment.offsets = ReadOffsetsJson(sidecar);
  else
    experiment.offsets = ZeroOffsets(hosts);
  return experiment;
}

}  // namespace kvscope
