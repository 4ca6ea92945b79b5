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

#ifndef INCLUDE_KVSCOPE_TRACE_CTF_LITE_H_
#define INCLUDE_KVSCOPE_TRACE_CTF_LITE_H_

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "absl/container/flat_hash_map.h"
#include "kvscope/trace/event.h"

namespace kvscope {

// CTF-lite: one JSON object per line with exactly the keys
// {ts, host, tid, seq, name, attrs}. attrs holds flat scalars only.

struct TraceStream {
  std::string host;
  std::string path;
  std::vector<TraceEvent> events;

  bool operator==(const TraceStream&) const = default;
};

enum class StreamOrder {
  // Per-host stream file: one host, (ts, seq) strictly increasing.
  kSingleHost,
  // Merged experiment file: (ts, host) non-decreasing, seq increasing per
  // host.
  kMerged,
};

// Single-pass reader. Holds one record at a time; the only per-file state is
// the last (ts, seq) seen for each host.
class StreamReader {
 public:
  StreamReader(std::istream& in, std::string source_name,
               StreamOrder order = StreamOrder::kSingleHost);

  // Returns false at end of input. Throws DataError on a bad record.
  bool Next(TraceEvent* event);

  uint64_t line() const { return line_; }
  uint64_t events_read() const { return events_read_; }
  const std::string& source_name() const { return source_name_; }

 private:
  struct Last {
    Timestamp ts;
    int64_t seq;
  };

  void Decode(const std::string& text, TraceEvent* event);
  void CheckOrder(const TraceEvent& event);

  std::istream& in_;
  std::string source_name_;
  StreamOrder order_;
  std::string buffer_;
  uint64_t line_ = 0;
  uint64_t events_read_ = 0;
  std::string first_host_;
  bool have_prev_ = false;
  Timestamp prev_ts_ = 0;
  std::string prev_host_;
  absl::flat_hash_map<std::string, Last> last_by_host_;
};

TraceStream ParseStream(std::istream& in, const std::string& source_name = "");
TraceStream ReadStreamFile(const std::string& path);

// Appends the canonical one-line encoding of `event` (no trailing newline).
void AppendEventJson(const TraceEvent& event, std::string* out);
std::string FormatEvent(const TraceEvent& event);

void WriteStream(const TraceStream& stream, std::ostream& out);
void WriteStreamFile(const TraceStream& stream, const std::string& path);

// JSON string literal with escaping, e.g. "a\"b".
void AppendJsonString(std::string_view text, std::string* out);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_TRACE_CTF_LITE_H_
