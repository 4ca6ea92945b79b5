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

#include "kvscope/trace/ctf_lite.h"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "kvscope/base/error.h"

namespace kvscope {
namespace {

using nlohmann::json;

constexpr const char* kKeys[] = {"ts", "host", "tid", "seq", "name", "attrs"};

bool IsKnownKey(const std::string& key) {
  for (const char* k : kKeys) {
    if (key == k)
      return true;
  }
  return false;
}

// JSON integers come back as signed or unsigned; anything past int64 range
// is rejected rather than wrapped.
bool ToInt64(const json& value, int64_t* out) {
  if (value.is_number_integer() && !value.is_number_unsigned()) {
    *out = value.get<int64_t>();
    return true;
  }
  if (value.is_number_unsigned()) {
    uint64_t u = value.get<uint64_t>();
    if (u > static_cast<uint64_t>(std::numeric_limits<int64_t>::max()))
      return false;
    *out = static_cast<int64_t>(u);
    return true;
  }
  return false;
}

void AppendDouble(double value, std::string* out) {
  if (!std::isfinite(value))
    throw Error(ErrorCode::kInvalidArgument, "non-finite float attribute");
  out->append(json(value).dump());
}

}  // namespace

StreamReader::StreamReader(std::istream& in, std::string source_name,
                           StreamOrder order)
    : in_(in), source_name_(std::move(source_name)), order_(order) {}

bool StreamReader::Next(TraceEvent* event) {
  while (std::getline(in_, buffer_)) {
    ++line_;
    if (buffer_.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    Decode(buffer_, event);
    CheckOrder(*event);
    ++events_read_;
    return true;
  }
  if (in_.bad())
    throw DataError(ErrorCode::kIoFailure, source_name_, line_, "read failed");
  return false;
}

void StreamReader::Decode(const std::string& text, TraceEvent* event) {
  auto malformed = [&](const std::string& why) {
    return DataError(ErrorCode::kMalformedLine, source_name_, line_, why);
  };

  json record = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (record.is_discarded())
    throw malformed("not valid JSON");
  if (!record.is_object())
    throw malformed("record is not a JSON object");
  for (const auto& [key, _] : record.items()) {
    if (!IsKnownKey(key))
      throw malformed("unexpected key '" + key + "'");
  }
  for (const char* key : kKeys) {
    if (!record.contains(key))
      throw malformed(std::string("missing key '") + key + "'");
  }

  if (!ToInt64(record["ts"], &event->ts) || event->ts < 0)
    throw malformed("ts must be a non-negative integer");
  if (!ToInt64(record["tid"], &event->tid))
    throw malformed("tid must be an integer");
  if (!ToInt64(record["seq"], &event->seq))
    throw malformed("seq must be an integer");
  const json& host = record["host"];
  if (!host.is_string() || host.get_ref<const std::string&>().empty())
    throw malformed("host must be a non-empty string");
  event->host = host.get<std::string>();
  const json& name = record["name"];
  if (!name.is_string() || name.get_ref<const std::string&>().empty())
    throw malformed("name must be a non-empty string");
  event->name = std::string(CanonicalEventName(name.get<std::string>()));

  const json& attrs = record["attrs"];
  if (!attrs.is_object())
    throw malformed("attrs must be an object");
  event->attrs.clear();
  for (const auto& [key, value] : attrs.items()) {
    int64_t i = 0;
    if (ToInt64(value, &i)) {
      event->attrs.emplace(key, i);
    } else if (value.is_number_float()) {
      event->attrs.emplace(key, value.get<double>());
    } else if (value.is_string()) {
      event->attrs.emplace(key, value.get<std::string>());
    } else {
      throw malformed("attribute '" + key + "' is not a scalar");
    }
  }

  if (auto violation = CheckSchema(*event)) {
    throw DataError(ErrorCode::kSchemaViolation, source_name_, line_,
                    *violation);
  }
}

void StreamReader::CheckOrder(const TraceEvent& event) {
  auto fail = [&](ErrorCode code, const std::string& why) {
    return DataError(code, source_name_, line_, why);
  };

  if (order_ == StreamOrder::kSingleHost) {
    if (first_host_.empty()) {
      first_host_ = event.host;
    } else if (event.host != first_host_) {
      throw fail(ErrorCode::kMalformedLine,
                 "host '" + event.host + "' differs from stream host '" +
                     first_host_ + "'");
    }
  } else if (have_prev_) {
    if (event.ts < prev_ts_ ||
        (event.ts == prev_ts_ && event.host < prev_host_)) {
      throw fail(ErrorCode::kNonMonotoneSeq,
                 "merged events out of (ts, host) order");
    }
  }
  have_prev_ = true;
  prev_ts_ = event.ts;
  if (order_ == StreamOrder::kMerged)
    prev_host_ = event.host;

  auto [it, inserted] = last_by_host_.try_emplace(event.host,
                                                  Last{event.ts, event.seq});
  if (inserted)
    return;
  Last& last = it->second;
  if (event.seq <= last.seq) {
    throw fail(ErrorCode::kNonMonotoneSeq,
               "seq " + std::to_string(event.seq) + " after " +
                   std::to_string(last.seq));
  }
  if (event.ts < last.ts) {
    throw fail(ErrorCode::kNonMonotoneSeq,
               "timestamp " + std::to_string(event.ts) + " after " +
                   std::to_string(last.ts));
  }
  last = Last{event.ts, event.seq};
}

TraceStream ParseStream(std::istream& in, const std::string& source_name) {
  TraceStream stream;
  stream.path = source_name;
  StreamReader reader(in, source_name, StreamOrder::kSingleHost);
  TraceEvent event;
  while (reader.Next(&event))
    stream.events.push_back(std::move(event));
  if (!stream.events.empty())
    stream.host = stream.events.front().host;
  return stream;
}

TraceStream ReadStreamFile(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw DataError(ErrorCode::kIoFailure, path, 0, "cannot open");
  return ParseStream(in, path);
}

void AppendJsonString(std::string_view text, std::string* out) {
  bool plain = true;
  for (unsigned char c : text) {
    if (c < 0x20 || c == '"' || c == '\\' || c >= 0x80) {
      plain = false;
      break;
    }
  }
  if (plain) {
    out->push_back('"');
    out->append(text);
    out->push_back('"');
    return;
  }
  out->append(json(std::string(text)).dump());
}

void AppendEventJson(const TraceEvent& event, std::string* out) {
  out->append("{\"ts\":");
  out->append(std::to_string(event.ts));
  out->append(",\"host\":");
  AppendJsonString(event.host, out);
  out->append(",\"tid\":");
  out->append(std::to_string(event.tid));
  out->append(",\"seq\":");
  out->append(std::to_string(event.seq));
  out->append(",\"name\":");
  AppendJsonString(event.name, out);
  out->append(",\"attrs\":{");
  bool first = true;
  for (const auto& [key, value] : event.attrs) {
    if (!first)
      out->push_back(',');
    first = false;
    AppendJsonString(key, out);
    out->push_back(':');
    if (const auto* i = std::get_if<int64_t>(&value)) {
      out->append(std::to_string(*i));
    } else if (const auto* d = std::get_if<double>(&value)) {
      AppendDouble(*d, out);
    } else {
      AppendJsonString(std::get<std::string>(value), out);
    }
  }
  out->append("}}");
}

std::string FormatEvent(const TraceEvent& event) {
  std::string out;
  AppendEventJson(event, &out);
  return out;
}

void WriteStream(const TraceStream& stream, std::ostream& out) {
  std::string line;
  for (const TraceEvent& event : stream.events) {
    line.clear();
    AppendEventJson(event, &line);
    line.push_back('\n');
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
  out.flush();
  if (!out)
    throw Error(ErrorCode::kIoFailure, "write failed for " + stream.path);
}

void WriteStreamFile(const TraceStream& stream, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw DataError(ErrorCode::kIoFailure, path, 0, "cannot create");
  WriteStream(stream, out);
}

}  // namespace kvscope
