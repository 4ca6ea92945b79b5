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

#ifndef INCLUDE_KVSCOPE_TRACE_EVENT_H_
#define INCLUDE_KVSCOPE_TRACE_EVENT_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace kvscope {

// Nanoseconds. Per-host clock in raw streams, reference clock after merge.
using Timestamp = int64_t;

using AttrValue = std::variant<int64_t, double, std::string>;
using AttrMap = std::map<std::string, AttrValue, std::less<>>;

std::string AttrToString(const AttrValue& value);

struct TraceEvent {
  Timestamp ts = 0;
  std::string host;
  int64_t tid = 0;
  int64_t seq = 0;
  std::string name;
  AttrMap attrs;

  const AttrValue* FindAttr(std::string_view key) const;
  std::optional<int64_t> GetInt(std::string_view key) const;
  std::optional<std::string_view> GetString(std::string_view key) const;

  bool operator==(const TraceEvent&) const = default;
};

// The recognized tracepoints. Anything else classifies as kUnknown and is
// carried through the pipeline untouched.
enum class EventKind : uint8_t {
  kStartReadClientQuery,
  kEndReadClientQuery,
  kWriteToClientStart,
  kWriteToClientEnd,
  kSslRead,
  kFreeClient,
  kClusterRead,
  kClusterProcessPacket,
  kClusterSend,
  kCallCommandStart,
  kCallCommandEnd,
  kAddFileEvent,
  kDeleteFileEvent,
  kRunPendingReads,
  kHttpClientRequest,
  kHttpServerReceive,
  kHttpServerResponse,
  kHttpClientResponse,
  kUnknown,
};

EventKind ClassifyEvent(std::string_view name);
std::string_view EventKindName(EventKind kind);

// Maps legacy spellings onto the canonical name; returns the input otherwise.
std::string_view CanonicalEventName(std::string_view name);

enum class ScalarType : uint8_t { kInt, kFloat, kString };

struct AttrSpec {
  std::string_view key;
  ScalarType type;
};

std::span<const AttrSpec> RequiredAttrs(EventKind kind);

// Empty when the event satisfies its schema, otherwise a description of the
// first violation. Unknown events always pass.
std::optional<std::string> CheckSchema(const TraceEvent& event);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_TRACE_EVENT_H_
