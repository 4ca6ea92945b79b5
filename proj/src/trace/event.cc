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

#include "kvscope/trace/event.h"

#include <array>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace kvscope {
namespace {

struct VocabularyEntry {
  std::string_view name;
  EventKind kind;
};

constexpr std::array<VocabularyEntry, 18> kVocabulary = {{
    {"start_read_client_query", EventKind::kStartReadClientQuery},
    {"end_read_client_query", EventKind::kEndReadClientQuery},
    {"write_to_client_start", EventKind::kWriteToClientStart},
    {"write_to_client_end", EventKind::kWriteToClientEnd},
    {"ssl_read", EventKind::kSslRead},
    {"free_client", EventKind::kFreeClient},
    {"cluster_read", EventKind::kClusterRead},
    {"cluster_process_packet", EventKind::kClusterProcessPacket},
    {"cluster_send", EventKind::kClusterSend},
    {"call_command_start", EventKind::kCallCommandStart},
    {"call_command_end", EventKind::kCallCommandEnd},
    {"add_file_event", EventKind::kAddFileEvent},
    {"delete_file_event", EventKind::kDeleteFileEvent},
    {"run_pending_reads", EventKind::kRunPendingReads},
    {"http_client_request", EventKind::kHttpClientRequest},
    {"http_server_receive", EventKind::kHttpServerReceive},
    {"http_server_response", EventKind::kHttpServerResponse},
    {"http_client_response", EventKind::kHttpClientResponse},
}};

constexpr AttrSpec kFd[] = {{"fd", ScalarType::kInt}};
constexpr AttrSpec kCommand[] = {{"fd", ScalarType::kInt},
                                 {"command", ScalarType::kString}};
constexpr AttrSpec kSsl[] = {{"fd", ScalarType::kInt},
                             {"bytes_requested", ScalarType::kInt},
                             {"bytes_read", ScalarType::kInt}};
constexpr AttrSpec kClusterSend[] = {{"msg_id", ScalarType::kInt},
                                     {"bytes", ScalarType::kInt},
                                     {"kind", ScalarType::kString}};
constexpr AttrSpec kHttp[] = {
    {"src_addr", ScalarType::kString}, {"dst_addr", ScalarType::kString},
    {"src_port", ScalarType::kInt},    {"dst_port", ScalarType::kInt},
    {"service", ScalarType::kString},  {"fd", ScalarType::kInt}};

const char* TypeName(ScalarType type) {
  switch (type) {
    case ScalarType::kInt:
      return "integer";
    case ScalarType::kFloat:
      return "float";
    case ScalarType::kString:
      return "string";
  }
  return "?";
}

bool HasType(const AttrValue& value, ScalarType type) {
  switch (type) {
    case ScalarType::kInt:
      return std::holds_alternative<int64_t>(value);
    case ScalarType::kFloat:
      return std::holds_alternative<double>(value) ||
             std::holds_alternative<int64_t>(value);
    case ScalarType::kString:
      return std::holds_alternative<std::string>(value);
  }
  return false;
}

}  // namespace

std::string AttrToString(const AttrValue& value) {
  if (const auto* i = std::get_if<int64_t>(&value))
    return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&value))
    return nlohmann::json(*d).dump();
  return std::get<std::string>(value);
}

const AttrValue* TraceEvent::FindAttr(std::string_view key) const {
  auto it = attrs.find(key);
  return it == attrs.end() ? nullptr : &it->second;
}

std::optional<int64_t> TraceEvent::GetInt(std::string_view key) const {
  const AttrValue* v = FindAttr(key);
  if (!v)
    return std::nullopt;
  if (const auto* i = std::get_if<int64_t>(v))
    return *i;
  return std::nullopt;
}

std::optional<std::string_view> TraceEvent::GetString(
    std::string_view key) const {
  const AttrValue* v = FindAttr(key);
  if (!v)
    return std::nullopt;
  if (const auto* s = std::get_if<std::string>(v))
    return std::string_view(*s);
  return std::nullopt;
}

EventKind ClassifyEvent(std::string_view name) {
  name = CanonicalEventName(name);
  for (const auto& entry : kVocabulary) {
    if (entry.name == name)
      return entry.kind;
  }
  return EventKind::kUnknown;
}

std::string_view EventKindName(EventKind kind) {
  for (const auto& entry : kVocabulary) {
    if (entry.kind == kind)
      return entry.name;
  }
  return "unknown";
}

std::string_view CanonicalEventName(std::string_view name) {
  // Older instrumentation spells the end-of-write tracepoint this way.
  if (name == "write_to_end_start")
    return "write_to_client_end";
  return name;
}

std::span<const AttrSpec> RequiredAttrs(EventKind kind) {
  switch (kind) {
    case EventKind::kStartReadClientQuery:
    case EventKind::kEndReadClientQuery:
    case EventKind::kWriteToClientStart:
    case EventKind::kWriteToClientEnd:
    case EventKind::kFreeClient:
    case EventKind::kClusterRead:
    case EventKind::kCallCommandEnd:
      return kFd;
    case EventKind::kCallCommandStart:
      return kCommand;
    case EventKind::kSslRead:
      return kSsl;
    case EventKind::kClusterSend:
      return kClusterSend;
    case EventKind::kHttpClientRequest:
    case EventKind::kHttpServerReceive:
    case EventKind::kHttpServerResponse:
    case EventKind::kHttpClientResponse:
      return kHttp;
    case EventKind::kClusterProcessPacket:
    case EventKind::kAddFileEvent:
    case EventKind::kDeleteFileEvent:
    case EventKind::kRunPendingReads:
    case EventKind::kUnknown:
      break;
  }
  return {};
}

std::optional<std::string> CheckSchema(const TraceEvent& event) {
  EventKind kind = ClassifyEvent(event.name);
  for (const AttrSpec& spec : RequiredAttrs(kind)) {
    const AttrValue* value = event.FindAttr(spec.key);
    if (!value) {
      return event.name + " requires attribute '" + std::string(spec.key) +
             "'";
    }
    if (!HasType(*value, spec.type)) {
      return event.name + " attribute '" + std::string(spec.key) +
             "' must be " + TypeName(spec.type);
    }
  }
  return std::nullopt;
}

}  // namespace kvscope
