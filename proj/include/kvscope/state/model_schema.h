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

#ifndef INCLUDE_KVSCOPE_STATE_MODEL_SCHEMA_H_
#define INCLUDE_KVSCOPE_STATE_MODEL_SCHEMA_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace kvscope {

// Layout of the performance model:
//
//   Connections/<fd>#<gen>/{Memory, Type, DataStructure, Objects}
//   Requests/<req_id>/{DataStructure, Type, Connection}
//   Bus/{Volume, Type}
//   Threads/<tid>[@<host>]/{Request, Operation}
//   EventLoop/<host>/{Phase, QueueLength}
//
// EventLoop is keyed by host because every node of a cluster runs its own
// loop. Thread ids only carry the @<host> suffix when the same tid shows up
// on more than one host.
namespace schema {

inline constexpr std::string_view kConnections = "Connections";
inline constexpr std::string_view kRequests = "Requests";
inline constexpr std::string_view kBus = "Bus";
inline constexpr std::string_view kThreads = "Threads";
inline constexpr std::string_view kEventLoop = "EventLoop";

inline constexpr std::string_view kMemory = "Memory";
inline constexpr std::string_view kType = "Type";
inline constexpr std::string_view kDataStructure = "DataStructure";
inline constexpr std::string_view kObjects = "Objects";
inline constexpr std::string_view kConnection = "Connection";
inline constexpr std::string_view kVolume = "Volume";
inline constexpr std::string_view kRequest = "Request";
inline constexpr std::string_view kOperation = "Operation";
inline constexpr std::string_view kPhase = "Phase";
inline constexpr std::string_view kQueueLength = "QueueLength";

}  // namespace schema

// True when `segments` is a model path or a prefix of one.
bool IsSchemaPath(std::span<const std::string_view> segments);

std::string ConnectionKey(int64_t fd, int64_t gen);
std::string ConnectionAttr(std::string_view key, std::string_view attr);
std::string RequestAttr(std::string_view req_id, std::string_view attr);
std::string ThreadAttr(std::string_view thread_key, std::string_view attr);
std::string EventLoopAttr(std::string_view host, std::string_view attr);
std::string BusAttr(std::string_view attr);

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_STATE_MODEL_SCHEMA_H_
