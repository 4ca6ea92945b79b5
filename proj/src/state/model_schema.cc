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

#include "kvscope/state/model_schema.h"

#include <algorithm>
#include <cctype>

namespace kvscope {
namespace {

bool IsDigits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c));
  });
}

bool IsConnectionKey(std::string_view s) {
  size_t hash = s.find('#');
  if (hash == std::string_view::npos)
    return false;
  std::string_view fd = s.substr(0, hash);
  if (!fd.empty() && fd[0] == '-')
    fd.remove_prefix(1);
  return IsDigits(fd) && IsDigits(s.substr(hash + 1));
}

bool IsThreadKey(std::string_view s) {
  size_t at = s.find('@');
  std::string_view tid = s.substr(0, at);
  if (!IsDigits(tid))
    return false;
  return at == std::string_view::npos || at + 1 < s.size();
}

bool OneOf(std::string_view s, std::initializer_list<std::string_view> set) {
  return std::find(set.begin(), set.end(), s) != set.end();
}

}  // namespace

bool IsSchemaPath(std::span<const std::string_view> seg) {
  using namespace schema;
  if (seg.empty())
    return false;
  for (std::string_view s : seg) {
    if (s.empty())
      return false;
  }
  std::string_view root = seg[0];
  size_t n = seg.size();
  if (root == kBus)
    return n == 1 || (n == 2 && OneOf(seg[1], {kVolume, kType}));
  if (n > 3)
    return false;
  if (root == kConnections) {
    return n == 1 || (IsConnectionKey(seg[1]) &&
                      (n == 2 || OneOf(seg[2], {kMemory, kType, kDataStructure,
                                                kObjects})));
  }
  if (root == kRequests) {
    return n < 3 || OneOf(seg[2], {kDataStructure, kType, kConnection});
  }
  if (root == kThreads) {
    return n == 1 || (IsThreadKey(seg[1]) &&
                      (n == 2 || OneOf(seg[2], {kRequest, kOperation})));
  }
  if (root == kEventLoop)
    return n < 3 || OneOf(seg[2], {kPhase, kQueueLength});
  return false;
}

std::string ConnectionKey(int64_t fd, int64_t gen) {
  return std::to_string(fd) + "#" + std::to_string(gen);
}

namespace {
std::string Join3(std::string_view a, std::string_view b, std::string_view c) {
  std::string out;
  out.reserve(a.size() + b.size() + c.size() + 2);
  out.append(a).append("/").append(b).append("/").append(c);
  return out;
}
}  // namespace

std::string ConnectionAttr(std::string_view key, std::string_view attr) {
  return Join3(schema::kConnections, key, attr);
}

std::string RequestAttr(std::string_view req_id, std::string_view attr) {
  return Join3(schema::kRequests, req_id, attr);
}

std::string ThreadAttr(std::string_view thread_key, std::string_view attr) {
  return Join3(schema::kThreads, thread_key, attr);
}

std::string EventLoopAttr(std::string_view host, std::string_view attr) {
  return Join3(schema::kEventLoop, host, attr);
}

std::string BusAttr(std::string_view attr) {
  return std::string(schema::kBus) + "/" + std::string(attr);
}

}  // namespace kvscope
