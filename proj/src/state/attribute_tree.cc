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

#include "kvscope/state/attribute_tree.h"

#include <sstream>

#include "absl/hash/hash.h"
#include "kvscope/base/error.h"
#include "kvscope/state/model_schema.h"

namespace kvscope {
namespace {

constexpr size_t kSpillThreshold = 1 << 20;

// The installed absl predates std::string_view interop in its containers.
absl::string_view Key(std::string_view s) {
  return absl::string_view(s.data(), s.size());
}

uint64_t PathHash(std::string_view path) {
  return absl::Hash<absl::string_view>{}(Key(path));
}

}  // namespace

AttributeTree::AttributeTree(bool enforce_schema, std::string spill_path)
    : enforce_schema_(enforce_schema), spill_path_(std::move(spill_path)) {
  if (!spill_path_.empty()) {
    spill_.open(spill_path_, std::ios::binary | std::ios::trunc);
    if (!spill_)
      throw DataError(ErrorCode::kIoFailure, spill_path_, 0, "cannot create");
  }
}

AttributeTree::~AttributeTree() = default;

std::optional<Quark> AttributeTree::Find(std::string_view path) const {
  auto it = by_path_.find(Key(path));
  if (it == by_path_.end())
    return std::nullopt;
  return it->second;
}

const std::string& AttributeTree::PathOf(Quark quark) const {
  auto it = live_.find(quark);
  if (it == live_.end())
    throw Error(ErrorCode::kUnknownQuark, std::to_string(quark));
  return it->second.path;
}

Quark AttributeTree::GetQuark(std::string_view path, bool create) {
  if (auto it = by_path_.find(Key(path)); it != by_path_.end())
    return it->second;
  if (path.empty())
    throw Error(ErrorCode::kInvalidArgument, "empty attribute path");
  if (!create)
    throw Error(ErrorCode::kUnknownPath, std::string(path));

  std::vector<std::string_view> segments;
  for (size_t pos = 0;;) {
    size_t slash = path.find('/', pos);
    segments.push_back(path.substr(pos, slash - pos));
    if (slash == std::string_view::npos)
      break;
    pos = slash + 1;
  }
  if (enforce_schema_ && !IsSchemaPath(segments))
    throw Error(ErrorCode::kSchemaViolation, std::string(path));
  for (std::string_view s : segments) {
    if (s.empty())
      throw Error(ErrorCode::kInvalidArgument,
                  "empty segment in " + std::string(path));
  }

  // Walk down from the deepest existing ancestor.
  Quark parent = kNoParentQuark;
  size_t prefix_end = 0;
  for (size_t i = 0; i < segments.size(); ++i) {
    prefix_end += segments[i].size() + (i > 0 ? 1 : 0);
    std::string_view prefix = path.substr(0, prefix_end);
    if (auto it = by_path_.find(Key(prefix)); it != by_path_.end()) {
      parent = it->second;
      continue;
    }
    parent = Create(prefix, parent, segments[i]);
  }
  return parent;
}

Quark AttributeTree::Create(std::string_view path, Quark parent,
                            std::string_view name) {
  if (table_)
    throw Error(ErrorCode::kInvalidArgument, "attribute tree is sealed");
  if (!retired_.empty() && retired_.contains(PathHash(path)))
    throw Error(ErrorCode::kRetiredPath, std::string(path));
  Quark quark = next_quark_++;
  by_path_.emplace(std::string(path), quark);
  live_.emplace(quark, Node{std::string(path), parent, {}});
  if (parent != kNoParentQuark)
    live_.at(parent).children.push_back(quark);
  AppendPathRecord(parent, name, &records_);
  if (spill_.is_open() && records_.size() >= kSpillThreshold)
    FlushRecords();
  return quark;
}

void AttributeTree::FlushRecords() {
  record_bytes_ += records_.size();
  if (spill_.is_open()) {
    spill_.write(records_.data(), static_cast<std::streamsize>(records_.size()));
    if (!spill_)
      throw DataError(ErrorCode::kIoFailure, spill_path_, 0, "write failed");
    records_.clear();
  }
}

std::vector<Quark> AttributeTree::LiveSubtree(Quark root) const {
  std::vector<Quark> out;
  if (!live_.contains(root))
    return out;
  out.push_back(root);
  for (size_t i = 0; i < out.size(); ++i) {
    for (Quark child : live_.at(out[i]).children)
      out.push_back(child);
  }
  return out;
}

void AttributeTree::Retire(Quark root) {
  auto it = live_.find(root);
  if (it == live_.end())
    return;
  retired_.insert(PathHash(it->second.path));
  if (it->second.parent != kNoParentQuark) {
    auto& siblings = live_.at(it->second.parent).children;
    siblings.erase(std::find(siblings.begin(), siblings.end(), root));
  }
  for (Quark q : LiveSubtree(root)) {
    auto node = live_.find(q);
    by_path_.erase(node->second.path);
    live_.erase(node);
  }
}

PathTableSource AttributeTree::OpenPathTable() {
  if (!table_) {
    if (spill_.is_open()) {
      FlushRecords();
      spill_.close();
      table_ = std::make_unique<std::ifstream>(spill_path_, std::ios::binary);
      if (!*table_)
        throw DataError(ErrorCode::kIoFailure, spill_path_, 0, "cannot reopen");
    } else {
      record_bytes_ = records_.size();
      table_ = std::make_unique<std::istringstream>(std::move(records_));
      records_.clear();
    }
  }
  return PathTableSource{next_quark_, record_bytes_, table_.get()};
}

}  // namespace kvscope
