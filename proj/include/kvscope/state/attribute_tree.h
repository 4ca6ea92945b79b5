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

#ifndef INCLUDE_KVSCOPE_STATE_ATTRIBUTE_TREE_H_
#define INCLUDE_KVSCOPE_STATE_ATTRIBUTE_TREE_H_

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "absl/container/flat_hash_map.h"
#include "absl/container/flat_hash_set.h"
#include "kvscope/sht/history_tree.h"

namespace kvscope {

// Path <-> quark namespace. Quarks are dense and never reused.
//
// Only live attributes are indexed in memory. Retire() drops a finished
// subtree from the index (its quarks stay valid in the history, and its path
// records stay in the path table), which keeps memory flat on traces with
// millions of short-lived requests. Path records are buffered and, when a
// spill file is configured, streamed to disk.
class AttributeTree {
 public:
  explicit AttributeTree(bool enforce_schema = true,
                         std::string spill_path = "");
  ~AttributeTree();

  AttributeTree(const AttributeTree&) = delete;
  AttributeTree& operator=(const AttributeTree&) = delete;

  // Throws UnknownPath when missing and !create, SchemaViolation for paths
  // outside the model, RetiredPath when the path was retired.
  Quark GetQuark(std::string_view path, bool create = true);
  std::optional<Quark> Find(std::string_view path) const;
  // Path of a live quark.
  const std::string& PathOf(Quark quark) const;
  bool IsLive(Quark quark) const { return live_.contains(quark); }
  std::vector<Quark> LiveSubtree(Quark root) const;

  void Retire(Quark root);

  uint32_t size() const { return next_quark_; }
  size_t live_count() const { return live_.size(); }

  // Hands the accumulated path records to the history writer. The tree must
  // not grow afterwards.
  PathTableSource OpenPathTable();

 private:
  struct Node {
    std::string path;
    Quark parent;
    std::vector<Quark> children;
  };

  Quark Create(std::string_view path, Quark parent, std::string_view name);
  void FlushRecords();

  bool enforce_schema_;
  std::string spill_path_;
  std::ofstream spill_;
  std::string records_;
  uint64_t record_bytes_ = 0;
  std::unique_ptr<std::istream> table_;
  uint32_t next_quark_ = 0;
  absl::flat_hash_map<std::string, Quark> by_path_;
  absl::flat_hash_map<Quark, Node> live_;
  absl::flat_hash_set<uint64_t> retired_;
};

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_STATE_ATTRIBUTE_TREE_H_
