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

#ifndef INCLUDE_KVSCOPE_SHT_HISTORY_TREE_H_
#define INCLUDE_KVSCOPE_SHT_HISTORY_TREE_H_

#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "absl/container/flat_hash_map.h"
#include "kvscope/sht/state_value.h"

namespace kvscope {

// Disk-backed State History Tree.
//
// Intervals arrive sorted by end time and are appended to the deepest node
// of the rightmost branch whose start does not exceed the interval start.
// Leaves seal when their block is full; an interior node seals only together
// with its last child once it holds `fanout` children, so every sealed
// subtree is complete and depth stays at ceil(log_fanout(leaves)) + 1.
// Interior nodes that run out of block space continue into further blocks
// chained backwards from the node's head block. See docs/sht-format.md for
// the byte layout.

struct HistoryTreeConfig {
  uint32_t fanout = 50;
  uint32_t block_size = 64 * 1024;
};

inline constexpr uint32_t kShtVersion = 1;
inline constexpr uint32_t kShtHeaderSize = 4096;
inline constexpr uint32_t kNoParentQuark = 0xFFFFFFFFu;

// Path-table record: u32 parent quark (kNoParentQuark for top level),
// u16 name length, name bytes.
void AppendPathRecord(uint32_t parent, std::string_view name,
                      std::string* out);

struct PathTableSource {
  uint64_t quark_count = 0;
  uint64_t byte_size = 0;
  std::istream* records = nullptr;  // byte_size bytes of path records
};

class HistoryTreeWriter {
 public:
  HistoryTreeWriter(const std::string& path, Timestamp start_time,
                    HistoryTreeConfig config = {});
  ~HistoryTreeWriter();

  HistoryTreeWriter(const HistoryTreeWriter&) = delete;
  HistoryTreeWriter& operator=(const HistoryTreeWriter&) = delete;

  void Insert(const StateInterval& interval);

  // Seals every open node at `end_time` and writes the header. Further calls
  // are no-ops.
  void Close(Timestamp end_time, const PathTableSource& paths = {});

  bool closed() const { return closed_; }
  Timestamp start_time() const { return start_time_; }
  Timestamp last_end() const { return last_end_; }
  uint64_t interval_count() const { return interval_count_; }
  uint32_t depth() const {
    return closed_ ? final_depth_ : static_cast<uint32_t>(branch_.size());
  }
  uint64_t leaf_count() const { return leaf_count_; }
  uint64_t node_count() const { return next_node_id_; }

 private:
  struct Record {
    Timestamp start;
    Timestamp end;
    Quark quark;
    StateValue::Type type;
    uint64_t payload;  // int/float bits or string index
  };

  struct PendingBlock {
    std::vector<Record> records;
    std::vector<std::string> strings;
    absl::flat_hash_map<std::string, uint32_t> dictionary;
    uint64_t used = 0;  // encoded bytes past the block header
    Timestamp min_start = 0;
    Timestamp max_end = 0;
  };

  struct OpenNode {
    uint64_t id = 0;
    Timestamp start = 0;
    int64_t parent_id = -1;
    std::vector<std::pair<uint64_t, Timestamp>> children;
    PendingBlock block;
    int64_t prev_block = -1;
  };

  uint64_t BlockHeaderSize() const;
  uint64_t EncodedSize(const PendingBlock& block,
                       const StateInterval& interval) const;
  bool Fits(const PendingBlock& block, const StateInterval& interval) const;
  void Append(PendingBlock& block, const StateInterval& interval);
  uint64_t WriteBlock(const OpenNode& node, bool head, Timestamp node_end);
  OpenNode MakeNode(Timestamp start, int64_t parent_id);
  void AddSibling(size_t level, Timestamp t);
  void SealFrom(size_t level, Timestamp t);
  void GrowDownFrom(size_t level, Timestamp t);

  std::string path_;
  std::ofstream out_;
  HistoryTreeConfig config_;
  Timestamp start_time_;
  Timestamp last_end_;
  bool closed_ = false;
  std::vector<OpenNode> branch_;  // [0] is the root, back() the leaf
  std::vector<uint64_t> node_heads_;
  uint64_t next_node_id_ = 0;
  uint64_t next_block_ = 0;
  uint64_t leaf_count_ = 1;
  uint64_t interval_count_ = 0;
  Quark max_quark_ = 0;
  bool any_quark_ = false;
  uint32_t final_depth_ = 0;
  std::string scratch_;
};

struct QueryStats {
  uint64_t nodes_visited = 0;
  uint64_t blocks_read = 0;
};

// Read side; safe to share between threads (calls serialize on an internal
// mutex). Independent handles on the same file do not contend.
class HistoryTreeReader {
 public:
  explicit HistoryTreeReader(const std::string& path);

  Timestamp start_time() const { return start_time_; }
  Timestamp end_time() const { return end_time_; }
  uint32_t fanout() const { return fanout_; }
  uint32_t block_size() const { return block_size_; }
  uint64_t node_count() const { return node_count_; }
  uint64_t quark_count() const { return quark_count_; }
  uint32_t depth() const { return depth_; }
  uint64_t leaf_count() const { return leaf_count_; }

  // Full attribute paths indexed by quark (empty strings when the file was
  // written without a path table).
  const std::vector<std::string>& paths() const { return paths_; }
  std::optional<Quark> FindQuark(std::string_view path) const;

  std::vector<StateValue> QueryFull(Timestamp t);
  StateValue QuerySingle(Quark quark, Timestamp t);
  std::vector<StateInterval> QueryRange(Quark quark, Timestamp t0,
                                        Timestamp t1);

  QueryStats last_query_stats() const;

  // Walks every node checking the structural invariants (child ranges nested
  // in parents, intervals inside their node). Returns the first violation.
  std::optional<std::string> CheckStructure();

 private:
  struct ChildRef {
    uint64_t id;
    Timestamp start;
  };
  struct RawRecord {
    Timestamp start;
    Timestamp end;
    Quark quark;
    StateValue::Type type;
    uint64_t payload;
  };
  struct Block {
    uint8_t kind = 0;
    uint64_t node_id = 0;
    int64_t prev_block = -1;
    Timestamp min_start = 0;
    Timestamp max_end = 0;
    Timestamp node_start = 0;
    Timestamp node_end = 0;
    int64_t parent_id = -1;
    std::vector<ChildRef> children;
    std::vector<RawRecord> records;
    std::vector<std::string> strings;
  };

  std::shared_ptr<const Block> LoadBlock(uint64_t index);
  std::shared_ptr<const Block> LoadNode(uint64_t node_id);
  StateValue Decode(const Block& block, const RawRecord& record) const;
  void CheckTime(Timestamp t) const;
  template <typename Fn>
  void ScanNodeBlocks(uint64_t node_id, Timestamp min_end,
                      Timestamp max_start, Fn&& fn);
  void CollectRange(uint64_t node_id, Timestamp node_end, Quark quark,
                    Timestamp t0, Timestamp t1,
                    std::vector<StateInterval>* out);

  std::string path_;
  std::ifstream in_;
  mutable std::mutex mutex_;
  uint32_t fanout_ = 0;
  uint32_t block_size_ = 0;
  uint64_t root_id_ = 0;
  Timestamp start_time_ = 0;
  Timestamp end_time_ = 0;
  uint64_t node_count_ = 0;
  uint64_t block_count_ = 0;
  uint64_t quark_count_ = 0;
  uint32_t depth_ = 0;
  uint64_t leaf_count_ = 0;
  std::vector<uint64_t> node_heads_;
  std::vector<std::string> paths_;
  std::unordered_map<std::string, Quark> quark_by_path_;
  std::unordered_map<uint64_t, std::shared_ptr<const Block>> cache_;
  QueryStats stats_;
  std::vector<char> io_buffer_;
};

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_SHT_HISTORY_TREE_H_
