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

#include "kvscope/sht/history_tree.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <functional>
#include <limits>

#include "kvscope/base/error.h"

namespace kvscope {
namespace {

constexpr char kMagic[4] = {'S', 'H', 'T', '1'};
constexpr uint8_t kHeadBlock = 1;
constexpr uint8_t kContinuationBlock = 2;
constexpr uint64_t kBlockFixedHeader = 80;
constexpr uint64_t kChildEntrySize = 16;
constexpr uint64_t kRecordSize = 29;
constexpr size_t kBlockCacheLimit = 256;

// Little-endian fixed-width encoding, independent of host byte order.
void PutLe(char* dst, uint64_t value, int bytes) {
  for (int i = 0; i < bytes; ++i)
    dst[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
}

uint64_t GetLe(const char* src, int bytes) {
  uint64_t value = 0;
  for (int i = 0; i < bytes; ++i)
    value |= static_cast<uint64_t>(static_cast<unsigned char>(src[i]))
             << (8 * i);
  return value;
}

int64_t GetI64(const char* src) {
  return static_cast<int64_t>(GetLe(src, 8));
}

void AppendLe(std::string* out, uint64_t value, int bytes) {
  char buf[8];
  PutLe(buf, value, bytes);
  out->append(buf, static_cast<size_t>(bytes));
}

uint64_t PayloadOf(const StateValue& value) {
  switch (value.type()) {
    case StateValue::Type::kInt:
      return static_cast<uint64_t>(value.as_int());
    case StateValue::Type::kFloat:
      return std::bit_cast<uint64_t>(value.as_float());
    case StateValue::Type::kNull:
    case StateValue::Type::kStr:
      break;
  }
  return 0;
}

}  // namespace

void AppendPathRecord(uint32_t parent, std::string_view name,
                      std::string* out) {
  if (name.size() > 0xFFFF)
    throw Error(ErrorCode::kInvalidArgument, "attribute name too long");
  AppendLe(out, parent, 4);
  AppendLe(out, name.size(), 2);
  out->append(name);
}

// ---------------------------------------------------------------------------
// Writer

HistoryTreeWriter::HistoryTreeWriter(const std::string& path,
                                     Timestamp start_time,
                                     HistoryTreeConfig config)
    : path_(path),
      config_(config),
      start_time_(start_time),
      last_end_(start_time) {
  if (config_.fanout < 2)
    throw Error(ErrorCode::kInvalidArgument, "fanout must be >= 2");
  if (BlockHeaderSize() + kRecordSize + 4 + kMaxStateStringBytes >
      config_.block_size) {
    throw Error(ErrorCode::kInvalidArgument,
                "block size too small for fanout and string bound");
  }
  out_.open(path, std::ios::binary | std::ios::trunc | std::ios::out);
  if (!out_)
    throw DataError(ErrorCode::kIoFailure, path, 0, "cannot create");
  std::string header(kShtHeaderSize, '\0');
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
  branch_.push_back(MakeNode(start_time_, -1));
}

HistoryTreeWriter::~HistoryTreeWriter() = default;

uint64_t HistoryTreeWriter::BlockHeaderSize() const {
  return kBlockFixedHeader + kChildEntrySize * config_.fanout;
}

uint64_t HistoryTreeWriter::EncodedSize(const PendingBlock& block,
                                        const StateInterval& interval) const {
  uint64_t size = kRecordSize;
  if (interval.value.type() == StateValue::Type::kStr &&
      !block.dictionary.contains(interval.value.as_str())) {
    size += 4 + interval.value.as_str().size();
  }
  return size;
}

bool HistoryTreeWriter::Fits(const PendingBlock& block,
                             const StateInterval& interval) const {
  return BlockHeaderSize() + block.used + EncodedSize(block, interval) <=
         config_.block_size;
}

void HistoryTreeWriter::Append(PendingBlock& block,
                               const StateInterval& interval) {
  block.used += EncodedSize(block, interval);
  Record record{interval.start, interval.end, interval.quark,
                interval.value.type(), PayloadOf(interval.value)};
  if (interval.value.type() == StateValue::Type::kStr) {
    auto [it, inserted] = block.dictionary.try_emplace(
        interval.value.as_str(), static_cast<uint32_t>(block.strings.size()));
    if (inserted)
      block.strings.push_back(interval.value.as_str());
    record.payload = it->second;
  }
  if (block.records.empty()) {
    block.min_start = interval.start;
    block.max_end = interval.end;
  } else {
    block.min_start = std::min(block.min_start, interval.start);
    block.max_end = std::max(block.max_end, interval.end);
  }
  block.records.push_back(record);
}

HistoryTreeWriter::OpenNode HistoryTreeWriter::MakeNode(Timestamp start,
                                                        int64_t parent_id) {
  OpenNode node;
  node.id = next_node_id_++;
  node.start = start;
  node.parent_id = parent_id;
  node_heads_.push_back(0);
  return node;
}

uint64_t HistoryTreeWriter::WriteBlock(const OpenNode& node, bool head,
                                       Timestamp node_end) {
  const PendingBlock& block = node.block;
  scratch_.assign(config_.block_size, '\0');
  char* p = scratch_.data();
  p[0] = static_cast<char>(head ? kHeadBlock : kContinuationBlock);
  PutLe(p + 4, block.records.size(), 4);
  PutLe(p + 8, node.id, 8);
  PutLe(p + 16, static_cast<uint64_t>(node.prev_block), 8);
  PutLe(p + 24, static_cast<uint64_t>(block.min_start), 8);
  PutLe(p + 32, static_cast<uint64_t>(block.max_end), 8);
  PutLe(p + 40, static_cast<uint64_t>(node.start), 8);
  PutLe(p + 48, static_cast<uint64_t>(head ? node_end : 0), 8);
  PutLe(p + 56, static_cast<uint64_t>(node.parent_id), 8);
  const auto& children = head ? node.children
                              : std::vector<std::pair<uint64_t, Timestamp>>{};
  PutLe(p + 64, children.size(), 4);
  PutLe(p + 68, block.strings.size(), 4);
  uint64_t string_bytes = 0;
  for (const std::string& s : block.strings)
    string_bytes += 4 + s.size();
  PutLe(p + 72, string_bytes, 4);

  char* c = p + kBlockFixedHeader;
  for (const auto& [id, start] : children) {
    PutLe(c, id, 8);
    PutLe(c + 8, static_cast<uint64_t>(start), 8);
    c += kChildEntrySize;
  }

  char* r = p + BlockHeaderSize();
  for (const Record& rec : block.records) {
    PutLe(r, static_cast<uint64_t>(rec.start), 8);
    PutLe(r + 8, static_cast<uint64_t>(rec.end), 8);
    PutLe(r + 16, rec.quark, 4);
    r[20] = static_cast<char>(rec.type);
    PutLe(r + 21, rec.payload, 8);
    r += kRecordSize;
  }
  for (const std::string& s : block.strings) {
    PutLe(r, s.size(), 4);
    std::memcpy(r + 4, s.data(), s.size());
    r += 4 + s.size();
  }
  if (static_cast<uint64_t>(r - p) > config_.block_size) {
    throw Error(ErrorCode::kNodeOverflowBug,
                "block of node " + std::to_string(node.id) + " overflowed");
  }

  uint64_t index = next_block_++;
  out_.write(scratch_.data(), static_cast<std::streamsize>(scratch_.size()));
  if (!out_)
    throw DataError(ErrorCode::kIoFailure, path_, 0, "block write failed");
  if (head)
    node_heads_[node.id] = index;
  return index;
}

void HistoryTreeWriter::SealFrom(size_t level, Timestamp t) {
  while (branch_.size() > level) {
    WriteBlock(branch_.back(), /*head=*/true, t);
    branch_.pop_back();
  }
}

void HistoryTreeWriter::GrowDownFrom(size_t height, Timestamp t) {
  while (branch_.size() < height) {
    OpenNode child = MakeNode(t, static_cast<int64_t>(branch_.back().id));
    branch_.back().children.emplace_back(child.id, t);
    branch_.push_back(std::move(child));
    if (branch_.size() == height)
      ++leaf_count_;
  }
}

void HistoryTreeWriter::AddSibling(size_t level, Timestamp t) {
  size_t height = branch_.size();
  if (level == 0) {
    OpenNode root = MakeNode(start_time_, -1);
    uint64_t old_root = branch_[0].id;
    branch_[0].parent_id = static_cast<int64_t>(root.id);
    SealFrom(0, t);
    root.children.emplace_back(old_root, start_time_);
    branch_.push_back(std::move(root));
    GrowDownFrom(height + 1, t);
    return;
  }
  if (branch_[level - 1].children.size() < config_.fanout) {
    SealFrom(level, t);
    GrowDownFrom(height, t);
    return;
  }
  AddSibling(level - 1, t);
}

void HistoryTreeWriter::Insert(const StateInterval& interval) {
  if (closed_)
    throw Error(ErrorCode::kInvalidArgument, "history tree already closed");
  if (interval.start > interval.end)
    throw Error(ErrorCode::kInvalidArgument, "interval start after end");
  if (interval.end < last_end_) {
    throw Error(ErrorCode::kOutOfOrderEnd,
                "end " + std::to_string(interval.end) + " < previous end " +
                    std::to_string(last_end_));
  }
  if (interval.start < start_time_) {
    throw Error(ErrorCode::kTimeOutOfRange,
                "interval starts before tree start " +
                    std::to_string(start_time_));
  }
  if (interval.value.type() == StateValue::Type::kStr &&
      interval.value.as_str().size() > kMaxStateStringBytes) {
    throw Error(ErrorCode::kInvalidArgument, "string state exceeds 4096 bytes");
  }
  last_end_ = interval.end;
  ++interval_count_;
  max_quark_ = any_quark_ ? std::max(max_quark_, interval.quark)
                          : interval.quark;
  any_quark_ = true;

  for (;;) {
    size_t level = branch_.size() - 1;
    while (level > 0 && branch_[level].start > interval.start)
      --level;
    OpenNode& node = branch_[level];
    if (Fits(node.block, interval)) {
      Append(node.block, interval);
      return;
    }
    if (node.block.records.empty() && node.prev_block < 0) {
      throw Error(ErrorCode::kNodeOverflowBug,
                  "interval does not fit an empty node");
    }
    if (level + 1 == branch_.size()) {
      AddSibling(level, interval.end);
      continue;
    }
    node.prev_block = static_cast<int64_t>(
        WriteBlock(node, /*head=*/false, 0));
    node.block = PendingBlock{};
  }
}

void HistoryTreeWriter::Close(Timestamp end_time,
                              const PathTableSource& paths) {
  if (closed_)
    return;
  if (end_time < last_end_) {
    throw Error(ErrorCode::kOutOfOrderEnd,
                "close time " + std::to_string(end_time) +
                    " precedes last interval end " +
                    std::to_string(last_end_));
  }
  uint64_t root_id = branch_[0].id;
  uint64_t depth = branch_.size();
  SealFrom(0, end_time);
  branch_.clear();

  uint64_t quark_count = paths.quark_count;
  if (any_quark_)
    quark_count = std::max<uint64_t>(quark_count, uint64_t{max_quark_} + 1);

  uint64_t path_offset =
      kShtHeaderSize + next_block_ * uint64_t{config_.block_size};
  if (paths.records && paths.byte_size > 0) {
    std::vector<char> buf(64 * 1024);
    uint64_t remaining = paths.byte_size;
    while (remaining > 0) {
      auto chunk = static_cast<std::streamsize>(
          std::min<uint64_t>(remaining, buf.size()));
      paths.records->read(buf.data(), chunk);
      if (paths.records->gcount() != chunk)
        throw Error(ErrorCode::kIoFailure, "short read on path table");
      out_.write(buf.data(), chunk);
      remaining -= static_cast<uint64_t>(chunk);
    }
  }
  uint64_t node_offset = path_offset + paths.byte_size;
  std::string table;
  for (uint64_t head : node_heads_)
    AppendLe(&table, head, 8);
  out_.write(table.data(), static_cast<std::streamsize>(table.size()));

  std::string header(kShtHeaderSize, '\0');
  char* h = header.data();
  std::memcpy(h, kMagic, 4);
  PutLe(h + 4, kShtVersion, 4);
  PutLe(h + 8, config_.fanout, 4);
  PutLe(h + 12, config_.block_size, 4);
  PutLe(h + 16, root_id, 8);
  PutLe(h + 24, static_cast<uint64_t>(start_time_), 8);
  PutLe(h + 32, static_cast<uint64_t>(end_time), 8);
  PutLe(h + 40, next_node_id_, 8);
  PutLe(h + 48, next_block_, 8);
  PutLe(h + 56, quark_count, 8);
  PutLe(h + 64, path_offset, 8);
  PutLe(h + 72, paths.byte_size, 8);
  PutLe(h + 80, node_offset, 8);
  PutLe(h + 88, depth, 8);
  PutLe(h + 96, leaf_count_, 8);
  out_.seekp(0);
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
  out_.close();
  if (out_.fail())
    throw DataError(ErrorCode::kIoFailure, path_, 0, "finalize failed");
  last_end_ = end_time;
  final_depth_ = static_cast<uint32_t>(depth);
  closed_ = true;
}

// ---------------------------------------------------------------------------
// Reader

HistoryTreeReader::HistoryTreeReader(const std::string& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_)
    throw DataError(ErrorCode::kIoFailure, path, 0, "cannot open");
  std::string header(kShtHeaderSize, '\0');
  in_.read(header.data(), kShtHeaderSize);
  if (in_.gcount() != kShtHeaderSize)
    throw DataError(ErrorCode::kBadFormat, path, 0, "truncated header");
  const char* h = header.data();
  if (std::memcmp(h, kMagic, 4) != 0)
    throw DataError(ErrorCode::kBadFormat, path, 0, "bad magic");
  if (GetLe(h + 4, 4) != kShtVersion)
    throw DataError(ErrorCode::kBadFormat, path, 0, "unsupported version");
  fanout_ = static_cast<uint32_t>(GetLe(h + 8, 4));
  block_size_ = static_cast<uint32_t>(GetLe(h + 12, 4));
  root_id_ = GetLe(h + 16, 8);
  start_time_ = GetI64(h + 24);
  end_time_ = GetI64(h + 32);
  node_count_ = GetLe(h + 40, 8);
  block_count_ = GetLe(h + 48, 8);
  quark_count_ = GetLe(h + 56, 8);
  uint64_t path_offset = GetLe(h + 64, 8);
  uint64_t path_bytes = GetLe(h + 72, 8);
  uint64_t node_offset = GetLe(h + 80, 8);
  depth_ = static_cast<uint32_t>(GetLe(h + 88, 8));
  leaf_count_ = GetLe(h + 96, 8);
  if (fanout_ < 2 || block_size_ < kBlockFixedHeader + 16 * fanout_ ||
      root_id_ >= node_count_) {
    throw DataError(ErrorCode::kBadFormat, path, 0, "inconsistent header");
  }

  std::string table(node_count_ * 8, '\0');
  in_.seekg(static_cast<std::streamoff>(node_offset));
  in_.read(table.data(), static_cast<std::streamsize>(table.size()));
  if (static_cast<uint64_t>(in_.gcount()) != table.size())
    throw DataError(ErrorCode::kBadFormat, path, 0, "truncated node table");
  node_heads_.resize(node_count_);
  for (uint64_t i = 0; i < node_count_; ++i) {
    node_heads_[i] = GetLe(table.data() + 8 * i, 8);
    if (node_heads_[i] >= block_count_)
      throw DataError(ErrorCode::kBadFormat, path, 0, "bad node table entry");
  }

  paths_.assign(quark_count_, std::string());
  if (path_bytes > 0) {
    std::string raw(path_bytes, '\0');
    in_.seekg(static_cast<std::streamoff>(path_offset));
    in_.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<uint64_t>(in_.gcount()) != raw.size())
      throw DataError(ErrorCode::kBadFormat, path, 0, "truncated path table");
    size_t pos = 0;
    for (uint64_t q = 0; q < quark_count_ && pos < raw.size(); ++q) {
      if (pos + 6 > raw.size())
        throw DataError(ErrorCode::kBadFormat, path, 0, "bad path record");
      auto parent = static_cast<uint32_t>(GetLe(raw.data() + pos, 4));
      auto len = static_cast<size_t>(GetLe(raw.data() + pos + 4, 2));
      pos += 6;
      if (pos + len > raw.size())
        throw DataError(ErrorCode::kBadFormat, path, 0, "bad path record");
      std::string name = raw.substr(pos, len);
      pos += len;
      if (parent == kNoParentQuark) {
        paths_[q] = std::move(name);
      } else if (parent < q) {
        paths_[q] = paths_[parent] + "/" + name;
      } else {
        throw DataError(ErrorCode::kBadFormat, path, 0,
                        "path record references a later parent");
      }
      quark_by_path_.emplace(paths_[q], static_cast<Quark>(q));
    }
  }
  io_buffer_.resize(block_size_);
}

std::optional<Quark> HistoryTreeReader::FindQuark(std::string_view path) const {
  auto it = quark_by_path_.find(std::string(path));
  if (it == quark_by_path_.end())
    return std::nullopt;
  return it->second;
}

QueryStats HistoryTreeReader::last_query_stats() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return stats_;
}

std::shared_ptr<const HistoryTreeReader::Block> HistoryTreeReader::LoadBlock(
    uint64_t index) {
  ++stats_.blocks_read;
  auto it = cache_.find(index);
  if (it != cache_.end())
    return it->second;
  if (index >= block_count_)
    throw DataError(ErrorCode::kBadFormat, path_, 0, "block out of range");

  in_.clear();
  in_.seekg(static_cast<std::streamoff>(kShtHeaderSize +
                                        index * uint64_t{block_size_}));
  in_.read(io_buffer_.data(), block_size_);
  if (in_.gcount() != static_cast<std::streamsize>(block_size_))
    throw DataError(ErrorCode::kIoFailure, path_, 0, "short block read");
  const char* p = io_buffer_.data();

  auto block = std::make_shared<Block>();
  block->kind = static_cast<uint8_t>(p[0]);
  auto record_count = GetLe(p + 4, 4);
  block->node_id = GetLe(p + 8, 8);
  block->prev_block = GetI64(p + 16);
  block->min_start = GetI64(p + 24);
  block->max_end = GetI64(p + 32);
  block->node_start = GetI64(p + 40);
  block->node_end = GetI64(p + 48);
  block->parent_id = GetI64(p + 56);
  auto child_count = GetLe(p + 64, 4);
  auto string_count = GetLe(p + 68, 4);
  uint64_t records_at = kBlockFixedHeader + kChildEntrySize * fanout_;
  if (child_count > fanout_ ||
      records_at + record_count * kRecordSize > block_size_) {
    throw DataError(ErrorCode::kBadFormat, path_, 0,
                    "corrupt block " + std::to_string(index));
  }
  block->children.reserve(child_count);
  for (uint64_t i = 0; i < child_count; ++i) {
    const char* c = p + kBlockFixedHeader + i * kChildEntrySize;
    block->children.push_back(ChildRef{GetLe(c, 8), GetI64(c + 8)});
  }
  const char* r = p + records_at;
  block->records.reserve(record_count);
  for (uint64_t i = 0; i < record_count; ++i) {
    block->records.push_back(RawRecord{
        GetI64(r), GetI64(r + 8), static_cast<Quark>(GetLe(r + 16, 4)),
        static_cast<StateValue::Type>(r[20]), GetLe(r + 21, 8)});
    r += kRecordSize;
  }
  const char* end = p + block_size_;
  block->strings.reserve(string_count);
  for (uint64_t i = 0; i < string_count; ++i) {
    if (r + 4 > end)
      throw DataError(ErrorCode::kBadFormat, path_, 0, "corrupt strings");
    auto len = GetLe(r, 4);
    if (r + 4 + len > end)
      throw DataError(ErrorCode::kBadFormat, path_, 0, "corrupt strings");
    block->strings.emplace_back(r + 4, len);
    r += 4 + len;
  }

  if (cache_.size() >= kBlockCacheLimit)
    cache_.clear();
  cache_.emplace(index, block);
  return block;
}

std::shared_ptr<const HistoryTreeReader::Block> HistoryTreeReader::LoadNode(
    uint64_t node_id) {
  if (node_id >= node_count_)
    throw DataError(ErrorCode::kBadFormat, path_, 0, "node id out of range");
  return LoadBlock(node_heads_[node_id]);
}

StateValue HistoryTreeReader::Decode(const Block& block,
                                     const RawRecord& record) const {
  switch (record.type) {
    case StateValue::Type::kNull:
      return StateValue::Null();
    case StateValue::Type::kInt:
      return StateValue::Int(static_cast<int64_t>(record.payload));
    case StateValue::Type::kFloat:
      return StateValue::Float(std::bit_cast<double>(record.payload));
    case StateValue::Type::kStr:
      if (record.payload >= block.strings.size())
        throw DataError(ErrorCode::kBadFormat, path_, 0, "bad string index");
      return StateValue::Str(block.strings[record.payload]);
  }
  throw DataError(ErrorCode::kBadFormat, path_, 0, "bad value type");
}

void HistoryTreeReader::CheckTime(Timestamp t) const {
  if (t < start_time_ || t > end_time_) {
    throw Error(ErrorCode::kTimeOutOfRange,
                std::to_string(t) + " outside [" +
                    std::to_string(start_time_) + ", " +
                    std::to_string(end_time_) + "]");
  }
}

// Visits every record of a node that may end at or after `min_end` and starts
// no later than `max_start`. Blocks of one node are chained newest-first and
// their end times never decrease along the write order, so the walk stops at
// the first block ending before `min_end`.
template <typename Fn>
void HistoryTreeReader::ScanNodeBlocks(uint64_t node_id, Timestamp min_end,
                                       Timestamp max_start, Fn&& fn) {
  std::shared_ptr<const Block> block = LoadNode(node_id);
  for (;;) {
    if (!block->records.empty()) {
      if (block->max_end < min_end)
        break;
      if (block->min_start <= max_start) {
        for (const RawRecord& rec : block->records)
          fn(*block, rec);
      }
    }
    if (block->prev_block < 0)
      break;
    block = LoadBlock(static_cast<uint64_t>(block->prev_block));
  }
}

std::vector<StateValue> HistoryTreeReader::QueryFull(Timestamp t) {
  std::lock_guard<std::mutex> lock(mutex_);
  stats_ = {};
  CheckTime(t);
  std::vector<StateValue> result(quark_count_);
  uint64_t node = root_id_;
  for (;;) {
    ++stats_.nodes_visited;
    ScanNodeBlocks(node, t + 1, t, [&](const Block& b, const RawRecord& r) {
      if (r.start <= t && t < r.end && r.quark < result.size())
        result[r.quark] = Decode(b, r);
    });
    std::shared_ptr<const Block> head = LoadNode(node);
    if (head->children.empty())
      break;
    auto it = std::upper_bound(
        head->children.begin(), head->children.end(), t,
        [](Timestamp value, const ChildRef& c) { return value < c.start; });
    if (it == head->children.begin())
      break;
    node = std::prev(it)->id;
  }
  return result;
}

StateValue HistoryTreeReader::QuerySingle(Quark quark, Timestamp t) {
  std::lock_guard<std::mutex> lock(mutex_);
  stats_ = {};
  if (quark >= quark_count_)
    throw Error(ErrorCode::kUnknownQuark, std::to_string(quark));
  CheckTime(t);
  StateValue result;
  uint64_t node = root_id_;
  for (;;) {
    ++stats_.nodes_visited;
    bool found = false;
    ScanNodeBlocks(node, t + 1, t, [&](const Block& b, const RawRecord& r) {
      if (!found && r.quark == quark && r.start <= t && t < r.end) {
        result = Decode(b, r);
        found = true;
      }
    });
    if (found)
      break;
    std::shared_ptr<const Block> head = LoadNode(node);
    if (head->children.empty())
      break;
    auto it = std::upper_bound(
        head->children.begin(), head->children.end(), t,
        [](Timestamp value, const ChildRef& c) { return value < c.start; });
    if (it == head->children.begin())
      break;
    node = std::prev(it)->id;
  }
  return result;
}

void HistoryTreeReader::CollectRange(uint64_t node_id, Timestamp node_end,
                                     Quark quark, Timestamp t0, Timestamp t1,
                                     std::vector<StateInterval>* out) {
  ++stats_.nodes_visited;
  ScanNodeBlocks(node_id, t0, t1, [&](const Block& b, const RawRecord& r) {
    if (r.quark != quark)
      return;
    StateInterval iv{r.quark, r.start, r.end, StateValue()};
    if (iv.Intersects(t0, t1)) {
      iv.value = Decode(b, r);
      out->push_back(std::move(iv));
    }
  });
  std::shared_ptr<const Block> head = LoadNode(node_id);
  const auto& children = head->children;
  for (size_t i = 0; i < children.size(); ++i) {
    Timestamp child_end =
        i + 1 < children.size() ? children[i + 1].start : node_end;
    if (children[i].start <= t1 && child_end >= t0)
      CollectRange(children[i].id, child_end, quark, t0, t1, out);
  }
}

std::vector<StateInterval> HistoryTreeReader::QueryRange(Quark quark,
                                                         Timestamp t0,
                                                         Timestamp t1) {
  std::lock_guard<std::mutex> lock(mutex_);
  stats_ = {};
  if (quark >= quark_count_)
    throw Error(ErrorCode::kUnknownQuark, std::to_string(quark));
  if (t0 > t1)
    throw Error(ErrorCode::kInvalidArgument, "range start after end");
  CheckTime(t0);
  CheckTime(t1);
  std::vector<StateInterval> out;
  CollectRange(root_id_, end_time_, quark, t0, t1, &out);
  // Markers sharing a timestamp always land in one leaf in insertion order,
  // so a stable sort keeps them in the order they were written.
  std::stable_sort(out.begin(), out.end(),
            [](const StateInterval& a, const StateInterval& b) {
              return a.start != b.start ? a.start < b.start : a.end < b.end;
            });
  return out;
}

std::optional<std::string> HistoryTreeReader::CheckStructure() {
  std::lock_guard<std::mutex> lock(mutex_);
  std::function<std::optional<std::string>(uint64_t, int64_t, Timestamp,
                                            Timestamp)>
      visit = [&](uint64_t id, int64_t parent, Timestamp lo,
                  Timestamp hi) -> std::optional<std::string> {
    std::shared_ptr<const Block> head = LoadNode(id);
    std::string where = "node " + std::to_string(id);
    if (head->kind != kHeadBlock)
      return where + ": head block has wrong kind";
    if (head->parent_id != parent)
      return where + ": parent id mismatch";
    if (head->node_start < lo || head->node_end > hi ||
        head->node_start > head->node_end)
      return where + ": range not nested in parent";
    std::shared_ptr<const Block> block = head;
    for (;;) {
      for (const RawRecord& r : block->records) {
        if (r.start < head->node_start || r.end > head->node_end ||
            r.start > r.end)
          return where + ": interval outside node range";
      }
      if (block->node_id != id)
        return where + ": block chain crosses nodes";
      if (block->prev_block < 0)
        break;
      block = LoadBlock(static_cast<uint64_t>(block->prev_block));
    }
    const auto& children = head->children;
    for (size_t i = 0; i < children.size(); ++i) {
      if (i > 0 && children[i].start < children[i - 1].start)
        return where + ": children out of order";
      Timestamp child_end =
          i + 1 < children.size() ? children[i + 1].start : head->node_end;
      std::shared_ptr<const Block> child = LoadNode(children[i].id);
      if (child->node_start != children[i].start ||
          child->node_end != child_end)
        return where + ": child range does not match its slot";
      if (auto err = visit(children[i].id, static_cast<int64_t>(id),
                           head->node_start, head->node_end))
        return err;
    }
    return std::nullopt;
  };
  return visit(root_id_, -1, start_time_, end_time_);
}

}  // namespace kvscope
