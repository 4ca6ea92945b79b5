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

#ifndef INCLUDE_KVSCOPE_STATE_STATE_SYSTEM_H_
#define INCLUDE_KVSCOPE_STATE_STATE_SYSTEM_H_

#include <functional>
#include <string>
#include <string_view>

#include "absl/container/flat_hash_map.h"
#include "kvscope/sht/history_tree.h"
#include "kvscope/state/attribute_tree.h"

namespace kvscope {

struct StateSystemOptions {
  bool enforce_schema = true;
  HistoryTreeConfig tree;
};

// Single-writer front end of the history tree. Each quark holds one ongoing
// state; changing it closes the previous state as an interval. Modifications
// must arrive in non-decreasing time across all quarks, which is what keeps
// the intervals handed to the tree sorted by end time.
class StateSystem {
 public:
  StateSystem(const std::string& sht_path, Timestamp start_time,
              StateSystemOptions options = {});
  ~StateSystem();

  StateSystem(const StateSystem&) = delete;
  StateSystem& operator=(const StateSystem&) = delete;

  AttributeTree& tree() { return tree_; }
  Quark GetQuark(std::string_view path) { return tree_.GetQuark(path); }

  // Same value: no-op. Same timestamp as the ongoing state: the ongoing
  // value is kept as a zero-length marker. Throws TimeRegression when `t`
  // precedes an earlier modification.
  void Modify(Timestamp t, Quark quark, StateValue value);
  void Modify(Timestamp t, std::string_view path, StateValue value) {
    Modify(t, GetQuark(path), std::move(value));
  }

  // Ongoing value, Null when the quark has never been written.
  const StateValue& Current(Quark quark) const;

  // Ends every ongoing state under `root` at `t` and forgets the subtree.
  void Retire(Timestamp t, Quark root);

  // Ends all ongoing states at `t_end` and finalizes the file. Idempotent.
  void CloseAll(Timestamp t_end);

  bool closed() const { return closed_; }
  Timestamp frontier() const { return frontier_; }
  uint64_t intervals_emitted() const { return emitted_; }
  const HistoryTreeWriter& writer() const { return writer_; }

  // Sees every interval just before it reaches the tree. Test hook.
  void set_interval_observer(std::function<void(const StateInterval&)> fn) {
    observer_ = std::move(fn);
  }

 private:
  struct Ongoing {
    Timestamp start;
    StateValue value;
  };

  void Emit(Quark quark, Timestamp start, Timestamp end,
            const StateValue& value);
  void CheckTime(Timestamp t);

  std::string spill_path_;
  AttributeTree tree_;
  HistoryTreeWriter writer_;
  absl::flat_hash_map<Quark, Ongoing> ongoing_;
  Timestamp frontier_;
  bool closed_ = false;
  uint64_t emitted_ = 0;
  std::function<void(const StateInterval&)> observer_;
};

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_STATE_STATE_SYSTEM_H_
