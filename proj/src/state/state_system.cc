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

#include "kvscope/state/state_system.h"

#include <algorithm>
#include <cstdio>

#include "kvscope/base/error.h"

namespace kvscope {

StateSystem::StateSystem(const std::string& sht_path, Timestamp start_time,
                         StateSystemOptions options)
    : spill_path_(sht_path + ".paths.tmp"),
      tree_(options.enforce_schema, spill_path_),
      writer_(sht_path, start_time, options.tree),
      frontier_(start_time) {}

StateSystem::~StateSystem() {
  std::remove(spill_path_.c_str());
}

void StateSystem::CheckTime(Timestamp t) {
  if (closed_)
    throw Error(ErrorCode::kInvalidArgument, "state system already closed");
  if (t < frontier_) {
    throw Error(ErrorCode::kTimeRegression,
                std::to_string(t) + " < " + std::to_string(frontier_));
  }
  frontier_ = t;
}

void StateSystem::Emit(Quark quark, Timestamp start, Timestamp end,
                       const StateValue& value) {
  // A Null marker says nothing.
  if (start == end && value.is_null())
    return;
  StateInterval interval{quark, start, end, value};
  if (observer_)
    observer_(interval);
  writer_.Insert(interval);
  ++emitted_;
}

void StateSystem::Modify(Timestamp t, Quark quark, StateValue value) {
  CheckTime(t);
  if (quark >= tree_.size())
    throw Error(ErrorCode::kUnknownQuark, std::to_string(quark));
  auto [it, inserted] = ongoing_.try_emplace(quark, Ongoing{t, StateValue()});
  Ongoing& state = it->second;
  if (inserted) {
    state.value = std::move(value);
    return;
  }
  if (state.value == value)
    return;
  Emit(quark, state.start, t, state.value);
  state.start = t;
  state.value = std::move(value);
}

const StateValue& StateSystem::Current(Quark quark) const {
  static const StateValue kNull;
  auto it = ongoing_.find(quark);
  return it == ongoing_.end() ? kNull : it->second.value;
}

void StateSystem::Retire(Timestamp t, Quark root) {
  CheckTime(t);
  std::vector<Quark> quarks = tree_.LiveSubtree(root);
  std::sort(quarks.begin(), quarks.end());
  for (Quark q : quarks) {
    auto it = ongoing_.find(q);
    if (it == ongoing_.end())
      continue;
    Emit(q, it->second.start, t, it->second.value);
    ongoing_.erase(it);
  }
  tree_.Retire(root);
}

void StateSystem::CloseAll(Timestamp t_end) {
  if (closed_)
    return;
  CheckTime(t_end);
  // Hash-map order is not stable across processes; sort for reproducible
  // files.
  std::vector<Quark> quarks;
  quarks.reserve(ongoing_.size());
  for (const auto& [q, _] : ongoing_)
    quarks.push_back(q);
  std::sort(quarks.begin(), quarks.end());
  for (Quark q : quarks) {
    const Ongoing& state = ongoing_.at(q);
    Emit(q, state.start, t_end, state.value);
  }
  ongoing_.clear();
  writer_.Close(t_end, tree_.OpenPathTable());
  closed_ = true;
  std::remove(spill_path_.c_str());
}

}  // namespace kvscope
