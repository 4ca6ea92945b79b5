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

#ifndef INCLUDE_KVSCOPE_SHT_STATE_VALUE_H_
#define INCLUDE_KVSCOPE_SHT_STATE_VALUE_H_

#include <cstdint>
#include <string>
#include <variant>

#include "kvscope/trace/event.h"

namespace kvscope {

// Upper bound on Str payloads; enforced when an interval is inserted.
inline constexpr size_t kMaxStateStringBytes = 4096;

class StateValue {
 public:
  enum class Type : uint8_t { kNull = 0, kInt = 1, kFloat = 2, kStr = 3 };

  StateValue() = default;
  static StateValue Null() { return StateValue(); }
  static StateValue Int(int64_t v) { return StateValue(Storage(v)); }
  static StateValue Float(double v) { return StateValue(Storage(v)); }
  static StateValue Str(std::string v) {
    return StateValue(Storage(std::move(v)));
  }

  Type type() const { return static_cast<Type>(value_.index()); }
  bool is_null() const { return value_.index() == 0; }
  int64_t as_int() const { return std::get<int64_t>(value_); }
  double as_float() const { return std::get<double>(value_); }
  const std::string& as_str() const { return std::get<std::string>(value_); }

  // Display form: "" for Null, decimal for numbers, raw text for Str.
  std::string ToString() const;

  bool operator==(const StateValue&) const = default;

 private:
  using Storage = std::variant<std::monostate, int64_t, double, std::string>;
  explicit StateValue(Storage v) : value_(std::move(v)) {}

  Storage value_;
};

using Quark = uint32_t;

// [start, end) for one attribute. start == end marks an instantaneous state
// that was superseded within the same timestamp.
struct StateInterval {
  Quark quark = 0;
  Timestamp start = 0;
  Timestamp end = 0;
  StateValue value;

  bool Contains(Timestamp t) const { return start <= t && t < end; }
  bool Intersects(Timestamp t0, Timestamp t1) const {
    if (start == end)
      return t0 <= start && start <= t1;
    return start <= t1 && end > t0;
  }

  bool operator==(const StateInterval&) const = default;
};

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_SHT_STATE_VALUE_H_
