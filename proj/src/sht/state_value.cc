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

#include "kvscope/sht/state_value.h"

#include "json.hpp"

namespace kvscope {

std::string StateValue::ToString() const {
  switch (type()) {
    case Type::kNull:
      return "";
    case Type::kInt:
      return std::to_string(as_int());
    case Type::kFloat:
      return nlohmann::json(as_float()).dump();
    case Type::kStr:
      return as_str();
  }
  return "";
}

}  // namespace kvscope
