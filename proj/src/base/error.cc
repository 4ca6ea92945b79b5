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

#include "kvscope/base/error.h"

namespace kvscope {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedLine:
      return "MalformedLine";
    case ErrorCode::kSchemaViolation:
      return "SchemaViolation";
    case ErrorCode::kNonMonotoneSeq:
      return "NonMonotoneSeq";
    case ErrorCode::kIoFailure:
      return "IoFailure";
    case ErrorCode::kOutOfOrderEnd:
      return "OutOfOrderEnd";
    case ErrorCode::kNodeOverflowBug:
      return "NodeOverflowBug";
    case ErrorCode::kTimeOutOfRange:
      return "TimeOutOfRange";
    case ErrorCode::kUnknownQuark:
      return "UnknownQuark";
    case ErrorCode::kUnknownPath:
      return "UnknownPath";
    case ErrorCode::kRetiredPath:
      return "RetiredPath";
    case ErrorCode::kTimeRegression:
      return "TimeRegression";
    case ErrorCode::kNotClosed:
      return "NotClosed";
    case ErrorCode::kBadFormat:
      return "BadFormat";
    case ErrorCode::kIncompleteFlow:
      return "IncompleteFlow";
    case ErrorCode::kConfigInvalid:
      return "ConfigInvalid";
    case ErrorCode::kEmptyModel:
      return "EmptyModel";
    case ErrorCode::kInvalidArgument:
      return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
      code_(code) {}

namespace {
std::string Locate(const std::string& file, uint64_t line,
                   const std::string& message) {
  std::string out = file.empty() ? std::string("<stream>") : file;
  if (line > 0)
    out += ":" + std::to_string(line);
  return out + ": " + message;
}
}  // namespace

DataError::DataError(ErrorCode code, std::string file, uint64_t line,
                     const std::string& message)
    : Error(code, Locate(file, line, message)),
      file_(std::move(file)),
      line_(line) {}

}  // namespace kvscope
