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

#ifndef INCLUDE_KVSCOPE_BASE_ERROR_H_
#define INCLUDE_KVSCOPE_BASE_ERROR_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kvscope {

// Every failure surfaced by the library carries one of these codes. Callers
// that need to distinguish failure modes (the CLI maps them to exit codes)
// switch on code() rather than parsing messages.
enum class ErrorCode {
  kMalformedLine,
  kSchemaViolation,
  kNonMonotoneSeq,
  kIoFailure,
  kOutOfOrderEnd,
  kNodeOverflowBug,
  kTimeOutOfRange,
  kUnknownQuark,
  kUnknownPath,
  kRetiredPath,
  kTimeRegression,
  kNotClosed,
  kBadFormat,
  kIncompleteFlow,
  kConfigInvalid,
  kEmptyModel,
  kInvalidArgument,
};

std::string_view ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Line-attributed error from a file reader. line() is 1-based, 0 when the
// failure is not tied to a line.
class DataError : public Error {
 public:
  DataError(ErrorCode code, std::string file, uint64_t line,
            const std::string& message);

  const std::string& file() const { return file_; }
  uint64_t line() const { return line_; }

 private:
  std::string file_;
  uint64_t line_;
};

}  // namespace kvscope

#endif  // INCLUDE_KVSCOPE_BASE_ERROR_H_
