// Copyright 2026 The wsaed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace wsaed {

// Bad input: malformed files, inconsistent shapes, config violations.
// The CLI maps this to exit code 1; anything else escaping is exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Non-finite values surfaced during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure to write an artifact.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

#define WSAED_CHECK(cond, ...)                                          \
  do {                                                                  \
    if (!(cond)) throw ::wsaed::ValidationError(::wsaed::detail::concat(__VA_ARGS__)); \
  } while (0)

#define WSAED_CHECK_SHAPE(cond, ...)                                    \
  do {                                                                  \
    if (!(cond)) throw ::wsaed::ShapeError(::wsaed::detail::concat(__VA_ARGS__)); \
  } while (0)

}  // namespace wsaed
