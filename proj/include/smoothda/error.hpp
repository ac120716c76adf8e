/*
 * Copyright 2026 The smoothda Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace smoothda {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An op produced NaN or Inf. `op()` names the offending op.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(std::string op)
      : Error("non-finite value produced by op '" + op + "'"), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Precondition or argument violation that is not a shape problem.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration (bad key, illegal combination).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint / dataset file problems: wrong magic, version, truncation.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace smoothda
