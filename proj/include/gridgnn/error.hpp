/*
 * Copyright 2026 The gridgnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
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

namespace gridgnn {

// Bad argument value or shape. Maps to CLI exit code 2.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Graph or network structure that violates an invariant (asymmetric
// admittance, isolated node, singular network...). Exit code 2.
struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable/missing file or malformed on-disk format. Exit code 2.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values during a numerical computation. Exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gridgnn
