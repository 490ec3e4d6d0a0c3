// Copyright 2026 the acap authors
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

#ifndef ACAP_ERROR_HPP
#define ACAP_ERROR_HPP

#include <stdexcept>
#include <string>

namespace acap {

// Bad option/config-file values. CLI exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable/malformed input files or datasets. CLI exit code 3.
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf during training or other numeric breakdown. CLI exit code 4.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor dimension/shape contract violations.
struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace acap

#endif  // ACAP_ERROR_HPP
