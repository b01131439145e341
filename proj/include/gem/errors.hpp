// Copyright 2026 The GEM Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace gem {

/// Raised when a caller-supplied value violates a documented precondition.
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a request would exceed a memory/size guard (e.g. too many qubits).
struct ResourceLimit : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a non-finite value shows up inside a numerical routine.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Pearson correlation of a constant series.
struct UndefinedCorrelation : std::domain_error {
    using std::domain_error::domain_error;
};

/// A checkpoint or dataset file whose schema does not match what the reader expects.
struct SchemaMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File system failure while reading or writing artifacts.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string &message) {
    if (!condition) {
        throw InvalidArgument(message);
    }
}

}  // namespace gem
