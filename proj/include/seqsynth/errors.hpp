/*
 * seqsynth: MRI sequence synthesis library
 *
 * Copyright 2026 The seqsynth Authors
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

namespace seqsynth {

// Error taxonomy. Each class maps to one failure category so callers (and the
// CLI exit-code policy) can dispatch on type instead of parsing messages.

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format: " + msg) {}
};

struct ConsistencyError : std::runtime_error {
    explicit ConsistencyError(const std::string& msg) : std::runtime_error("consistency: " + msg) {}
};

struct MissingInputError : std::runtime_error {
    explicit MissingInputError(const std::string& msg) : std::runtime_error("missing-input: " + msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape: " + msg) {}
};

struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error("argument: " + msg) {}
};

// Degenerate data: constant volumes, empty histograms, zero intensity ranges.
struct DegenerateInputError : std::runtime_error {
    explicit DegenerateInputError(const std::string& msg) : std::runtime_error("degenerate-input: " + msg) {}
};

struct EmptyRegionError : std::runtime_error {
    explicit EmptyRegionError(const std::string& msg) : std::runtime_error("empty-region: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

// A requested feature needs an asset or component that is not available
// (e.g. a perceptual loss without a feature extractor).
struct DependencyError : std::runtime_error {
    explicit DependencyError(const std::string& msg) : std::runtime_error("dependency: " + msg) {}
};

// Non-finite values where finite ones are required (loss blow-up and similar).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric: " + msg) {}
};

}  // namespace seqsynth
