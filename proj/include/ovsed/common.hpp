/* Copyright 2026 The OVSED Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef OVSED_COMMON_HPP_
#define OVSED_COMMON_HPP_

#include <cstdint>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ovsed {

using ClassId = std::string;
using ClipId = std::string;

// Error taxonomy. Everything user-visible derives from Error so the CLI can
// map failures to exit codes in one place.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files (TSV / JSON / binary records).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Structurally valid input violating a domain invariant.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Non-finite values or other numeric breakdowns.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Warning sink. Defaults to stderr; tests swap it out to assert on emitted
// warnings (unknown ontology ids, negative-pool relaxations, ...).
using WarnFn = std::function<void(const std::string&)>;

inline WarnFn& warn_sink() {
  static WarnFn sink = [](const std::string& msg) {
    std::cerr << "[ovsed] warning: " << msg << "\n";
  };
  return sink;
}

inline void warn(const std::string& msg) { warn_sink()(msg); }

// Scoped override of the warning sink, restores the previous sink on exit.
class WarnCapture {
 public:
  explicit WarnCapture(WarnFn fn) : prev_(warn_sink()) {
    warn_sink() = std::move(fn);
  }
  ~WarnCapture() { warn_sink() = prev_; }
  WarnCapture(const WarnCapture&) = delete;
  WarnCapture& operator=(const WarnCapture&) = delete;

 private:
  WarnFn prev_;
};

// FNV-1a, used wherever a stable cross-platform 64-bit hash is needed
// (stub embedding seeds, cache keys). std::hash is not stable across
// implementations.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace ovsed

#endif  // OVSED_COMMON_HPP_
