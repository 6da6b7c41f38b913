/*
 Copyright 2026 The koopscale Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#ifndef KOOPMAN_BINARY_IO_HPP
#define KOOPMAN_BINARY_IO_HPP

/**
 * @file
 * @brief Container shared by every persisted object (datasets, EDMD models,
 * Koopman models, NNDM models).
 *
 * Layout, all integers little-endian:
 *
 *   offset 0   8 bytes   magic "KOOPSCL1"
 *   offset 8   8 bytes   uint64 header length N
 *   offset 16  N bytes   JSON header (UTF-8)
 *   offset 16+N          float64 blocks, in the order of header["blocks"],
 *                        each rows*cols values in row-major order
 *
 * The header always carries "format" (object kind), "version" and "blocks"
 * (a list of {"name", "rows", "cols"}).
 */

#include "koopman/numerics.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace koopman {

using Json = nlohmann::json;

/// Malformed or mismatched file; field() names the offending header field.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& field, const std::string& what)
      : std::runtime_error("format error in field '" + field + "': " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct NamedBlock {
  std::string name;
  Matrix value;
};

struct BlobFile {
  Json header;
  std::vector<NamedBlock> blocks;

  /// Block by name; throws FormatError if absent or of the wrong shape.
  const Matrix& block(const std::string& name, Eigen::Index rows = -1, Eigen::Index cols = -1) const;
};

inline constexpr int kFormatVersion = 1;

std::string encode_blob(const std::string& format, Json header, const std::vector<NamedBlock>& blocks);
BlobFile decode_blob(const std::string& bytes, const std::string& expected_format);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// Typed header lookup; missing or mistyped fields raise FormatError naming the field.
template <typename T>
T header_field(const Json& header, const std::string& name) {
  if (!header.contains(name)) throw FormatError(name, "missing");
  try {
    return header.at(name).get<T>();
  } catch (const Json::exception& e) {
    throw FormatError(name, e.what());
  }
}

/// JSON has no inf/nan; non-finite values are written as the strings "inf", "-inf", "nan".
inline Json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

/// Inverse of json_number.
inline double number_field(const Json& header, const std::string& name) {
  if (!header.contains(name)) throw FormatError(name, "missing");
  const Json& v = header.at(name);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw FormatError(name, "not a number");
}

}  // namespace koopman

#endif  // KOOPMAN_BINARY_IO_HPP
