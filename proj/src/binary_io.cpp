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
#include "koopman/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace koopman {

namespace {

constexpr char kMagic[8] = {'K', 'O', 'O', 'P', 'S', 'C', 'L', '1'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.append(reinterpret_cast<const char*>(raw), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  return value;
}

}  // namespace

const Matrix& BlobFile::block(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
  for (const auto& b : blocks) {
    if (b.name != name) continue;
    if ((rows >= 0 && b.value.rows() != rows) || (cols >= 0 && b.value.cols() != cols))
      throw FormatError(name, "block shape " + std::to_string(b.value.rows()) + "x" +
                                  std::to_string(b.value.cols()) + " does not match expected " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    return b.value;
  }
  throw FormatError(name, "block missing");
}

std::string encode_blob(const std::string& format, Json header, const std::vector<NamedBlock>& blocks) {
  header["format"] = format;
  header["version"] = kFormatVersion;
  Json listing = Json::array();
  for (const auto& b : blocks) listing.push_back({{"name", b.name}, {"rows", b.value.rows()}, {"cols", b.value.cols()}});
  header["blocks"] = listing;
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& b : blocks)
    for (Eigen::Index i = 0; i < b.value.rows(); ++i)
      for (Eigen::Index j = 0; j < b.value.cols(); ++j) put_le<double>(out, b.value(i, j));
  return out;
}

BlobFile decode_blob(const std::string& bytes, const std::string& expected_format) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("magic", "not a koopscale file");
  const auto len = get_le<std::uint64_t>(bytes, 8);
  if (len > bytes.size() - 16) throw FormatError("header_length", "header runs past end of file");

  BlobFile file;
  try {
    file.header = Json::parse(bytes.substr(16, len));
  } catch (const Json::exception& e) {
    throw FormatError("header", e.what());
  }
  if (!file.header.is_object()) throw FormatError("header", "not a JSON object");
  const auto format = header_field<std::string>(file.header, "format");
  if (format != expected_format) throw FormatError("format", "expected '" + expected_format + "', got '" + format + "'");
  const auto version = header_field<int>(file.header, "version");
  if (version != kFormatVersion) throw FormatError("version", "unsupported version " + std::to_string(version));
  const auto listing = header_field<Json>(file.header, "blocks");
  if (!listing.is_array()) throw FormatError("blocks", "not an array");

  std::size_t offset = 16 + len;
  for (const auto& entry : listing) {
    const auto name = header_field<std::string>(entry, "name");
    const auto rows = header_field<std::int64_t>(entry, "rows");
    const auto cols = header_field<std::int64_t>(entry, "cols");
    if (rows < 0 || cols < 0) throw FormatError(name, "negative block dimension");
    const auto count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (count > (bytes.size() - offset) / 8) throw FormatError(name, "block runs past end of file");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j, offset += 8) m(i, j) = get_le<double>(bytes, offset);
    file.blocks.push_back({name, std::move(m)});
  }
  if (offset != bytes.size()) throw FormatError("blocks", "trailing bytes after last block");
  return file;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace koopman
