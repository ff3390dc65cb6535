#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "affplan/nn.hpp"

namespace affplan {

/// Text manifest followed by raw little-endian float32 arrays:
///
///   AFFPLAN-ARRAYS
///   kind <checkpoint|buffer>
///   version <int>
///   seed <uint64>
///   meta <key> <value>            (zero or more, order preserved)
///   array <name> <rows> <cols> <byte offset>
///   end
///   <payload>
///
/// Byte offsets are relative to the first byte after the `end` line.
struct ArrayFile {
  static constexpr int kFormatVersion = 1;

  struct Array {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;
  };

  std::string kind = "checkpoint";
  int version = kFormatVersion;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<Array> arrays;

  const std::string* find_meta(const std::string& key) const;
  const std::string& require_meta(const std::string& key) const;
  const Array* find_array(const std::string& name) const;
  const Array& require_array(const std::string& name) const;
};

void write_array_file(const std::filesystem::path& path, const ArrayFile& file);
ArrayFile read_array_file(const std::filesystem::path& path);

/// Parameter values (and optionally Adam moments + step counter) as arrays.
void append_params(ArrayFile& file, const nn::ParamStore& params, bool with_optimizer_state);
/// Copies values into an existing store with identical names and shapes.
void restore_params(const ArrayFile& file, nn::ParamStore& params);

}  // namespace affplan
