#pragma once

// Versioned binary tensor container shared by the embedding cache, corpus
// mel files, synthesized mels and attention dumps.
//
// Layout (all integers little-endian):
//   "M2CT" | u32 version (=1) | u8 dtype (0 = f32 LE) | u8 rank (1..3)
//   | rank x u32 dims | row-major payload

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m2ctts/autograd.hpp"

namespace m2ctts {

inline constexpr char kTensorMagic[4] = {'M', '2', 'C', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const;

  static Tensor from_matrix(const Matrix& m);
  static Tensor from_row(const RowVector& v);
  /// Rank 1 becomes a 1 x n matrix; rank 2 maps directly. Rank 3 is rejected.
  Matrix to_matrix() const;

  bool operator==(const Tensor&) const = default;
};

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes, const std::string& origin = "<memory>");

/// Writes atomically (temp file + rename); parent directories are created.
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

/// Whole-file helpers shared by the other binary formats.
std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace m2ctts
