#include "m2ctts/tensor_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "m2ctts/common.hpp"

namespace m2ctts {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor files are written with native little-endian stores");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& at, const std::string& origin) {
  if (at + sizeof(T) > in.size()) throw FormatError(origin + ": truncated tensor file");
  T value;
  std::memcpy(&value, in.data() + at, sizeof(T));
  at += sizeof(T);
  return value;
}

}  // namespace

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t;
  t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      t.data[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
  return t;
}

Tensor Tensor::from_row(const RowVector& v) {
  Tensor t;
  t.shape = {static_cast<std::uint32_t>(v.size())};
  t.data.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
  return t;
}

Matrix Tensor::to_matrix() const {
  Eigen::Index rows = 0, cols = 0;
  if (rank() == 1) {
    rows = 1;
    cols = shape[0];
  } else if (rank() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else {
    throw FormatError("to_matrix: rank " + std::to_string(rank()) + " tensor is not a matrix");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = data[static_cast<std::size_t>(i * cols + j)];
  return m;
}

std::string encode_tensor(const Tensor& t) {
  if (t.rank() < 1 || t.rank() > 3) throw FormatError("tensor rank must be 1..3");
  if (t.numel() != t.data.size()) throw FormatError("tensor payload does not match its shape");
  for (float v : t.data)
    if (!std::isfinite(v)) throw FormatError("tensor contains non-finite values");
  std::string out;
  out.reserve(16 + 4 * t.data.size());
  out.append(kTensorMagic, 4);
  put<std::uint32_t>(out, kTensorVersion);
  put<std::uint8_t>(out, kDtypeF32);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape) put<std::uint32_t>(out, d);
  const auto* bytes = reinterpret_cast<const char*>(t.data.data());
  out.append(bytes, t.data.size() * sizeof(float));
  return out;
}

Tensor decode_tensor(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0)
    throw FormatError(origin + ": bad magic, expected M2CT tensor file");
  std::size_t at = 4;
  const auto version = take<std::uint32_t>(bytes, at, origin);
  if (version != kTensorVersion)
    throw FormatError(origin + ": unsupported tensor format version " + std::to_string(version));
  const auto dtype = take<std::uint8_t>(bytes, at, origin);
  if (dtype != kDtypeF32) throw FormatError(origin + ": unsupported dtype code " + std::to_string(dtype));
  const auto rank = take<std::uint8_t>(bytes, at, origin);
  if (rank < 1 || rank > 3) throw FormatError(origin + ": invalid rank " + std::to_string(rank));

  Tensor t;
  std::uint64_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    const auto d = take<std::uint32_t>(bytes, at, origin);
    t.shape.push_back(d);
    if (d != 0 && numel > (std::numeric_limits<std::uint64_t>::max() / sizeof(float)) / d)
      throw FormatError(origin + ": shape overflow");
    numel *= d;
  }
  const std::uint64_t payload = numel * sizeof(float);
  if (payload > bytes.size() - at) throw FormatError(origin + ": truncated tensor payload");
  if (payload < bytes.size() - at) throw FormatError(origin + ": trailing bytes after payload");
  t.data.resize(static_cast<std::size_t>(numel));
  if (payload != 0) std::memcpy(t.data.data(), bytes.data() + at, static_cast<std::size_t>(payload));
  return t;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file_bytes(path, encode_tensor(t));
}

Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file_bytes(path), path.string());
}

}  // namespace m2ctts
