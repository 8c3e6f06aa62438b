#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "nmfg/errors.hpp"
#include "nmfg/matrix.hpp"

namespace nmfg {

// Binary formats are pinned little-endian so files round-trip bit-exactly
// across runs and machines:
//   FMAT1 matrix:      "FMAT1\0", u32 rows, u32 cols, rows*cols f64 row-major
//   FMPK1 named pack:  "FMPK1\0", u32 count, then per tensor:
//                      u32 name_len, name bytes, u32 ndim, ndim x u32 dims,
//                      prod(dims) f64

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f64le(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(std::string data, std::string path)
      : data_(std::move(data)), path_(std::move(path)) {}

  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<unsigned char>(data_[pos_ + i]);
    pos_ += 4;
    return v;
  }

  double f64le() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i)
      bits = (bits << 8) | static_cast<unsigned char>(data_[pos_ + i]);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char* magic6) {
    need(6);
    if (std::memcmp(data_.data() + pos_, magic6, 6) != 0) {
      throw FormatError(path_ + ": bad magic bytes");
    }
    pos_ += 6;
  }

  bool exhausted() const { return pos_ == data_.size(); }
  const std::string& path() const { return path_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError(path_ + ": truncated file");
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace detail

inline void save_matrix(const std::string& path, const DenseMatrix& m) {
  if (m.empty()) {
    throw std::invalid_argument("save_matrix: refusing to save empty matrix");
  }
  std::string out;
  out.reserve(14 + 8 * m.size());
  out.append("FMAT1", 5);
  out.push_back('\0');
  detail::put_u32le(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32le(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) detail::put_f64le(out, v);
  detail::write_file(path, out);
}

inline DenseMatrix load_matrix(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  r.expect_magic("FMAT1\0");
  const std::uint32_t rows = r.u32le();
  const std::uint32_t cols = r.u32le();
  if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24) ||
      static_cast<std::uint64_t>(rows) * cols > (1ull << 31)) {
    throw FormatError(path + ": unreasonable dimensions " + std::to_string(rows) +
                      "x" + std::to_string(cols));
  }
  DenseMatrix m(static_cast<int>(rows), static_cast<int>(cols));
  for (double& v : m.values()) v = r.f64le();
  if (!r.exhausted()) throw FormatError(path + ": trailing bytes");
  return m;
}

using NamedTensors = std::vector<std::pair<std::string, DenseMatrix>>;

inline void save_named_tensors(const std::string& path, const NamedTensors& tensors) {
  std::string out;
  out.append("FMPK1", 5);
  out.push_back('\0');
  detail::put_u32le(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::put_u32le(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::put_u32le(out, 2);
    detail::put_u32le(out, static_cast<std::uint32_t>(m.rows()));
    detail::put_u32le(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) detail::put_f64le(out, v);
  }
  detail::write_file(path, out);
}

inline NamedTensors load_named_tensors(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  r.expect_magic("FMPK1\0");
  const std::uint32_t count = r.u32le();
  NamedTensors tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32le();
    if (name_len > 4096) throw FormatError(path + ": parameter name too long");
    std::string name = r.bytes(name_len);
    const std::uint32_t ndim = r.u32le();
    if (ndim < 1 || ndim > 2) {
      throw FormatError(path + ": unsupported tensor rank " + std::to_string(ndim));
    }
    std::uint32_t rows = 1, cols;
    if (ndim == 1) {
      cols = r.u32le();
    } else {
      rows = r.u32le();
      cols = r.u32le();
    }
    if (rows == 0 || cols == 0 ||
        static_cast<std::uint64_t>(rows) * cols > (1ull << 31)) {
      throw FormatError(path + ": bad tensor dimensions for " + name);
    }
    DenseMatrix m(static_cast<int>(rows), static_cast<int>(cols));
    for (double& v : m.values()) v = r.f64le();
    tensors.emplace_back(std::move(name), std::move(m));
  }
  if (!r.exhausted()) throw FormatError(path + ": trailing bytes");
  return tensors;
}

/// Shortest round-trip decimal form, locale-independent.
inline std::string format_double(double v) {
  std::array<char, 64> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

/// Rectangular numeric CSV, no header, '.' decimal point, LF or CRLF.
inline DenseMatrix load_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string_view cell(line.data() + start,
                            (comma == std::string::npos ? line.size() : comma) -
                                start);
      while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t'))
        cell.remove_prefix(1);
      while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t'))
        cell.remove_suffix(1);
      double value;
      const auto res =
          std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
        throw FormatError(path + ": non-numeric cell '" + std::string(cell) +
                          "' at row " + std::to_string(rows.size()));
      }
      row.push_back(value);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError(path + ": ragged row " + std::to_string(rows.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path + ": empty CSV");
  DenseMatrix m(static_cast<int>(rows.size()),
                static_cast<int>(rows.front().size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

/// Binary PGM (P5), maxval 255. Values must already be in [0, 255].
inline void write_pgm(const std::string& path, const DenseMatrix& image) {
  std::string out = "P5\n" + std::to_string(image.cols()) + " " +
                    std::to_string(image.rows()) + "\n255\n";
  for (double v : image.values()) {
    const int byte = static_cast<int>(v + 0.5);
    out.push_back(static_cast<char>(std::clamp(byte, 0, 255)));
  }
  detail::write_file(path, out);
}

}  // namespace nmfg
