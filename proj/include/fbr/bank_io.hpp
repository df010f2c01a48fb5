#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fbr/errors.hpp"
#include "fbr/filter.hpp"

namespace fbr {

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const char* what)
      : bytes_(bytes), what_(what) {}

  std::uint32_t u32le() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64le() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  void expect_magic(const char* magic) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
      throw FormatError(std::string(what_) + ": bad magic");
    pos_ += 4;
  }

  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw FormatError(std::string(what_) + ": truncated payload");
  }
  const std::string& bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(std::string(what) + ": cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes,
                             const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(std::string(what) + ": cannot open " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(std::string(what) + ": write failed for " + path);
}

}  // namespace detail

// FBNK: "FBNK", u32 version=1, u32 count, u32 width, u32 height, then per
// filter a u32 family code and width*height little-endian doubles row-major.
inline void save_bank(const FilterBank& bank, const std::string& path) {
  validate_bank(bank, "save_bank");
  std::string out;
  out.reserve(20 + bank.filters.size() *
                       (4 + 8 * static_cast<std::size_t>(bank.width) * bank.height));
  out.append("FBNK");
  detail::put_u32le(out, 1);
  detail::put_u32le(out, static_cast<std::uint32_t>(bank.filters.size()));
  detail::put_u32le(out, static_cast<std::uint32_t>(bank.width));
  detail::put_u32le(out, static_cast<std::uint32_t>(bank.height));
  for (const Filter& f : bank.filters) {
    detail::put_u32le(out, static_cast<std::uint32_t>(f.family));
    for (double v : f.coefficients) detail::put_f64le(out, v);
  }
  detail::write_file_bytes(path, out, "save_bank");
}

inline FilterBank load_bank(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path, "load_bank");
  detail::ByteReader r(bytes, "load_bank");
  r.expect_magic("FBNK");
  const std::uint32_t version = r.u32le();
  if (version != 1) throw FormatError("load_bank: unsupported version");
  const std::uint32_t count = r.u32le();
  const std::uint32_t width = r.u32le();
  const std::uint32_t height = r.u32le();
  if (count == 0 || width == 0 || height == 0)
    throw FormatError("load_bank: empty bank or zero dimensions");

  FilterBank bank;
  bank.width = static_cast<int>(width);
  bank.height = static_cast<int>(height);
  bank.filters.reserve(count);
  const std::size_t cells = static_cast<std::size_t>(width) * height;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t code = r.u32le();
    if (code > static_cast<std::uint32_t>(FilterFamily::external))
      throw FormatError("load_bank: unknown family code");
    Filter f;
    f.width = bank.width;
    f.height = bank.height;
    f.family = static_cast<FilterFamily>(code);
    f.coefficients.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      const double v = r.f64le();
      if (!std::isfinite(v)) throw FormatError("load_bank: non-finite coefficient");
      f.coefficients[c] = v;
    }
    bank.filters.push_back(std::move(f));
  }
  if (!r.exhausted()) throw FormatError("load_bank: trailing data");
  return bank;
}

// Binary PGM, maxval 255, no comment lines so output bytes are reproducible.
inline void write_pgm(const std::string& path, int width, int height,
                      const std::vector<std::uint8_t>& pixels) {
  std::string out = "P5\n" + std::to_string(width) + " " +
                    std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  detail::write_file_bytes(path, out, "write_pgm");
}

// Tiles equal-size grids into a near-square mosaic, each tile min-max scaled
// to [0,255]. Flat tiles render 128; 1-pixel separators are white, unused
// trailing cells black.
inline void render_tile_grid(const std::vector<const double*>& tiles,
                             int tile_w, int tile_h, const std::string& path) {
  if (tiles.empty()) throw ParamError("render: nothing to draw");
  const int n = static_cast<int>(tiles.size());
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  const int out_w = cols * tile_w + (cols - 1);
  const int out_h = rows * tile_h + (rows - 1);
  std::vector<std::uint8_t> image(static_cast<std::size_t>(out_w) * out_h, 255);

  for (int cell = 0; cell < rows * cols; ++cell) {
    const int r0 = (cell / cols) * (tile_h + 1);
    const int c0 = (cell % cols) * (tile_w + 1);
    if (cell >= n) {
      for (int y = 0; y < tile_h; ++y)
        for (int x = 0; x < tile_w; ++x)
          image[static_cast<std::size_t>(r0 + y) * out_w + c0 + x] = 0;
      continue;
    }
    const double* t = tiles[cell];
    double lo = t[0], hi = t[0];
    for (int i = 1; i < tile_w * tile_h; ++i) {
      lo = std::min(lo, t[i]);
      hi = std::max(hi, t[i]);
    }
    for (int y = 0; y < tile_h; ++y)
      for (int x = 0; x < tile_w; ++x) {
        const double v = t[y * tile_w + x];
        const std::uint8_t g =
            hi > lo ? static_cast<std::uint8_t>(
                          std::lround((v - lo) / (hi - lo) * 255.0))
                    : static_cast<std::uint8_t>(128);
        image[static_cast<std::size_t>(r0 + y) * out_w + c0 + x] = g;
      }
  }
  write_pgm(path, out_w, out_h, image);
}

inline void render_bank_grid(const FilterBank& bank, const std::string& path) {
  validate_bank(bank, "render_bank_grid");
  std::vector<const double*> tiles;
  tiles.reserve(bank.filters.size());
  for (const Filter& f : bank.filters) tiles.push_back(f.coefficients.data());
  render_tile_grid(tiles, bank.width, bank.height, path);
}

}  // namespace fbr
