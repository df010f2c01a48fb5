#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fbr/errors.hpp"
#include "fbr/tensor.hpp"

namespace fbr {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct LabeledDataset {
  Tensor images;  // [N, D, H, W]
  std::vector<int> labels;
  int class_count = 0;
  ChannelStats stats;
  bool normalized = false;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.extent(1); }
  std::size_t image_h() const { return images.extent(2); }
  std::size_t image_w() const { return images.extent(3); }
};

namespace detail {

inline std::uint32_t read_u32be(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string(what) + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// IDX pair: images magic 0x803 with rows/cols, labels magic 0x801. Pixels
// land in [0,1]; labels stay raw bytes.
inline LabeledDataset load_mnist_idx(const std::string& images_path,
                                     const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw Error("mnist: cannot open " + images_path);
  if (detail::read_u32be(imgs, "mnist images") != 0x00000803u)
    throw FormatError("mnist images: bad magic");
  const std::uint32_t n = detail::read_u32be(imgs, "mnist images");
  const std::uint32_t rows = detail::read_u32be(imgs, "mnist images");
  const std::uint32_t cols = detail::read_u32be(imgs, "mnist images");
  if (n == 0 || rows == 0 || cols == 0)
    throw FormatError("mnist images: empty file");

  std::ifstream lbls(labels_path, std::ios::binary);
  if (!lbls) throw Error("mnist: cannot open " + labels_path);
  if (detail::read_u32be(lbls, "mnist labels") != 0x00000801u)
    throw FormatError("mnist labels: bad magic");
  if (detail::read_u32be(lbls, "mnist labels") != n)
    throw FormatError("mnist: image/label counts differ");

  LabeledDataset ds;
  ds.class_count = 10;
  ds.images = Tensor({n, 1, rows, cols});
  ds.labels.resize(n);

  const std::size_t pixels = static_cast<std::size_t>(n) * rows * cols;
  std::vector<unsigned char> buf(pixels);
  if (!imgs.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(pixels)))
    throw FormatError("mnist images: truncated payload");
  for (std::size_t i = 0; i < pixels; ++i)
    ds.images.data[i] = buf[i] / 255.0;

  std::vector<unsigned char> lab(n);
  if (!lbls.read(reinterpret_cast<char*>(lab.data()), n))
    throw FormatError("mnist labels: truncated payload");
  for (std::uint32_t i = 0; i < n; ++i) {
    if (lab[i] > 9) throw FormatError("mnist labels: label out of range");
    ds.labels[i] = lab[i];
  }
  return ds;
}

// Concatenated 3073-byte records: label byte then R, G, B planes of 1024
// bytes each, row-major 32x32.
inline LabeledDataset load_cifar10(const std::vector<std::string>& batch_paths) {
  if (batch_paths.empty()) throw ParamError("cifar10: no batch files given");
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPlane = 1024;

  std::vector<unsigned char> bytes;
  for (const std::string& path : batch_paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cifar10: cannot open " + path);
    std::vector<unsigned char> chunk((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (chunk.empty() || chunk.size() % kRecord != 0)
      throw FormatError("cifar10: file length is not a whole record count");
    bytes.insert(bytes.end(), chunk.begin(), chunk.end());
  }

  const std::size_t n = bytes.size() / kRecord;
  LabeledDataset ds;
  ds.class_count = 10;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kRecord;
    if (rec[0] > 9) throw FormatError("cifar10: label out of range");
    ds.labels[i] = rec[0];
    double* img = ds.images.ptr() + i * 3 * kPlane;
    for (std::size_t j = 0; j < 3 * kPlane; ++j) img[j] = rec[1 + j] / 255.0;
  }
  return ds;
}

inline ChannelStats compute_channel_stats(const LabeledDataset& ds) {
  const std::size_t d = ds.channels();
  const std::size_t plane = ds.image_h() * ds.image_w();
  ChannelStats st;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < ds.size(); ++n) {
      const double* p = ds.images.ptr() + (n * d + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum += p[i];
        sq += p[i] * p[i];
      }
    }
    const double count = static_cast<double>(ds.size() * plane);
    const double mean = sum / count;
    const double var = sq / count - mean * mean;
    if (var <= 1e-24) throw DataError("normalize: zero-variance channel");
    st.mean[c] = mean;
    st.stddev[c] = std::sqrt(var);
  }
  return st;
}

inline void apply_channel_stats(Tensor& images, const ChannelStats& st) {
  const std::size_t d = images.extent(1);
  if (st.mean.size() != d || st.stddev.size() != d)
    throw DataError("normalize: stats channel count mismatch");
  const std::size_t plane = images.extent(2) * images.extent(3);
  for (std::size_t n = 0; n < images.extent(0); ++n)
    for (std::size_t c = 0; c < d; ++c) {
      double* p = images.ptr() + (n * d + c) * plane;
      const double m = st.mean[c];
      const double inv = 1.0 / st.stddev[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
    }
}

// Train split: compute per-channel stats and standardize. Test split: pass
// the stored train stats. Re-normalizing is refused; the op is not
// idempotent.
inline ChannelStats normalize(LabeledDataset& ds,
                              const ChannelStats* stats = nullptr) {
  if (ds.normalized) throw DataError("normalize: dataset already normalized");
  const ChannelStats st = stats ? *stats : compute_channel_stats(ds);
  apply_channel_stats(ds.images, st);
  ds.stats = st;
  ds.normalized = true;
  return st;
}

struct AugmentOptions {
  bool horizontal_flip = true;
  int max_shift = 2;
};

// Per image: flip with probability 0.5 (when allowed), then an integer
// translation uniform in [-max_shift, +max_shift] per axis with zero fill.
inline void augment_batch(Tensor& batch, Rng& rng, const AugmentOptions& opt) {
  if (batch.rank() != 4) throw ShapeError("augment: batch must be [N,D,H,W]");
  const std::size_t n = batch.extent(0), d = batch.extent(1);
  const int h = static_cast<int>(batch.extent(2));
  const int w = static_cast<int>(batch.extent(3));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> tmp(plane);

  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = opt.horizontal_flip && rng.next_unit() < 0.5;
    int dx = 0, dy = 0;
    if (opt.max_shift > 0) {
      const int span = 2 * opt.max_shift + 1;
      dx = static_cast<int>(rng.next_below(span)) - opt.max_shift;
      dy = static_cast<int>(rng.next_below(span)) - opt.max_shift;
    }
    if (!flip && dx == 0 && dy == 0) continue;
    for (std::size_t c = 0; c < d; ++c) {
      double* img = batch.ptr() + (i * d + c) * plane;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int sx = x - dx;
          const int sy = y - dy;
          if (flip) sx = w - 1 - sx;
          tmp[static_cast<std::size_t>(y) * w + x] =
              (sx >= 0 && sx < w && sy >= 0 && sy < h)
                  ? img[static_cast<std::size_t>(sy) * w + sx]
                  : 0.0;
        }
      std::copy(tmp.begin(), tmp.end(), img);
    }
  }
}

inline LabeledDataset gather(const LabeledDataset& ds,
                             const std::vector<std::size_t>& indices) {
  LabeledDataset out;
  out.class_count = ds.class_count;
  out.stats = ds.stats;
  out.normalized = ds.normalized;
  const std::size_t item = ds.images.size() / ds.size();
  out.images = Tensor({indices.size(), ds.channels(), ds.image_h(), ds.image_w()});
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    std::copy(ds.images.ptr() + src * item, ds.images.ptr() + (src + 1) * item,
              out.images.ptr() + i * item);
    out.labels[i] = ds.labels[src];
  }
  return out;
}

// Deterministic stratified sample: per_class draws from every class, class
// order then per-class shuffled order.
inline LabeledDataset subset(const LabeledDataset& ds, std::size_t per_class,
                             std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::vector<std::size_t> picks;
  picks.reserve(per_class * ds.class_count);
  for (int c = 0; c < ds.class_count; ++c) {
    auto& pool = by_class[static_cast<std::size_t>(c)];
    if (pool.size() < per_class)
      throw DataError("subset: class " + std::to_string(c) +
                      " has too few samples");
    Rng rng(seed, {0x737562ull, static_cast<std::uint64_t>(c)});
    rng.shuffle(pool);
    picks.insert(picks.end(), pool.begin(), pool.begin() + per_class);
  }
  return gather(ds, picks);
}

}  // namespace fbr
