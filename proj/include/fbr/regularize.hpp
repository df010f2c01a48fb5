#pragma once

#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "fbr/errors.hpp"
#include "fbr/filter.hpp"
#include "fbr/network.hpp"
#include "fbr/tensor.hpp"

namespace fbr {

enum class OrthoVariant { so, dso };

struct RegConfig {
  double lambda_fbr = 0.0;
  double gamma_ortho = 0.0;
  double l1_coeff = 0.0;
  double l2_coeff = 0.0;
  OrthoVariant ortho_variant = OrthoVariant::so;
  bool ortho_squared = false;
  int min_regularized_kernel = 3;  // regularize kernels strictly larger
  double bank_scale = 1.0;         // rho applied to every bank filter

  void validate() const {
    auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!ok(lambda_fbr) || !ok(gamma_ortho) || !ok(l1_coeff) || !ok(l2_coeff))
      throw ParamError("reg config: coefficients must be finite and >= 0");
    if (!(bank_scale > 0.0) || !std::isfinite(bank_scale))
      throw ParamError("reg config: bank_scale must be positive");
    if (min_regularized_kernel < 0)
      throw ParamError("reg config: bad kernel threshold");
  }
};

struct MatchEntry {
  std::size_t layer;    // conv layer index
  std::size_t kernel;   // m
  std::size_t channel;  // d
  std::size_t bank_index;
  double distance;
};

struct MatchAssignment {
  std::vector<MatchEntry> entries;

  double mean_distance() const {
    if (entries.empty()) return 0.0;
    double s = 0.0;
    for (const MatchEntry& e : entries) s += e.distance;
    return s / static_cast<double>(entries.size());
  }

  // Shannon entropy (nats) of the chosen-index histogram.
  double index_entropy() const {
    if (entries.empty()) return 0.0;
    std::map<std::size_t, std::size_t> counts;
    for (const MatchEntry& e : entries) ++counts[e.bank_index];
    const double total = static_cast<double>(entries.size());
    double h = 0.0;
    for (auto& [idx, c] : counts) {
      const double p = static_cast<double>(c) / total;
      h -= p * std::log(p);
    }
    return h;
  }
};

struct MatchResult {
  std::size_t index;
  double distance;
};

// Nearest bank filter under the L2 distance to the scaled member; ties go to
// the lowest index (ascending scan with strict improvement).
inline MatchResult match_filter(std::span<const double> slice, int height,
                                int width, const FilterBank& bank,
                                double scale) {
  validate_bank(bank, "match_filter");
  if (height != bank.height || width != bank.width ||
      slice.size() != static_cast<std::size_t>(width) * height)
    throw ShapeError("match_filter: slice dimensions differ from bank");

  MatchResult best{0, 0.0};
  bool first = true;
  for (std::size_t i = 0; i < bank.filters.size(); ++i) {
    const double* f = bank.filters[i].coefficients.data();
    double d2 = 0.0;
    for (std::size_t j = 0; j < slice.size(); ++j) {
      const double diff = slice[j] - scale * f[j];
      d2 += diff * diff;
    }
    const double d = std::sqrt(d2);
    if (first || d < best.distance) {
      best = {i, d};
      first = false;
    }
  }
  return best;
}

// Resampled bank copies keyed by target size; matching is the hot loop and
// the resampling result is pure in (bank, size).
class BankCache {
 public:
  explicit BankCache(FilterBank base) : base_(std::move(base)) {
    validate_bank(base_, "bank cache");
  }

  const FilterBank& base() const { return base_; }

  const FilterBank& at(int height, int width) {
    if (height == base_.height && width == base_.width) return base_;
    auto key = std::make_pair(height, width);
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_.emplace(key, resample_bank(base_, width, height)).first;
    return it->second;
  }

 private:
  FilterBank base_;
  std::map<std::pair<int, int>, FilterBank> cache_;
};

inline std::span<const double> kernel_slice(const ConvLayer& layer,
                                            std::size_t m, std::size_t d) {
  const std::size_t cells =
      static_cast<std::size_t>(layer.kernel_h()) * layer.kernel_w();
  return {layer.kernels.ptr() + (m * layer.channels() + d) * cells, cells};
}

// One nearest-filter match per (layer, kernel, channel) slice of every
// regularized conv layer.
inline MatchAssignment fbr_assign(const Network& net, BankCache& banks,
                                  const RegConfig& cfg) {
  MatchAssignment out;
  for (std::size_t li = 0; li < net.conv.size(); ++li) {
    const ConvLayer& layer = net.conv[li];
    if (!layer.regularize) continue;
    const FilterBank& bank = banks.at(layer.kernel_h(), layer.kernel_w());
    for (std::size_t m = 0; m < layer.kernel_count(); ++m)
      for (std::size_t d = 0; d < layer.channels(); ++d) {
        const MatchResult r =
            match_filter(kernel_slice(layer, m, d), layer.kernel_h(),
                         layer.kernel_w(), bank, cfg.bank_scale);
        out.entries.push_back({li, m, d, r.index, r.distance});
      }
  }
  return out;
}

// lambda * sum of squared distances to the assigned scaled bank filters.
// With verify_fresh set, a recomputed distance drifting more than 1e-9 from
// the stored one means the weights moved since fbr_assign ran.
inline double fbr_penalty(const Network& net, BankCache& banks,
                          const MatchAssignment& assignment,
                          const RegConfig& cfg, bool verify_fresh = true) {
  double sum = 0.0;
  for (const MatchEntry& e : assignment.entries) {
    const ConvLayer& layer = net.conv[e.layer];
    const FilterBank& bank = banks.at(layer.kernel_h(), layer.kernel_w());
    const std::span<const double> slice = kernel_slice(layer, e.kernel, e.channel);
    const double* f = bank.filters[e.bank_index].coefficients.data();
    double d2 = 0.0;
    for (std::size_t j = 0; j < slice.size(); ++j) {
      const double diff = slice[j] - cfg.bank_scale * f[j];
      d2 += diff * diff;
    }
    if (verify_fresh && std::abs(std::sqrt(d2) - e.distance) > 1e-9)
      throw StaleAssignmentError("fbr penalty: assignment is stale");
    sum += d2;
  }
  return cfg.lambda_fbr * sum;
}

// d/dk of the frozen-match penalty: 2 lambda (k - rho f*) on matched slices.
inline void fbr_gradient(const Network& net, BankCache& banks,
                         const MatchAssignment& assignment,
                         const RegConfig& cfg, GradSet& grads,
                         bool verify_fresh = true) {
  for (const MatchEntry& e : assignment.entries) {
    const ConvLayer& layer = net.conv[e.layer];
    const FilterBank& bank = banks.at(layer.kernel_h(), layer.kernel_w());
    const std::span<const double> slice = kernel_slice(layer, e.kernel, e.channel);
    const double* f = bank.filters[e.bank_index].coefficients.data();
    const std::size_t cells = slice.size();
    double* g = grads.tensors[conv_kernel_param_index(e.layer)].ptr() +
                (e.kernel * layer.channels() + e.channel) * cells;
    double d2 = 0.0;
    for (std::size_t j = 0; j < cells; ++j) {
      const double diff = slice[j] - cfg.bank_scale * f[j];
      d2 += diff * diff;
      g[j] += 2.0 * cfg.lambda_fbr * diff;
    }
    if (verify_fresh && std::abs(std::sqrt(d2) - e.distance) > 1e-9)
      throw StaleAssignmentError("fbr gradient: assignment is stale");
  }
}

namespace detail {

// gram = W^T W - I for W [rows x cols]; returns [cols x cols].
inline Tensor gram_minus_identity(const Tensor& w) {
  const std::size_t rows = w.extent(0), cols = w.extent(1);
  Tensor s({cols, cols});
  gemm_atb_acc(w.ptr(), w.ptr(), s.ptr(), rows, cols, cols);
  for (std::size_t i = 0; i < cols; ++i) s.data[i * cols + i] -= 1.0;
  return s;
}

inline Tensor outer_minus_identity(const Tensor& w) {
  const std::size_t rows = w.extent(0), cols = w.extent(1);
  Tensor s({rows, rows});
  gemm_abt_acc(w.ptr(), w.ptr(), s.ptr(), rows, cols, rows);
  for (std::size_t i = 0; i < rows; ++i) s.data[i * rows + i] -= 1.0;
  return s;
}

inline double frob(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data) s += v * v;
  return std::sqrt(s);
}

}  // namespace detail

// SO: ||W^T W - I||_F; DSO adds ||W W^T - I||_F. The squared flag swaps in
// the squared Frobenius norms.
inline double ortho_penalty(const Tensor& w, OrthoVariant variant,
                            bool squared = false) {
  if (w.rank() != 2 || w.size() == 0)
    throw ShapeError("ortho penalty: need a nonempty matrix");
  auto term = [&](const Tensor& s) {
    const double f = detail::frob(s);
    return squared ? f * f : f;
  };
  double value = term(detail::gram_minus_identity(w));
  if (variant == OrthoVariant::dso) value += term(detail::outer_minus_identity(w));
  return value;
}

// Gradient of the unsquared norm is 2 W S / ||S||_F, safeguarded to zero at
// the non-smooth minimum; the squared variant is 4 W S.
inline Tensor ortho_gradient(const Tensor& w, OrthoVariant variant,
                             bool squared = false) {
  if (w.rank() != 2 || w.size() == 0)
    throw ShapeError("ortho gradient: need a nonempty matrix");
  const std::size_t rows = w.extent(0), cols = w.extent(1);
  Tensor grad(w.shape);

  const Tensor s = detail::gram_minus_identity(w);
  const double psi = detail::frob(s);
  if (squared) {
    gemm_acc(w.ptr(), s.ptr(), grad.ptr(), rows, cols, cols);
    for (double& v : grad.data) v *= 4.0;
  } else if (psi > 1e-12) {
    gemm_acc(w.ptr(), s.ptr(), grad.ptr(), rows, cols, cols);
    for (double& v : grad.data) v *= 2.0 / psi;
  }

  if (variant == OrthoVariant::dso) {
    const Tensor t = detail::outer_minus_identity(w);
    const double phi = detail::frob(t);
    if (squared || phi > 1e-12) {
      Tensor tw({rows, cols});
      gemm_acc(t.ptr(), w.ptr(), tw.ptr(), rows, rows, cols);
      const double scale = squared ? 4.0 : 2.0 / phi;
      for (std::size_t i = 0; i < grad.size(); ++i)
        grad.data[i] += scale * tw.data[i];
    }
  }
  return grad;
}

// Columns are vectorized kernels: [D*KH*KW rows, M columns].
inline Tensor conv_weight_matrix(const ConvLayer& layer) {
  const std::size_t m = layer.kernel_count();
  const std::size_t cells = layer.kernels.size() / m;
  Tensor w({cells, m});
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t c = 0; c < cells; ++c)
      w.data[c * m + k] = layer.kernels.data[k * cells + c];
  return w;
}

inline void add_conv_matrix_grad(const Tensor& mgrad, std::size_t conv_index,
                                 const Network& net, GradSet& grads,
                                 double scale) {
  const ConvLayer& layer = net.conv[conv_index];
  const std::size_t m = layer.kernel_count();
  const std::size_t cells = layer.kernels.size() / m;
  double* g = grads.tensors[conv_kernel_param_index(conv_index)].ptr();
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t c = 0; c < cells; ++c)
      g[k * cells + c] += scale * mgrad.data[c * m + k];
}

// l1 |w| + l2 w^2 over kernel and dense weight tensors; biases are exempt.
inline double weight_decay_penalty(const Network& net, double l1, double l2) {
  if (l1 == 0.0 && l2 == 0.0) return 0.0;
  double abs_sum = 0.0, sq_sum = 0.0;
  auto tally = [&](const Tensor& t) {
    for (double v : t.data) {
      abs_sum += std::abs(v);
      sq_sum += v * v;
    }
  };
  for (const ConvLayer& l : net.conv) tally(l.kernels);
  for (const DenseLayer& l : net.dense) tally(l.weights);
  return l1 * abs_sum + l2 * sq_sum;
}

inline void weight_decay_gradient(const Network& net, double l1, double l2,
                                  GradSet& grads) {
  if (l1 == 0.0 && l2 == 0.0) return;
  auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  auto add = [&](const Tensor& t, std::size_t param_index) {
    double* g = grads.tensors[param_index].ptr();
    for (std::size_t j = 0; j < t.size(); ++j)
      g[j] += l1 * sign(t.data[j]) + 2.0 * l2 * t.data[j];
  };
  for (std::size_t i = 0; i < net.conv.size(); ++i)
    add(net.conv[i].kernels, conv_kernel_param_index(i));
  for (std::size_t i = 0; i < net.dense.size(); ++i)
    add(net.dense[i].weights, dense_weight_param_index(net, i));
}

struct TotalLoss {
  double total = 0.0;
  double data = 0.0;
  double fbr = 0.0;
  double ortho = 0.0;
  double decay = 0.0;
  MatchAssignment assignment;
};

// E = batch loss + lambda sum(Omega) + gamma sum(psi_l) + weight decay.
// When grads is given the regularizer gradients are added in the fixed
// order FBR, orthogonality, decay (the data gradient goes in beforehand).
inline TotalLoss total_regularized_loss(double batch_loss, const Network& net,
                                        BankCache* banks, const RegConfig& cfg,
                                        GradSet* grads = nullptr) {
  cfg.validate();
  TotalLoss out;
  out.data = batch_loss;

  if (cfg.lambda_fbr > 0.0) {
    if (!banks) throw ParamError("total loss: FBR needs a filter bank");
    out.assignment = fbr_assign(net, *banks, cfg);
    out.fbr = fbr_penalty(net, *banks, out.assignment, cfg);
    if (grads) fbr_gradient(net, *banks, out.assignment, cfg, *grads);
  }

  if (cfg.gamma_ortho > 0.0) {
    for (std::size_t i = 0; i < net.conv.size(); ++i) {
      const Tensor w = conv_weight_matrix(net.conv[i]);
      out.ortho += ortho_penalty(w, cfg.ortho_variant, cfg.ortho_squared);
      if (grads)
        add_conv_matrix_grad(
            ortho_gradient(w, cfg.ortho_variant, cfg.ortho_squared), i, net,
            *grads, cfg.gamma_ortho);
    }
    out.ortho *= cfg.gamma_ortho;
  }

  out.decay = weight_decay_penalty(net, cfg.l1_coeff, cfg.l2_coeff);
  if (grads) weight_decay_gradient(net, cfg.l1_coeff, cfg.l2_coeff, *grads);

  out.total = out.data + out.fbr + out.ortho + out.decay;
  return out;
}

}  // namespace fbr
