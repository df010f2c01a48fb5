#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "fbr/errors.hpp"

namespace fbr {

enum class FilterFamily : std::uint32_t {
  gabor = 0,
  gauss_deriv1 = 1,
  gauss_deriv2 = 2,
  log = 3,
  gaussian = 4,
  external = 5,
};

// Gaussians (and raw external filters) keep their mean; everything else is
// centered before unit normalization.
inline bool zero_mean_exempt(FilterFamily family) {
  return family == FilterFamily::gaussian || family == FilterFamily::external;
}

inline const char* family_name(FilterFamily family) {
  switch (family) {
    case FilterFamily::gabor: return "gabor";
    case FilterFamily::gauss_deriv1: return "gauss_deriv1";
    case FilterFamily::gauss_deriv2: return "gauss_deriv2";
    case FilterFamily::log: return "log";
    case FilterFamily::gaussian: return "gaussian";
    case FilterFamily::external: return "external";
  }
  return "unknown";
}

// One 2D filter: a width x height coefficient grid plus generator metadata.
struct Filter {
  int width = 0;
  int height = 0;
  FilterFamily family = FilterFamily::external;
  std::vector<double> coefficients;  // row-major, height rows of width
  std::map<std::string, double> params;

  double coef(int row, int col) const {
    return coefficients[static_cast<std::size_t>(row) * width + col];
  }
  double& coef(int row, int col) {
    return coefficients[static_cast<std::size_t>(row) * width + col];
  }

  double mean() const {
    double s = 0.0;
    for (double v : coefficients) s += v;
    return s / static_cast<double>(coefficients.size());
  }

  double l2_norm() const {
    double s = 0.0;
    for (double v : coefficients) s += v * v;
    return std::sqrt(s);
  }
};

// Ordered, uniform-size filter set; the matching reference set.
struct FilterBank {
  std::vector<Filter> filters;
  int width = 0;
  int height = 0;

  std::size_t size() const { return filters.size(); }
};

struct GaborParams {
  double wavelength = 0.0;      // pixels per cycle
  double orientation = 0.0;     // radians
  double phase = 0.0;           // radians
  double envelope_sigma = 0.0;  // pixels
  double aspect = 1.0;          // cross-axis compression
};

namespace detail {

inline void require_odd_dims(int width, int height, const char* what) {
  if (width < 1 || height < 1 || width % 2 == 0 || height % 2 == 0)
    throw ParamError(std::string(what) +
                     ": grid dimensions must be odd and positive");
}

inline Filter make_raw(int width, int height, FilterFamily family) {
  Filter f;
  f.width = width;
  f.height = height;
  f.family = family;
  f.coefficients.assign(static_cast<std::size_t>(width) * height, 0.0);
  return f;
}

// Orientation folded into [0, pi); the phase-0 real part is pi-periodic.
inline double fold_orientation(double theta) {
  double t = std::fmod(theta, std::numbers::pi);
  if (t < 0.0) t += std::numbers::pi;
  return t;
}

}  // namespace detail

// Centers and unit-normalizes in place per the family rule.
inline Filter normalize_filter(Filter f) {
  double pre = f.l2_norm();
  if (pre == 0.0) throw DegenerateFilterError("all-zero filter");
  if (!zero_mean_exempt(f.family)) {
    const double m = f.mean();
    for (double& v : f.coefficients) v -= m;
  }
  const double norm = f.l2_norm();
  if (norm <= 1e-12 * pre)
    throw DegenerateFilterError("filter vanished under mean removal");
  for (double& v : f.coefficients) v /= norm;
  return f;
}

inline FilterBank finalize_bank(FilterBank bank) {
  for (Filter& f : bank.filters) f = normalize_filter(std::move(f));
  return bank;
}

// Real part of the Gabor function on the centered integer grid; raw values.
inline Filter gabor_filter(const GaborParams& params, int width, int height) {
  if (!(params.wavelength > 0.0) || !(params.envelope_sigma > 0.0) ||
      !(params.aspect > 0.0))
    throw ParamError("gabor: wavelength, sigma and aspect must be positive");
  detail::require_odd_dims(width, height, "gabor");

  const double theta = detail::fold_orientation(params.orientation);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double two_sigma_sq = 2.0 * params.envelope_sigma * params.envelope_sigma;
  const double gamma_sq = params.aspect * params.aspect;
  const double omega = 2.0 * std::numbers::pi / params.wavelength;

  Filter f = detail::make_raw(width, height, FilterFamily::gabor);
  const int cx = width / 2, cy = height / 2;
  for (int row = 0; row < height; ++row) {
    const double y = row - cy;
    for (int col = 0; col < width; ++col) {
      const double x = col - cx;
      const double xr = x * ct + y * st;
      const double yr = -x * st + y * ct;
      f.coef(row, col) = std::exp(-(xr * xr + gamma_sq * yr * yr) / two_sigma_sq) *
                         std::cos(omega * xr + params.phase);
    }
  }
  f.params = {{"wavelength", params.wavelength},
              {"orientation", theta},
              {"phase", params.phase},
              {"sigma", params.envelope_sigma},
              {"aspect", params.aspect}};
  return f;
}

// Directional derivative of an anisotropic Gaussian; derivative axis along
// the orientation, cross-axis sigma stretched by the elongation. Raw values.
inline Filter gaussian_derivative_filter(int order, double orientation,
                                         double sigma, double elongation,
                                         int width, int height) {
  if (order != 1 && order != 2)
    throw ParamError("gaussian derivative: order must be 1 or 2");
  if (!(sigma > 0.0) || !(elongation > 0.0))
    throw ParamError("gaussian derivative: sigma and elongation must be positive");
  detail::require_odd_dims(width, height, "gaussian derivative");

  const double ct = std::cos(orientation), st = std::sin(orientation);
  const double su = sigma;
  const double sv = elongation * sigma;
  const double su2 = su * su, sv2 = sv * sv;
  const double amp = 1.0 / (2.0 * std::numbers::pi * su * sv);

  Filter f = detail::make_raw(width, height,
                              order == 1 ? FilterFamily::gauss_deriv1
                                         : FilterFamily::gauss_deriv2);
  const int cx = width / 2, cy = height / 2;
  for (int row = 0; row < height; ++row) {
    const double y = row - cy;
    for (int col = 0; col < width; ++col) {
      const double x = col - cx;
      const double u = x * ct + y * st;
      const double v = -x * st + y * ct;
      const double g = amp * std::exp(-u * u / (2.0 * su2) - v * v / (2.0 * sv2));
      f.coef(row, col) =
          order == 1 ? -(u / su2) * g : (u * u / (su2 * su2) - 1.0 / su2) * g;
    }
  }
  f.params = {{"order", static_cast<double>(order)},
              {"orientation", orientation},
              {"sigma", sigma},
              {"elongation", elongation}};
  return f;
}

// Laplacian of Gaussian: -1/(pi sigma^4) (1 - r^2/(2 sigma^2)) exp(-r^2/(2 sigma^2)).
inline Filter log_filter(double sigma, int width, int height) {
  if (!(sigma > 0.0)) throw ParamError("log: sigma must be positive");
  detail::require_odd_dims(width, height, "log");

  const double s2 = sigma * sigma;
  const double amp = -1.0 / (std::numbers::pi * s2 * s2);
  Filter f = detail::make_raw(width, height, FilterFamily::log);
  const int cx = width / 2, cy = height / 2;
  for (int row = 0; row < height; ++row) {
    const double y = row - cy;
    for (int col = 0; col < width; ++col) {
      const double x = col - cx;
      const double r2 = x * x + y * y;
      f.coef(row, col) = amp * (1.0 - r2 / (2.0 * s2)) * std::exp(-r2 / (2.0 * s2));
    }
  }
  f.params = {{"sigma", sigma}};
  return f;
}

inline Filter gaussian_filter(double sigma, int width, int height) {
  if (!(sigma > 0.0)) throw ParamError("gaussian: sigma must be positive");
  detail::require_odd_dims(width, height, "gaussian");

  const double s2 = sigma * sigma;
  const double amp = 1.0 / (2.0 * std::numbers::pi * s2);
  Filter f = detail::make_raw(width, height, FilterFamily::gaussian);
  const int cx = width / 2, cy = height / 2;
  for (int row = 0; row < height; ++row) {
    const double y = row - cy;
    for (int col = 0; col < width; ++col) {
      const double x = col - cx;
      f.coef(row, col) = amp * std::exp(-(x * x + y * y) / (2.0 * s2));
    }
  }
  f.params = {{"sigma", sigma}};
  return f;
}

// Geometric frequency ladder in cycles per pixel.
inline std::vector<double> geometric_frequencies(int count, double f_min = 0.05,
                                                 double f_max = 0.35) {
  if (count < 1 || !(f_min > 0.0) || !(f_max >= f_min))
    throw ParamError("frequency ladder: need count >= 1 and 0 < f_min <= f_max");
  std::vector<double> f(count);
  if (count == 1) {
    f[0] = f_min;
    return f;
  }
  const double ratio = std::pow(f_max / f_min, 1.0 / (count - 1));
  double v = f_min;
  for (int i = 0; i < count; ++i, v *= ratio) f[i] = v;
  return f;
}

// Orientation-major, frequency-minor sweep; wavelength and envelope sigma
// both 1/f, phase 0, unit aspect. Members come out finalized.
inline FilterBank build_gabor_bank(int orientations,
                                   const std::vector<double>& frequencies,
                                   int width, int height) {
  if (orientations < 1) throw ParamError("gabor bank: need orientations >= 1");
  if (frequencies.empty()) throw ParamError("gabor bank: empty frequency list");
  for (double f : frequencies)
    if (!(f > 0.0) || f > 0.5)
      throw ParamError("gabor bank: frequencies must lie in (0, 0.5]");
  detail::require_odd_dims(width, height, "gabor bank");

  FilterBank bank;
  bank.width = width;
  bank.height = height;
  bank.filters.reserve(static_cast<std::size_t>(orientations) * frequencies.size());
  for (int i = 0; i < orientations; ++i) {
    const double theta = i * std::numbers::pi / orientations;
    for (double f : frequencies) {
      GaborParams p;
      p.wavelength = 1.0 / f;
      p.orientation = theta;
      p.phase = 0.0;
      p.envelope_sigma = 1.0 / f;
      p.aspect = 1.0;
      Filter g = normalize_filter(gabor_filter(p, width, height));
      g.params["frequency"] = f;
      bank.filters.push_back(std::move(g));
    }
  }
  return bank;
}

// Leung-Malik small set: first and second Gaussian derivatives at 6
// orientations x 3 scales, 8 LoG, 4 Gaussians. 48 finalized members in
// that block order; derivative blocks are scale-major, orientation-minor.
inline FilterBank build_lm_bank(int width, int height) {
  detail::require_odd_dims(width, height, "lm bank");

  const double sqrt2 = std::numbers::sqrt2;
  const std::vector<double> deriv_scales = {sqrt2, 2.0, 2.0 * sqrt2};
  const std::vector<double> blob_scales = {sqrt2, 2.0, 2.0 * sqrt2, 4.0};
  const double elongation = 3.0;
  const int orientations = 6;
  const double half_extent = (std::min(width, height) - 1) / 2.0;

  FilterBank bank;
  bank.width = width;
  bank.height = height;
  bank.filters.reserve(48);

  auto add = [&](Filter f, double support_sigma) {
    if (half_extent < 3.0 * support_sigma) f.params["undersized"] = 1.0;
    bank.filters.push_back(normalize_filter(std::move(f)));
  };

  for (int order = 1; order <= 2; ++order)
    for (double sigma : deriv_scales)
      for (int k = 0; k < orientations; ++k) {
        const double theta = k * std::numbers::pi / orientations;
        add(gaussian_derivative_filter(order, theta, sigma, elongation, width,
                                       height),
            elongation * sigma);
      }
  for (double sigma : blob_scales) add(log_filter(sigma, width, height), sigma);
  for (double sigma : blob_scales)
    add(log_filter(3.0 * sigma, width, height), 3.0 * sigma);
  for (double sigma : blob_scales)
    add(gaussian_filter(sigma, width, height), sigma);
  return bank;
}

inline void validate_bank(const FilterBank& bank, const char* what) {
  if (bank.filters.empty())
    throw ParamError(std::string(what) + ": empty filter bank");
  for (const Filter& f : bank.filters)
    if (f.width != bank.width || f.height != bank.height)
      throw ParamError(std::string(what) + ": member dimensions differ from bank");
}

inline FilterBank merge_banks(const FilterBank& a, const FilterBank& b) {
  validate_bank(a, "merge");
  validate_bank(b, "merge");
  if (a.width != b.width || a.height != b.height)
    throw ParamError("merge: bank dimensions differ");
  FilterBank out = a;
  out.filters.insert(out.filters.end(), b.filters.begin(), b.filters.end());
  return out;
}

// Bilinear resampling onto a new centered grid covering the same spatial
// extent, then re-finalization. Equal target size returns the bank as-is.
inline FilterBank resample_bank(const FilterBank& bank, int new_width,
                                int new_height) {
  validate_bank(bank, "resample");
  detail::require_odd_dims(new_width, new_height, "resample");
  if (new_width == bank.width && new_height == bank.height) return bank;

  const double hx_old = (bank.width - 1) / 2.0;
  const double hy_old = (bank.height - 1) / 2.0;
  const double hx_new = (new_width - 1) / 2.0;
  const double hy_new = (new_height - 1) / 2.0;
  const double rx = hx_new > 0.0 ? hx_old / hx_new : 0.0;
  const double ry = hy_new > 0.0 ? hy_old / hy_new : 0.0;

  FilterBank out;
  out.width = new_width;
  out.height = new_height;
  out.filters.reserve(bank.filters.size());
  for (const Filter& src : bank.filters) {
    Filter dst = detail::make_raw(new_width, new_height, src.family);
    dst.params = src.params;
    for (int row = 0; row < new_height; ++row) {
      const double yo = (row - hy_new) * ry + hy_old;
      int y0 = static_cast<int>(std::floor(yo));
      y0 = std::clamp(y0, 0, bank.height - 1);
      const int y1 = std::min(y0 + 1, bank.height - 1);
      const double fy = yo - y0;
      for (int col = 0; col < new_width; ++col) {
        const double xo = (col - hx_new) * rx + hx_old;
        int x0 = static_cast<int>(std::floor(xo));
        x0 = std::clamp(x0, 0, bank.width - 1);
        const int x1 = std::min(x0 + 1, bank.width - 1);
        const double fx = xo - x0;
        const double top = (1.0 - fx) * src.coef(y0, x0) + fx * src.coef(y0, x1);
        const double bot = (1.0 - fx) * src.coef(y1, x0) + fx * src.coef(y1, x1);
        dst.coef(row, col) = (1.0 - fy) * top + fy * bot;
      }
    }
    out.filters.push_back(normalize_filter(std::move(dst)));
  }
  return out;
}

}  // namespace fbr
