#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fbr/errors.hpp"
#include "fbr/layers.hpp"
#include "fbr/tensor.hpp"

namespace fbr {

enum class LayerKind { conv, relu, maxpool, flatten, dense };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // conv
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = -1;  // -1 means centered "same" padding (kernel-1)/2
  // maxpool
  int window = 2;
  int pool_stride = 2;
  // dense
  int units = 0;

  static LayerSpec conv2d(int out_channels, int kernel, int stride = 1,
                          int padding = -1) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec maxpool(int window = 2, int stride = 2) {
    LayerSpec l;
    l.kind = LayerKind::maxpool;
    l.window = window;
    l.pool_stride = stride;
    return l;
  }
  static LayerSpec flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
  }
  static LayerSpec dense(int units) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.units = units;
    return l;
  }
};

struct NetworkSpec {
  std::string name;
  int in_channels = 1;
  int in_h = 28;
  int in_w = 28;
  int classes = 10;
  std::vector<LayerSpec> layers;
};

inline NetworkSpec mnist_small_spec() {
  NetworkSpec s;
  s.name = "mnist-small";
  s.in_channels = 1;
  s.in_h = 28;
  s.in_w = 28;
  s.classes = 10;
  s.layers = {LayerSpec::conv2d(16, 5), LayerSpec::relu(), LayerSpec::maxpool(),
              LayerSpec::conv2d(32, 5), LayerSpec::relu(), LayerSpec::maxpool(),
              LayerSpec::flatten(),     LayerSpec::dense(128),
              LayerSpec::relu(),        LayerSpec::dense(10)};
  return s;
}

inline NetworkSpec cifar_small_spec() {
  NetworkSpec s;
  s.name = "cifar-small";
  s.in_channels = 3;
  s.in_h = 32;
  s.in_w = 32;
  s.classes = 10;
  s.layers = {LayerSpec::conv2d(32, 7), LayerSpec::relu(),
              LayerSpec::conv2d(32, 5), LayerSpec::relu(), LayerSpec::maxpool(),
              LayerSpec::conv2d(64, 5), LayerSpec::relu(), LayerSpec::maxpool(),
              LayerSpec::flatten(),     LayerSpec::dense(256),
              LayerSpec::relu(),        LayerSpec::dense(10)};
  return s;
}

inline NetworkSpec named_spec(const std::string& name) {
  if (name == "mnist-small") return mnist_small_spec();
  if (name == "cifar-small") return cifar_small_spec();
  throw ParamError("unknown network spec: " + name);
}

// Parameters laid out in layer order: conv layers first as they appear,
// then dense layers.
struct Network {
  NetworkSpec spec;
  std::vector<ConvLayer> conv;
  std::vector<DenseLayer> dense;
};

struct GradSet {
  std::vector<Tensor> tensors;  // aligned with parameter_list order

  void add_scaled(const GradSet& other, double scale) {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      for (std::size_t j = 0; j < tensors[i].size(); ++j)
        tensors[i].data[j] += scale * other.tensors[i].data[j];
  }
};

inline std::vector<std::pair<std::string, Tensor*>> parameter_list(Network& net) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < net.conv.size(); ++i) {
    out.emplace_back("conv" + std::to_string(i) + ".kernels", &net.conv[i].kernels);
    out.emplace_back("conv" + std::to_string(i) + ".bias", &net.conv[i].bias);
  }
  for (std::size_t i = 0; i < net.dense.size(); ++i) {
    out.emplace_back("dense" + std::to_string(i) + ".weights", &net.dense[i].weights);
    out.emplace_back("dense" + std::to_string(i) + ".bias", &net.dense[i].bias);
  }
  return out;
}

inline std::vector<std::pair<std::string, const Tensor*>> parameter_list(
    const Network& net) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : parameter_list(const_cast<Network&>(net)))
    out.emplace_back(name, t);
  return out;
}

inline std::size_t conv_kernel_param_index(std::size_t conv_index) {
  return 2 * conv_index;
}
inline std::size_t dense_weight_param_index(const Network& net,
                                            std::size_t dense_index) {
  return 2 * net.conv.size() + 2 * dense_index;
}

inline GradSet zero_grads(const Network& net) {
  GradSet g;
  for (auto& [name, t] : parameter_list(net)) g.tensors.emplace_back(t->shape);
  return g;
}

// Validates adjacent shapes and allocates zero parameters. Conv layers with
// kernels strictly larger than regularize_threshold get the regularize flag;
// those kernels must be odd so a bank can be resampled onto them.
inline Network build_network(const NetworkSpec& spec,
                             int regularize_threshold = 3) {
  Network net;
  net.spec = spec;
  int c = spec.in_channels, h = spec.in_h, w = spec.in_w;
  long flat = -1;  // -1 while still spatial
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv: {
        if (flat >= 0) throw ShapeError(spec.name + ": conv after flatten");
        if (l.out_channels < 1 || l.kernel < 1)
          throw ShapeError(spec.name + ": bad conv spec");
        ConvLayer layer;
        const int pad = l.padding >= 0 ? l.padding : (l.kernel - 1) / 2;
        layer.kernels = Tensor({static_cast<std::size_t>(l.out_channels),
                                static_cast<std::size_t>(c),
                                static_cast<std::size_t>(l.kernel),
                                static_cast<std::size_t>(l.kernel)});
        layer.bias = Tensor({static_cast<std::size_t>(l.out_channels)});
        layer.stride = l.stride;
        layer.padding = pad;
        layer.regularize = l.kernel > regularize_threshold;
        if (layer.regularize && l.kernel % 2 == 0)
          throw ShapeError(spec.name + ": regularized kernels must be odd");
        const int hspan = h + 2 * pad - l.kernel;
        const int wspan = w + 2 * pad - l.kernel;
        if (hspan < 0 || wspan < 0 || hspan % l.stride || wspan % l.stride)
          throw ShapeError(spec.name + ": conv does not tile its input");
        h = hspan / l.stride + 1;
        w = wspan / l.stride + 1;
        c = l.out_channels;
        net.conv.push_back(std::move(layer));
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::maxpool: {
        if (flat >= 0) throw ShapeError(spec.name + ": maxpool after flatten");
        const int hspan = h - l.window;
        const int wspan = w - l.window;
        if (hspan < 0 || wspan < 0 || hspan % l.pool_stride || wspan % l.pool_stride)
          throw ShapeError(spec.name + ": maxpool does not tile its input");
        h = hspan / l.pool_stride + 1;
        w = wspan / l.pool_stride + 1;
        break;
      }
      case LayerKind::flatten:
        if (flat >= 0) throw ShapeError(spec.name + ": repeated flatten");
        flat = static_cast<long>(c) * h * w;
        break;
      case LayerKind::dense: {
        if (flat < 0) throw ShapeError(spec.name + ": dense before flatten");
        if (l.units < 1) throw ShapeError(spec.name + ": bad dense spec");
        DenseLayer layer;
        layer.weights = Tensor({static_cast<std::size_t>(l.units),
                                static_cast<std::size_t>(flat)});
        layer.bias = Tensor({static_cast<std::size_t>(l.units)});
        flat = l.units;
        net.dense.push_back(std::move(layer));
        break;
      }
    }
  }
  if (flat != spec.classes)
    throw ShapeError(spec.name + ": network output size differs from class count");
  return net;
}

// He fan-in scaled normal init from per-parameter streams; biases zero.
// The classifier head starts at zero so an untrained network scores the
// uniform-prediction loss.
inline Network init_network(const NetworkSpec& spec, std::uint64_t seed,
                            int regularize_threshold = 3) {
  Network net = build_network(spec, regularize_threshold);
  std::uint64_t param_index = 0;
  auto fill_normal = [&](Tensor& t, double stddev) {
    Rng rng(seed, {0x696e6974ull, param_index++});
    for (double& v : t.data) v = stddev * rng.next_normal();
  };
  for (ConvLayer& l : net.conv) {
    const double fan_in = static_cast<double>(l.channels()) * l.kernel_h() * l.kernel_w();
    fill_normal(l.kernels, std::sqrt(2.0 / fan_in));
    ++param_index;  // bias stays zero but keeps its stream slot
  }
  for (std::size_t i = 0; i < net.dense.size(); ++i) {
    DenseLayer& l = net.dense[i];
    if (i + 1 == net.dense.size()) {
      ++param_index;
      continue;
    }
    fill_normal(l.weights, std::sqrt(2.0 / static_cast<double>(l.weights.extent(1))));
    ++param_index;
  }
  return net;
}

struct ForwardTrace {
  std::vector<Tensor> inputs;  // input seen by each spec layer
  Tensor logits;
};

inline Tensor network_forward(const Network& net, const Tensor& x,
                              ForwardTrace* trace = nullptr) {
  if (x.rank() != 4) throw ShapeError("network_forward: input must be [N,D,H,W]");
  Tensor cur = x;
  std::size_t ci = 0, di = 0;
  if (trace) trace->inputs.clear();
  for (const LayerSpec& l : net.spec.layers) {
    // traced activations are moved, not copied; each layer then reads its
    // input from the trace slot
    const Tensor* src = &cur;
    if (trace) {
      trace->inputs.push_back(std::move(cur));
      src = &trace->inputs.back();
    }
    switch (l.kind) {
      case LayerKind::conv:
        cur = conv2d_forward(*src, net.conv[ci++]);
        break;
      case LayerKind::relu:
        cur = relu_forward(*src);
        break;
      case LayerKind::maxpool:
        cur = maxpool_forward(*src, l.window, l.pool_stride);
        break;
      case LayerKind::flatten: {
        const std::size_t n = src->extent(0);
        const std::size_t f = src->size() / n;
        // flatten backward only needs the traced shape, so the payload may
        // be taken either way
        cur = trace ? Tensor({n, f}, std::vector<double>(src->data))
                    : Tensor({n, f}, std::move(cur.data));
        break;
      }
      case LayerKind::dense:
        cur = dense_forward(*src, net.dense[di++]);
        break;
    }
  }
  if (trace) trace->logits = cur;
  return cur;
}

// Accumulates parameter gradients into grads (must be zero_grads-shaped).
inline void network_backward(const Network& net, const ForwardTrace& trace,
                             const Tensor& grad_logits, GradSet& grads) {
  Tensor g = grad_logits;
  std::size_t ci = net.conv.size(), di = net.dense.size();
  for (std::size_t li = net.spec.layers.size(); li-- > 0;) {
    const LayerSpec& l = net.spec.layers[li];
    const Tensor& input = trace.inputs[li];
    switch (l.kind) {
      case LayerKind::conv: {
        --ci;
        ConvGrads cg = conv2d_backward(g, input, net.conv[ci]);
        const std::size_t base = conv_kernel_param_index(ci);
        for (std::size_t j = 0; j < cg.kernels.size(); ++j)
          grads.tensors[base].data[j] += cg.kernels.data[j];
        for (std::size_t j = 0; j < cg.bias.size(); ++j)
          grads.tensors[base + 1].data[j] += cg.bias.data[j];
        g = std::move(cg.input);
        break;
      }
      case LayerKind::relu:
        g = relu_backward(g, input);
        break;
      case LayerKind::maxpool:
        g = maxpool_backward(g, input, l.window, l.pool_stride);
        break;
      case LayerKind::flatten:
        g = Tensor(input.shape, std::move(g.data));
        break;
      case LayerKind::dense: {
        --di;
        DenseGrads dg = dense_backward(g, input, net.dense[di]);
        const std::size_t base = dense_weight_param_index(net, di);
        for (std::size_t j = 0; j < dg.weights.size(); ++j)
          grads.tensors[base].data[j] += dg.weights.data[j];
        for (std::size_t j = 0; j < dg.bias.size(); ++j)
          grads.tensors[base + 1].data[j] += dg.bias.data[j];
        g = std::move(dg.input);
        break;
      }
    }
  }
}

}  // namespace fbr
