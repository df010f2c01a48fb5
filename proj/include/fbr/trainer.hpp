#pragma once

#include <array>
#include <cstdio>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbr/dataio.hpp"
#include "fbr/errors.hpp"
#include "fbr/network.hpp"
#include "fbr/parallel.hpp"
#include "fbr/regularize.hpp"

namespace fbr {

struct TrainConfig {
  int epochs = 5;
  int batch_size = 128;
  enum class Opt { rmsprop, sgd } optimizer = Opt::rmsprop;
  double learning_rate = 1e-3;
  double rmsprop_rho = 0.9;
  double rmsprop_eps = 1e-8;
  double rmsprop_decay = 0.0;  // per-update learning-rate decay
  int step_decay_period = 0;   // epochs; 0 disables the schedule
  double step_decay_factor = 0.5;
  std::uint64_t seed = 0;
  int eval_every = 0;  // iterations between mid-epoch metric rows; 0 = off
  bool augment = false;
  bool sample_with_replacement = false;
  bool classification_off = false;  // debug: train on the penalty terms alone
  bool track_best = false;
  RegConfig reg;
  std::string spec_name = "mnist-small";

  void validate() const {
    if (epochs < 0) throw ParamError("train config: negative epoch count");
    if (batch_size < 1) throw ParamError("train config: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ParamError("train config: learning_rate must be > 0");
    if (!(step_decay_factor > 0.0) || step_decay_factor > 1.0)
      throw ParamError("train config: step_decay_factor must be in (0,1]");
    if (step_decay_period < 0) throw ParamError("train config: negative decay period");
    if (eval_every < 0) throw ParamError("train config: negative eval_every");
    if (!(rmsprop_rho >= 0.0) || rmsprop_rho >= 1.0)
      throw ParamError("train config: rmsprop_rho must be in [0,1)");
    reg.validate();
  }
};

struct MetricsRow {
  int epoch = 0;
  long iteration = 0;
  double train_ce = 0.0;
  double fbr_term = 0.0;
  double ortho_term = 0.0;
  double decay_term = 0.0;
  double test_ce = 0.0;
  double test_acc = 0.0;
  double lr = 0.0;
  double mean_match_dist = 0.0;
  double match_entropy = 0.0;
};

inline std::string metrics_csv_header() {
  return "epoch,iteration,train_ce,fbr_term,ortho_term,decay_term,test_ce,"
         "test_acc,lr,mean_match_dist,match_entropy";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%d,%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                r.epoch, r.iteration, r.train_ce, r.fbr_term, r.ortho_term,
                r.decay_term, r.test_ce, r.test_acc, r.lr, r.mean_match_dist,
                r.match_entropy);
  return buf;
}

// lr0 * factor^(epoch / period), computed by repeated multiplication so that
// halving schedules stay exact.
inline double step_decay(double lr0, int epoch, int period, double factor) {
  if (period < 1) throw ParamError("step_decay: period must be >= 1");
  if (epoch < 0) throw ParamError("step_decay: negative epoch");
  double lr = lr0;
  for (int k = 0; k < epoch / period; ++k) lr *= factor;
  return lr;
}

struct OptimizerState {
  std::vector<Tensor> v;  // second-moment accumulators, parameter-aligned
  long t = 0;             // updates performed so far
};

// v <- rho v + (1-rho) g^2 ; w <- w - lr_t g / (sqrt(v) + eps) with
// lr_t = lr / (1 + lr_decay * t).
inline void rmsprop_step(std::vector<std::pair<std::string, Tensor*>> params,
                         const GradSet& grads, OptimizerState& state, double lr,
                         double rho = 0.9, double eps = 1e-8,
                         double lr_decay = 0.0) {
  if (params.size() != grads.tensors.size())
    throw ShapeError("rmsprop: parameter/gradient count mismatch");
  if (state.v.empty())
    for (auto& [name, t] : params) state.v.emplace_back(t->shape);
  if (state.v.size() != params.size())
    throw ShapeError("rmsprop: state does not match parameters");

  const double lr_t = lr / (1.0 + lr_decay * static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].second;
    const Tensor& g = grads.tensors[i];
    Tensor& v = state.v[i];
    if (g.shape != w.shape || v.shape != w.shape)
      throw ShapeError("rmsprop: tensor shape mismatch");
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.data[j];
      v.data[j] = rho * v.data[j] + (1.0 - rho) * gj * gj;
      w.data[j] -= lr_t * gj / (std::sqrt(v.data[j]) + eps);
    }
  }
  ++state.t;
}

inline void sgd_step(std::vector<std::pair<std::string, Tensor*>> params,
                     const GradSet& grads, double lr) {
  if (params.size() != grads.tensors.size())
    throw ShapeError("sgd: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].second;
    const Tensor& g = grads.tensors[i];
    if (g.shape != w.shape) throw ShapeError("sgd: tensor shape mismatch");
    for (std::size_t j = 0; j < w.size(); ++j) w.data[j] -= lr * g.data[j];
  }
}

namespace detail {

constexpr std::size_t kBatchChunk = 16;

inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t item = t.size() / t.extent(0);
  std::vector<std::size_t> shape = t.shape;
  shape[0] = end - begin;
  Tensor out(std::move(shape));
  std::copy(t.ptr() + begin * item, t.ptr() + end * item, out.ptr());
  return out;
}

// Forward (and optionally backward) over the batch in fixed chunks; chunk
// partials are reduced in index order so results do not depend on threads.
inline double batch_loss_and_grads(const Network& net, const Tensor& x,
                                   const std::vector<int>& labels,
                                   GradSet* grads) {
  const std::size_t n = x.extent(0);
  const std::size_t chunks = (n + kBatchChunk - 1) / kBatchChunk;
  std::vector<double> nll(chunks, 0.0);
  std::vector<GradSet> partial;
  if (grads) {
    partial.reserve(chunks);
    for (std::size_t i = 0; i < chunks; ++i) partial.push_back(zero_grads(net));
  }
  run_chunked(n, kBatchChunk, [&](std::size_t ci, std::size_t b, std::size_t e) {
    const Tensor cx = slice_rows(x, b, e);
    const std::vector<int> cl(labels.begin() + b, labels.begin() + e);
    if (grads) {
      ForwardTrace trace;
      const Tensor logits = network_forward(net, cx, &trace);
      SoftmaxXent sm = softmax_xent(logits, cl, 1.0 / static_cast<double>(n));
      nll[ci] = sm.sum_nll;
      network_backward(net, trace, sm.grad_logits, partial[ci]);
    } else {
      const Tensor logits = network_forward(net, cx);
      nll[ci] = softmax_xent(logits, cl).sum_nll;
    }
  });
  double total = 0.0;
  for (double v : nll) total += v;
  if (grads)
    for (std::size_t ci = 0; ci < chunks; ++ci) grads->add_scaled(partial[ci], 1.0);
  return total / static_cast<double>(n);
}

}  // namespace detail

struct EvalResult {
  double ce = 0.0;
  double accuracy = 0.0;
};

// Mean CE and top-1 accuracy over the whole set; expects normalized images.
inline EvalResult evaluate(const Network& net, const LabeledDataset& ds) {
  const std::size_t n = ds.size();
  if (n == 0) throw DataError("evaluate: empty dataset");
  const std::size_t chunks = (n + detail::kBatchChunk - 1) / detail::kBatchChunk;
  std::vector<double> nll(chunks, 0.0);
  std::vector<std::size_t> correct(chunks, 0);
  run_chunked(n, detail::kBatchChunk, [&](std::size_t ci, std::size_t b, std::size_t e) {
    const Tensor cx = detail::slice_rows(ds.images, b, e);
    const std::vector<int> cl(ds.labels.begin() + b, ds.labels.begin() + e);
    const Tensor logits = network_forward(net, cx);
    nll[ci] = softmax_xent(logits, cl).sum_nll;
    const std::size_t c = logits.extent(1);
    for (std::size_t i = 0; i < cl.size(); ++i) {
      const double* row = logits.ptr() + i * c;
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (row[j] > row[best]) best = j;
      if (static_cast<int>(best) == cl[i]) ++correct[ci];
    }
  });
  double nll_total = 0.0;
  std::size_t correct_total = 0;
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    nll_total += nll[ci];
    correct_total += correct[ci];
  }
  return {nll_total / static_cast<double>(n),
          static_cast<double>(correct_total) / static_cast<double>(n)};
}

// FBCK checkpoint: "FBCK", u32 version, 32-byte config digest, u32 count,
// then per tensor a length-prefixed name, u32 rank, u64 extents and
// little-endian doubles.
struct Checkpoint {
  std::array<std::uint8_t, 32> digest{};
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

// 32-byte digest of a canonical config rendering (four salted FNV-1a lanes).
inline std::array<std::uint8_t, 32> config_digest(const std::string& text) {
  static constexpr std::uint64_t salts[4] = {
      0xcbf29ce484222325ull, 0x9ae16a3b2f90404full, 0xc2b2ae3d27d4eb4full,
      0x165667b19e3779f9ull};
  std::array<std::uint8_t, 32> out{};
  for (int lane = 0; lane < 4; ++lane) {
    std::uint64_t h = salts[lane];
    for (unsigned char ch : text) {
      h ^= ch;
      h *= 0x100000001b3ull;
      h ^= h >> 29;
    }
    for (int b = 0; b < 8; ++b)
      out[static_cast<std::size_t>(lane) * 8 + b] =
          static_cast<std::uint8_t>((h >> (8 * b)) & 0xFF);
  }
  return out;
}

namespace detail {

inline void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u32le_t(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64le_t(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64le(out, bits);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out = "FBCK";
  detail::put_u32le_t(out, 1);
  out.append(reinterpret_cast<const char*>(ckpt.digest.data()), 32);
  detail::put_u32le_t(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (auto& [name, t] : ckpt.tensors) {
    detail::put_u32le_t(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    detail::put_u32le_t(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape) detail::put_u64le(out, e);
    for (double v : t.data) detail::put_f64le_t(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("save_checkpoint: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("load_checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size())
      throw FormatError("load_checkpoint: truncated payload");
  };
  auto u32 = [&]() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i]))
           << (8 * i);
    pos += 4;
    return v;
  };
  auto u64 = [&]() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i]))
           << (8 * i);
    pos += 8;
    return v;
  };

  need(4);
  if (std::memcmp(bytes.data(), "FBCK", 4) != 0)
    throw FormatError("load_checkpoint: bad magic");
  pos += 4;
  if (u32() != 1) throw FormatError("load_checkpoint: unsupported version");
  Checkpoint ckpt;
  need(32);
  std::memcpy(ckpt.digest.data(), bytes.data() + pos, 32);
  pos += 32;
  const std::uint32_t count = u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = u32();
    need(name_len);
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    const std::uint32_t rank = u32();
    if (rank > 8) throw FormatError("load_checkpoint: absurd tensor rank");
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t r = 0; r < rank; ++r)
      shape[r] = static_cast<std::size_t>(u64());
    const std::size_t cells = Tensor::element_count(shape);
    Tensor t(shape);
    for (std::size_t c = 0; c < cells; ++c) {
      const std::uint64_t bits = u64();
      std::memcpy(&t.data[c], &bits, 8);
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (pos != bytes.size()) throw FormatError("load_checkpoint: trailing data");
  return ckpt;
}

inline Checkpoint make_checkpoint(const Network& net, const OptimizerState& opt,
                                  int epochs_done,
                                  const std::array<std::uint8_t, 32>& digest) {
  Checkpoint ckpt;
  ckpt.digest = digest;
  const auto params = parameter_list(net);
  for (auto& [name, t] : params) ckpt.tensors.emplace_back(name, *t);
  for (std::size_t i = 0; i < opt.v.size(); ++i)
    ckpt.tensors.emplace_back("opt.v." + params[i].first, opt.v[i]);
  Tensor progress({2});
  progress.data[0] = static_cast<double>(epochs_done);
  progress.data[1] = static_cast<double>(opt.t);
  ckpt.tensors.emplace_back("state.progress", std::move(progress));
  return ckpt;
}

inline void restore_checkpoint(const Checkpoint& ckpt, Network& net,
                               OptimizerState& opt, int& epochs_done) {
  auto params = parameter_list(net);
  for (auto& [name, t] : params) {
    const Tensor* src = ckpt.find(name);
    if (!src || src->shape != t->shape)
      throw FormatError("checkpoint: missing or mismatched tensor " + name);
    *t = *src;
  }
  opt.v.clear();
  for (auto& [name, t] : params) {
    const Tensor* v = ckpt.find("opt.v." + name);
    if (!v) {
      opt.v.clear();
      break;
    }
    opt.v.push_back(*v);
  }
  const Tensor* progress = ckpt.find("state.progress");
  if (!progress || progress->size() != 2)
    throw FormatError("checkpoint: missing progress record");
  epochs_done = static_cast<int>(progress->data[0]);
  opt.t = static_cast<long>(progress->data[1]);
}

struct TrainData {
  LabeledDataset train;  // raw pixel values; normalization happens inside
  LabeledDataset test;
  AugmentOptions augment_options;
};

struct TrainResult {
  Network net;
  OptimizerState opt;
  std::vector<MetricsRow> log;
  ChannelStats stats;
  int epochs_done = 0;
  std::optional<std::pair<int, Network>> best;  // (epoch, weights) by test CE
  double best_ce = 0.0;
};

// One iteration = fresh bank matching over the regularized layers, a sampled
// batch, the combined loss, one backprop update. Bit-deterministic in
// (config, data, seed).
inline TrainResult train(
    const TrainConfig& cfg, const TrainData& data, const FilterBank* bank,
    const Checkpoint* resume = nullptr,
    const std::function<void(const MetricsRow&)>& on_row = {}) {
  cfg.validate();
  const NetworkSpec spec = named_spec(cfg.spec_name);
  if (static_cast<std::size_t>(spec.in_channels) != data.train.channels() ||
      static_cast<std::size_t>(spec.in_h) != data.train.image_h() ||
      static_cast<std::size_t>(spec.in_w) != data.train.image_w())
    throw ShapeError("train: dataset dimensions do not match the network spec");
  if (data.train.size() == 0 || data.test.size() == 0)
    throw DataError("train: empty dataset");

  TrainResult result;
  result.net = init_network(spec, cfg.seed, cfg.reg.min_regularized_kernel);
  if (resume) restore_checkpoint(*resume, result.net, result.opt, result.epochs_done);

  std::optional<BankCache> banks;
  if (cfg.reg.lambda_fbr > 0.0) {
    if (!bank) throw ParamError("train: FBR is enabled but no bank was given");
    banks.emplace(*bank);
  }

  result.stats = data.train.normalized ? data.train.stats
                                       : compute_channel_stats(data.train);
  LabeledDataset test_norm = data.test;
  if (!test_norm.normalized) normalize(test_norm, &result.stats);

  auto params = parameter_list(result.net);
  const std::size_t n_train = data.train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t iters_per_epoch = (n_train + batch - 1) / batch;
  long t = result.opt.t;

  auto emit = [&](const MetricsRow& row) {
    result.log.push_back(row);
    if (on_row) on_row(row);
  };

  auto reg_snapshot = [&](double ce) {
    return total_regularized_loss(ce, result.net,
                                  banks ? &*banks : nullptr, cfg.reg);
  };

  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  for (int epoch = result.epochs_done; epoch < cfg.epochs; ++epoch) {
    const double lr_e =
        cfg.step_decay_period >= 1
            ? step_decay(cfg.learning_rate, epoch, cfg.step_decay_period,
                         cfg.step_decay_factor)
            : cfg.learning_rate;

    if (!cfg.sample_with_replacement) {
      // The permutation must depend on (seed, epoch) alone so a resumed run
      // draws the same batches as an uninterrupted one.
      for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
      Rng shuffle_rng(cfg.seed, {0x73687566ull, static_cast<std::uint64_t>(epoch)});
      shuffle_rng.shuffle(order);
    }

    double epoch_nll = 0.0;
    std::size_t epoch_samples = 0;

    for (std::size_t b = 0; b < iters_per_epoch; ++b) {
      std::vector<std::size_t> idx;
      if (cfg.sample_with_replacement) {
        Rng draw(cfg.seed, {0x64726177ull, static_cast<std::uint64_t>(epoch), b});
        idx.resize(batch);
        for (std::size_t i = 0; i < batch; ++i)
          idx[i] = draw.next_below(n_train);
      } else {
        const std::size_t lo = b * batch;
        const std::size_t hi = std::min(n_train, lo + batch);
        idx.assign(order.begin() + lo, order.begin() + hi);
      }

      LabeledDataset batch_ds = gather(data.train, idx);
      if (cfg.augment && !data.train.normalized) {
        Rng aug(cfg.seed, {0x617567ull, static_cast<std::uint64_t>(epoch), b});
        augment_batch(batch_ds.images, aug, data.augment_options);
      }
      if (!batch_ds.normalized) apply_channel_stats(batch_ds.images, result.stats);

      GradSet grads = zero_grads(result.net);
      const double batch_ce = detail::batch_loss_and_grads(
          result.net, batch_ds.images, batch_ds.labels,
          cfg.classification_off ? nullptr : &grads);
      const TotalLoss tl = total_regularized_loss(
          batch_ce, result.net, banks ? &*banks : nullptr, cfg.reg, &grads);
      if (!std::isfinite(tl.total))
        throw NumericError("train: non-finite loss", t);

      if (cfg.eval_every > 0 && t % cfg.eval_every == 0) {
        const EvalResult ev = evaluate(result.net, test_norm);
        emit({epoch, t, batch_ce, tl.fbr, tl.ortho, tl.decay, ev.ce,
              ev.accuracy, lr_e, tl.assignment.mean_distance(),
              tl.assignment.index_entropy()});
      }

      if (cfg.optimizer == TrainConfig::Opt::rmsprop)
        rmsprop_step(params, grads, result.opt, lr_e, cfg.rmsprop_rho,
                     cfg.rmsprop_eps, cfg.rmsprop_decay);
      else
        sgd_step(params, grads, lr_e);
      ++t;
      if (cfg.optimizer != TrainConfig::Opt::rmsprop) result.opt.t = t;

      for (auto& [name, w] : params)
        if (!w->all_finite())
          throw NumericError("train: non-finite parameters", t - 1);

      epoch_nll += batch_ce * static_cast<double>(idx.size());
      epoch_samples += idx.size();
    }

    // Epoch summary from the post-epoch weights.
    const double epoch_ce =
        epoch_samples ? epoch_nll / static_cast<double>(epoch_samples) : 0.0;
    const TotalLoss tl = reg_snapshot(epoch_ce);
    const EvalResult ev = evaluate(result.net, test_norm);
    emit({epoch, t, epoch_ce, tl.fbr, tl.ortho, tl.decay, ev.ce, ev.accuracy,
          lr_e, tl.assignment.mean_distance(), tl.assignment.index_entropy()});

    result.epochs_done = epoch + 1;
    if (cfg.track_best && (!result.best || ev.ce < result.best_ce)) {
      result.best = {epoch, result.net};
      result.best_ce = ev.ce;
    }
  }
  return result;
}

}  // namespace fbr
