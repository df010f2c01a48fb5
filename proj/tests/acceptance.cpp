// Acceptance suite: runs every structural and directional criterion at its
// stated tolerance and prints one pass/fail line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "fbr/experiment.hpp"
#include "fbr/regularize.hpp"
#include "fbr/trainer.hpp"
#include "support.hpp"

using namespace fbr;

namespace {

struct Reporter {
  std::vector<std::string> failures;

  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void require_close(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol))
      failures.push_back(what + ": got " + std::to_string(got) + ", want " +
                         std::to_string(want));
  }
};

FilterBank gabor70(int size = 19) {
  return build_gabor_bank(10, geometric_frequencies(7), size, size);
}

FilterBank union118(int size = 19) {
  return merge_banks(gabor70(size), build_lm_bank(size, size));
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.next_normal();
  return t;
}

double weighted_sum(const Tensor& t, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t.data[i] * w.data[i];
  return s;
}

// ---------------------------------------------------------------------------

void bank_structure(Reporter& rep) {
  const FilterBank gabor = gabor70();
  const FilterBank lm = build_lm_bank(19, 19);
  const FilterBank both = merge_banks(gabor, lm);
  rep.require(gabor.size() == 70, "gabor bank must have 70 members");
  rep.require(lm.size() == 48, "lm bank must have 48 members");
  rep.require(both.size() == 118, "union bank must have 118 members");
  for (const Filter& f : both.filters) {
    rep.require(std::abs(f.l2_norm() - 1.0) <= 1e-12, "member norm must be 1");
    if (!zero_mean_exempt(f.family))
      rep.require(std::abs(f.mean()) <= 1e-12, "member mean must be 0");
    else
      rep.require(f.family == FilterFamily::gaussian, "union has no external members");
  }
}

void gabor_analytics(Reporter& rep) {
  for (double wavelength : {3.0, 5.0, 11.0}) {
    GaborParams p;
    p.wavelength = wavelength;
    p.envelope_sigma = wavelength / 2.0;
    const Filter f = gabor_filter(p, 9, 9);
    rep.require_close(f.coef(4, 4), 1.0, 1e-12, "phase-0 center must be 1");
  }
  for (double theta : {0.0, 0.3, 1.0, 2.2, 3.0}) {
    GaborParams p;
    p.wavelength = 4.5;
    p.envelope_sigma = 2.0;
    p.aspect = 0.8;
    p.orientation = theta;
    const Filter a = gabor_filter(p, 11, 11);
    p.orientation = theta + std::numbers::pi;
    const Filter b = gabor_filter(p, 11, 11);
    for (std::size_t i = 0; i < a.coefficients.size(); ++i)
      rep.require(std::abs(a.coefficients[i] - b.coefficients[i]) <= 1e-12,
                  "orientation must be pi-periodic at phase 0");
  }
  {
    GaborParams p;
    p.wavelength = 4.0;
    p.envelope_sigma = 2.0;
    const Filter a = gabor_filter(p, 9, 9);
    p.orientation = std::numbers::pi / 2;
    const Filter b = gabor_filter(p, 9, 9);
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 9; ++c)
        rep.require(std::abs(b.coef(r, c) - a.coef(c, r)) <= 1e-12,
                    "quarter turn must transpose the grid");
  }
}

void gradient_suite(Reporter& rep) {
  Rng rng(1001);
  auto fd = fbrtest::fd_check;

  for (int trial = 0; trial < 20; ++trial) {  // conv2d
    const std::size_t n = 1 + rng.next_below(2);
    const std::size_t d = 1 + rng.next_below(3);
    const std::size_t m = 1 + rng.next_below(4);
    const int k = rng.next_below(2) ? 3 : 1;
    const int pad = static_cast<int>(rng.next_below(2));
    int stride = 1 + static_cast<int>(rng.next_below(2));
    const int hw = 4 + static_cast<int>(rng.next_below(3));
    if ((hw + 2 * pad - k) % stride) stride = 1;
    Tensor x = random_tensor({n, d, static_cast<std::size_t>(hw),
                              static_cast<std::size_t>(hw)}, rng);
    ConvLayer layer;
    layer.kernels = random_tensor({m, d, static_cast<std::size_t>(k),
                                   static_cast<std::size_t>(k)}, rng);
    layer.bias = random_tensor({m}, rng);
    layer.stride = stride;
    layer.padding = pad;
    const Tensor out = conv2d_forward(x, layer);
    const Tensor up = random_tensor(out.shape, rng);
    const ConvGrads g = conv2d_backward(up, x, layer);
    auto eval = [&] { return weighted_sum(conv2d_forward(x, layer), up); };
    rep.require(fd(x.data, g.input.data, eval, 1e-5) < 1e-6, "conv input grad");
    rep.require(fd(layer.kernels.data, g.kernels.data, eval, 1e-5) < 1e-6,
                "conv kernel grad");
    rep.require(fd(layer.bias.data, g.bias.data, eval, 1e-5) < 1e-6,
                "conv bias grad");
  }

  for (int trial = 0; trial < 20; ++trial) {  // dense
    const std::size_t n = 1 + rng.next_below(4);
    const std::size_t fin = 2 + rng.next_below(6);
    const std::size_t fout = 1 + rng.next_below(5);
    Tensor x = random_tensor({n, fin}, rng);
    DenseLayer layer{random_tensor({fout, fin}, rng), random_tensor({fout}, rng)};
    const Tensor up = random_tensor({n, fout}, rng);
    const DenseGrads g = dense_backward(up, x, layer);
    auto eval = [&] { return weighted_sum(dense_forward(x, layer), up); };
    rep.require(fd(x.data, g.input.data, eval, 1e-5) < 1e-6, "dense input grad");
    rep.require(fd(layer.weights.data, g.weights.data, eval, 1e-5) < 1e-6,
                "dense weight grad");
    rep.require(fd(layer.bias.data, g.bias.data, eval, 1e-5) < 1e-6,
                "dense bias grad");
  }

  for (int trial = 0; trial < 20; ++trial) {  // relu
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    const Tensor up = random_tensor(x.shape, rng);
    const Tensor g = relu_backward(up, x);
    auto eval = [&] { return weighted_sum(relu_forward(x), up); };
    rep.require(fd(x.data, g.data, eval, 1e-5) < 1e-6, "relu grad");
  }

  for (int trial = 0; trial < 20; ++trial) {  // maxpool
    const std::size_t hw = rng.next_below(2) ? 4 : 6;
    Tensor x = random_tensor({2, 2, hw, hw}, rng);
    const Tensor out = maxpool_forward(x, 2, 2);
    const Tensor up = random_tensor(out.shape, rng);
    const Tensor g = maxpool_backward(up, x, 2, 2);
    auto eval = [&] { return weighted_sum(maxpool_forward(x, 2, 2), up); };
    rep.require(fd(x.data, g.data, eval, 1e-5) < 1e-6, "maxpool grad");
  }

  for (int trial = 0; trial < 20; ++trial) {  // softmax cross entropy
    const std::size_t n = 1 + rng.next_below(5);
    const std::size_t c = 2 + rng.next_below(8);
    Tensor logits = random_tensor({n, c}, rng);
    std::vector<int> labels(n);
    for (int& l : labels) l = static_cast<int>(rng.next_below(c));
    const SoftmaxXent r = softmax_xent(logits, labels);
    auto eval = [&] { return softmax_xent(logits, labels).mean_nll; };
    rep.require(fd(logits.data, r.grad_logits.data, eval, 1e-5) < 1e-6,
                "softmax grad");
  }

  {  // fbr gradient under frozen matches
    const FilterBank bank = union118(5);
    BankCache banks(bank);
    RegConfig cfg;
    cfg.lambda_fbr = 0.7;
    cfg.bank_scale = 1.1;
    NetworkSpec spec;
    spec.name = "fd";
    spec.in_channels = 2;
    spec.in_h = 8;
    spec.in_w = 8;
    spec.classes = 2;
    spec.layers = {LayerSpec::conv2d(3, 5), LayerSpec::relu(),
                   LayerSpec::flatten(), LayerSpec::dense(2)};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Network net = init_network(spec, seed);
      const MatchAssignment a = fbr_assign(net, banks, cfg);
      GradSet g = zero_grads(net);
      fbr_gradient(net, banks, a, cfg, g);
      auto eval = [&] { return fbr_penalty(net, banks, a, cfg, false); };
      rep.require(fd(net.conv[0].kernels.data,
                     g.tensors[conv_kernel_param_index(0)].data, eval, 1e-5) < 1e-8,
                  "fbr gradient under frozen matches");
    }
  }

  {  // orthogonality gradient away from the non-smooth point
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng wr(seed + 55);
      Tensor w = random_tensor({6, 4}, wr);
      for (OrthoVariant variant : {OrthoVariant::so, OrthoVariant::dso}) {
        const Tensor g = ortho_gradient(w, variant);
        auto eval = [&] { return ortho_penalty(w, variant); };
        rep.require(fd(w.data, g.data, eval, 1e-5) < 1e-6, "ortho gradient");
      }
    }
  }
}

void matching_oracle(Reporter& rep) {
  const FilterBank bank = union118(19);
  const double rho = 1.0;
  Rng rng(2002);
  const std::size_t cells = 19 * 19;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> slice(cells);
    for (double& v : slice) v = rng.next_normal();
    const MatchResult got = match_filter(slice, 19, 19, bank, rho);

    // independently coded exhaustive scan
    std::size_t best_index = 0;
    double best_distance = -1.0;
    for (std::size_t i = 0; i < bank.filters.size(); ++i) {
      const std::vector<double>& coeffs = bank.filters[i].coefficients;
      double acc = 0.0;
      for (std::size_t j = 0; j < cells; ++j)
        acc += (slice[j] - rho * coeffs[j]) * (slice[j] - rho * coeffs[j]);
      const double dist = std::sqrt(acc);
      if (best_distance < 0.0 || dist < best_distance) {
        best_distance = dist;
        best_index = i;
      }
    }
    rep.require(got.index == best_index, "match index must equal the oracle");
    rep.require(got.distance == best_distance,
                "match distance must equal the oracle");
  }

  {  // constructed equidistant cases
    FilterBank two;
    two.width = 2;
    two.height = 1;
    Filter a, b;
    a.width = b.width = 2;
    a.height = b.height = 1;
    a.family = b.family = FilterFamily::external;
    a.coefficients = {0.25, 1.5};
    b.coefficients = {1.5, 0.25};
    two.filters = {a, b};
    const std::vector<double> mid = {0.875, 0.875};
    rep.require(match_filter(mid, 1, 2, two, 1.0).index == 0,
                "mirrored tie must break to index 0");

    FilterBank doubled = bank;
    doubled.filters.insert(doubled.filters.end(), bank.filters.begin(),
                           bank.filters.end());
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> slice(cells);
      for (double& v : slice) v = rng.next_normal();
      const MatchResult r1 = match_filter(slice, 19, 19, bank, rho);
      const MatchResult r2 = match_filter(slice, 19, 19, doubled, rho);
      rep.require(r1.index == r2.index && r1.distance == r2.distance,
                  "duplicate members must not steal a match");
    }
  }
}

void penalty_characterization(Reporter& rep) {
  RegConfig cfg;
  cfg.lambda_fbr = 0.3;
  cfg.bank_scale = 1.2;
  BankCache banks(union118(19));
  Network net = init_network(mnist_small_spec(), 77,
                             cfg.min_regularized_kernel);

  // pick bank members whose nearest neighbour is comfortably far so a small
  // perturbation cannot flip the match
  const FilterBank& bank5 = banks.at(5, 5);
  std::vector<std::size_t> separated;
  for (std::size_t i = 0; i < bank5.size(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < bank5.size(); ++j) {
      if (i == j) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < 25; ++c) {
        const double diff =
            bank5.filters[i].coefficients[c] - bank5.filters[j].coefficients[c];
        d2 += diff * diff;
      }
      nearest = std::min(nearest, std::sqrt(d2));
    }
    if (nearest > 0.05) separated.push_back(i);
  }
  rep.require(separated.size() >= 8, "need well-separated bank members");

  std::size_t pick = 0;
  for (ConvLayer& layer : net.conv) {
    if (!layer.regularize) continue;
    const std::size_t cells = 25;
    for (std::size_t m = 0; m < layer.kernel_count(); ++m)
      for (std::size_t d = 0; d < layer.channels(); ++d) {
        const Filter& f = bank5.filters[separated[pick++ % separated.size()]];
        double* dst = layer.kernels.ptr() + (m * layer.channels() + d) * cells;
        for (std::size_t j = 0; j < cells; ++j)
          dst[j] = cfg.bank_scale * f.coefficients[j];
      }
  }

  MatchAssignment a = fbr_assign(net, banks, cfg);
  rep.require(fbr_penalty(net, banks, a, cfg) == 0.0,
              "bank-copied kernels must cost exactly zero");

  const double eps = 1e-3;
  net.conv[0].kernels.data[7] += eps;
  a = fbr_assign(net, banks, cfg);
  rep.require_close(fbr_penalty(net, banks, a, cfg), cfg.lambda_fbr * eps * eps,
                    1e-12, "single-entry perturbation must cost lambda eps^2");
  net.conv[0].kernels.data[7] -= eps;

  Rng rng(31);
  double delta_sq = 0.0;
  for (std::size_t j = 0; j < 25; ++j) {
    const double delta = 1e-3 * rng.next_normal();
    net.conv[1].kernels.data[j] += delta;
    delta_sq += delta * delta;
  }
  a = fbr_assign(net, banks, cfg);
  rep.require_close(fbr_penalty(net, banks, a, cfg), cfg.lambda_fbr * delta_sq,
                    1e-12, "slice perturbation must cost lambda |delta|^2");
}

void ortho_properties(Reporter& rep) {
  {  // exact orthonormal columns
    Tensor eye({4, 4});
    for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    rep.require(ortho_penalty(eye, OrthoVariant::so) == 0.0,
                "identity must cost zero");
    Tensor perm({3, 3});
    perm.at(0, 2) = 1.0;
    perm.at(1, 0) = -1.0;
    perm.at(2, 1) = 1.0;
    rep.require(ortho_penalty(perm, OrthoVariant::dso) == 0.0,
                "signed permutation must cost zero under DSO");
  }
  {  // W = 2I
    Tensor w({2, 2});
    w.at(0, 0) = 2.0;
    w.at(1, 1) = 2.0;
    rep.require_close(ortho_penalty(w, OrthoVariant::so),
                      3.0 * std::numbers::sqrt2, 1e-12, "2I must cost 3 sqrt 2");
  }
  // random orthogonal invariance and near-zero DSO for rotations
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(seed + 7);
    Tensor w({6, 4});
    for (double& v : w.data) v = rng.next_normal();
    Tensor q({6, 6});
    for (double& v : q.data) v = rng.next_normal();
    for (std::size_t c = 0; c < 6; ++c) {
      for (std::size_t prev = 0; prev < c; ++prev) {
        double dot = 0.0;
        for (std::size_t r = 0; r < 6; ++r)
          dot += q.data[r * 6 + c] * q.data[r * 6 + prev];
        for (std::size_t r = 0; r < 6; ++r)
          q.data[r * 6 + c] -= dot * q.data[r * 6 + prev];
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < 6; ++r)
        norm += q.data[r * 6 + c] * q.data[r * 6 + c];
      norm = std::sqrt(norm);
      for (std::size_t r = 0; r < 6; ++r) q.data[r * 6 + c] /= norm;
    }
    rep.require(ortho_penalty(q, OrthoVariant::dso) <= 1e-12,
                "orthogonalized square matrix must cost ~zero under DSO");
    Tensor qw({6, 4});
    gemm_acc(q.ptr(), w.ptr(), qw.ptr(), 6, 6, 4);
    rep.require(std::abs(ortho_penalty(w, OrthoVariant::so) -
                         ortho_penalty(qw, OrthoVariant::so)) <= 1e-9,
                "SO must be invariant under orthogonal left action");
  }
}

TrainData experiment_data() {
  TrainData data;
  data.augment_options = {false, 2};
  if (const char* dir = std::getenv("FBR_MNIST_DIR")) {
    const std::string d(dir);
    data.train = load_mnist_idx(d + "/train-images-idx3-ubyte",
                                d + "/train-labels-idx1-ubyte");
    data.test = load_mnist_idx(d + "/t10k-images-idx3-ubyte",
                               d + "/t10k-labels-idx1-ubyte");
    std::printf("  using MNIST from %s\n", dir);
  } else {
    data.train = fbrtest::make_synthetic_digits(2000, 901);
    data.test = fbrtest::make_synthetic_digits(1000, 902);
    std::printf("  using the synthetic digit stand-in (set FBR_MNIST_DIR for MNIST)\n");
  }
  data.train = subset(data.train, 1000, 1);
  return data;
}

void desk_experiment(Reporter& rep) {
  const FilterBank bank = union118(19);
  const TrainData data = experiment_data();

  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 128;
  cfg.optimizer = TrainConfig::Opt::rmsprop;
  cfg.learning_rate = 1e-3;
  cfg.step_decay_period = 10;
  cfg.step_decay_factor = 0.5;
  cfg.spec_name = "mnist-small";

  double base_ce_sum = 0.0, fbr_ce_sum = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    cfg.seed = seed;
    cfg.reg = RegConfig{};
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult base = train(cfg, data, nullptr);
    cfg.reg.lambda_fbr = 1e-4;
    const TrainResult reg = train(cfg, data, &bank);
    const auto secs = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0).count();

    const MetricsRow& b = base.log.back();
    const MetricsRow& f = reg.log.back();
    std::printf("  seed %llu: baseline err %.4f ce %.5f | fbr err %.4f ce %.5f"
                " (%.0fs)\n",
                static_cast<unsigned long long>(seed), 1.0 - b.test_acc,
                b.test_ce, 1.0 - f.test_acc, f.test_ce, secs);
    rep.require(1.0 - b.test_acc < 0.05, "baseline test error must be < 5%");
    base_ce_sum += b.test_ce;
    fbr_ce_sum += f.test_ce;
  }
  std::printf("  mean ce: baseline %.6f, fbr %.6f\n", base_ce_sum / 3.0,
              fbr_ce_sum / 3.0);
  rep.require(fbr_ce_sum <= base_ce_sum,
              "mean FBR test CE must not exceed the baseline");
}

void attraction_dynamics(Reporter& rep) {
  TrainData data;
  data.train = fbrtest::make_synthetic_digits(640, 801);  // 50 batches of 128
  data.test = fbrtest::make_synthetic_digits(10, 802);
  data.augment_options = {false, 2};

  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 128;
  cfg.optimizer = TrainConfig::Opt::sgd;
  cfg.learning_rate = 1e-3;
  cfg.seed = 4;
  cfg.eval_every = 1;
  cfg.classification_off = true;
  cfg.reg.lambda_fbr = 10.0;

  const FilterBank bank = union118(19);
  const TrainResult r = train(cfg, data, &bank);

  std::vector<double> dist;
  for (const MetricsRow& row : r.log)
    if (dist.size() < 50) dist.push_back(row.mean_match_dist);
  rep.require(dist.size() == 50, "need 50 per-iteration rows");
  for (std::size_t i = 1; i < dist.size(); ++i)
    rep.require(dist[i] < dist[i - 1],
                "mean match distance must decrease at iteration " +
                    std::to_string(i));
}

void determinism_and_formats(Reporter& rep) {
  const auto dir = fbrtest::fresh_dir("acceptance_determinism");

  rep.require(metrics_csv_header() ==
                  "epoch,iteration,train_ce,fbr_term,ortho_term,decay_term,"
                  "test_ce,test_acc,lr,mean_match_dist,match_entropy",
              "metrics header must match the contract");

  {  // FBNK round trip
    const FilterBank bank = union118(19);
    save_bank(bank, (dir / "u.fbnk").string());
    const FilterBank loaded = load_bank((dir / "u.fbnk").string());
    bool same = loaded.size() == bank.size();
    for (std::size_t i = 0; same && i < bank.size(); ++i)
      same = loaded.filters[i].family == bank.filters[i].family &&
             std::memcmp(loaded.filters[i].coefficients.data(),
                         bank.filters[i].coefficients.data(),
                         bank.filters[i].coefficients.size() * sizeof(double)) == 0;
    rep.require(same, "FBNK round trip must be bit-exact");
    save_bank(loaded, (dir / "u2.fbnk").string());
    rep.require(fbrtest::slurp(dir / "u.fbnk") == fbrtest::slurp(dir / "u2.fbnk"),
                "re-saving a loaded bank must reproduce the bytes");
  }

  {  // checkpoint round trip
    Network net = init_network(mnist_small_spec(), 5);
    OptimizerState opt;
    Rng rng(6);
    for (auto& [name, t] : parameter_list(net)) {
      opt.v.emplace_back(t->shape);
      for (double& v : opt.v.back().data) v = std::abs(rng.next_normal());
    }
    opt.t = 42;
    const Checkpoint saved = make_checkpoint(net, opt, 2, config_digest("cfg"));
    save_checkpoint((dir / "a.fbck").string(), saved);
    const Checkpoint loaded = load_checkpoint((dir / "a.fbck").string());
    bool same = loaded.digest == saved.digest &&
                loaded.tensors.size() == saved.tensors.size();
    for (std::size_t i = 0; same && i < saved.tensors.size(); ++i)
      same = loaded.tensors[i].first == saved.tensors[i].first &&
             loaded.tensors[i].second.shape == saved.tensors[i].second.shape &&
             std::memcmp(loaded.tensors[i].second.ptr(),
                         saved.tensors[i].second.ptr(),
                         saved.tensors[i].second.size() * sizeof(double)) == 0;
    rep.require(same, "checkpoint round trip must be bit-exact");
    save_checkpoint((dir / "b.fbck").string(), loaded);
    rep.require(fbrtest::slurp(dir / "a.fbck") == fbrtest::slurp(dir / "b.fbck"),
                "re-saving a loaded checkpoint must reproduce the bytes");
  }

  {  // identical configs give byte-identical metrics
    fbrtest::write_dataset_idx(dir, "train", fbrtest::make_synthetic_digits(10, 61));
    fbrtest::write_dataset_idx(dir, "test", fbrtest::make_synthetic_digits(5, 62));
    ExperimentConfig cfg;
    cfg.mnist_train_images = (dir / "train-images.idx").string();
    cfg.mnist_train_labels = (dir / "train-labels.idx").string();
    cfg.mnist_test_images = (dir / "test-images.idx").string();
    cfg.mnist_test_labels = (dir / "test-labels.idx").string();
    cfg.bank_size = 9;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 25;
    cfg.train.eval_every = 1;
    cfg.train.seed = 77;
    cfg.train.reg.lambda_fbr = 1e-3;
    cfg.train.reg.gamma_ortho = 1e-4;

    cfg.out_dir = (dir / "runA").string();
    run_experiment(cfg);
    cfg.out_dir = (dir / "runB").string();
    run_experiment(cfg);
    rep.require(fbrtest::slurp(dir / "runA" / "metrics.csv") ==
                    fbrtest::slurp(dir / "runB" / "metrics.csv"),
                "identical (config, seed) must give byte-identical metrics");
    rep.require(!fbrtest::slurp(dir / "runA" / "metrics.csv").empty(),
                "metrics.csv must not be empty");
  }
}

void schedule_check(Reporter& rep) {
  TrainData data;
  data.train = fbrtest::make_synthetic_digits(2, 701);
  data.test = fbrtest::make_synthetic_digits(2, 702);
  data.augment_options = {false, 2};

  TrainConfig cfg;
  cfg.epochs = 21;
  cfg.batch_size = 20;
  cfg.learning_rate = 1e-3;
  cfg.step_decay_period = 10;
  cfg.step_decay_factor = 0.5;
  cfg.seed = 9;
  const TrainResult r = train(cfg, data, nullptr);

  rep.require(r.log.size() == 21, "one epoch row per epoch");
  auto lr_at = [&](int epoch) {
    for (const MetricsRow& row : r.log)
      if (row.epoch == epoch) return row.lr;
    return -1.0;
  };
  rep.require(lr_at(0) == 1e-3, "epoch 0 lr must be 1e-3");
  rep.require(lr_at(10) == 5e-4, "epoch 10 lr must be 5e-4");
  rep.require(lr_at(20) == 2.5e-4, "epoch 20 lr must be 2.5e-4");
  for (int e = 0; e < 21; ++e)
    rep.require(lr_at(e) == step_decay(1e-3, e, 10, 0.5),
                "epoch lr must equal the closed-form schedule");
}

struct Criterion {
  const char* name;
  void (*fn)(Reporter&);
  double budget_seconds;
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {"bank cardinality and structure", bank_structure, 1.0},
      {"gabor analytics", gabor_analytics, 1.0},
      {"gradient suite", gradient_suite, 30.0},
      {"matching oracle", matching_oracle, 5.0},
      {"penalty characterization", penalty_characterization, 30.0},
      {"orthogonality properties", ortho_properties, 5.0},
      {"desk-scale experiment", desk_experiment, 900.0},
      {"attraction dynamics", attraction_dynamics, 120.0},
      {"determinism and formats", determinism_and_formats, 120.0},
      {"schedule check", schedule_check, 60.0},
  };

  const std::string only = argc > 1 ? argv[1] : "";
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::string(c.name).find(only) == std::string::npos)
      continue;
    Reporter rep;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.fn(rep);
    } catch (const std::exception& e) {
      rep.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds)
      rep.failures.push_back("runtime " + std::to_string(secs) +
                             "s exceeds budget " +
                             std::to_string(c.budget_seconds) + "s");
    if (rep.failures.empty()) {
      std::printf("[PASS] %s (%.1fs)\n", c.name, secs);
    } else {
      ++failures;
      std::printf("[FAIL] %s (%.1fs): %s", c.name, secs,
                  rep.failures.front().c_str());
      if (rep.failures.size() > 1)
        std::printf(" (+%zu more)", rep.failures.size() - 1);
      std::printf("\n");
    }
    std::fflush(stdout);
  }
  std::printf(failures ? "acceptance: %d criterion(s) failed\n"
                       : "acceptance: all criteria passed\n",
              failures);
  return failures;
}
