#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fbr/bank_io.hpp"
#include "fbr/dataio.hpp"
#include "fbr/errors.hpp"
#include "fbr/filter.hpp"
#include "fbr/trainer.hpp"

namespace fbr {

// Flat key=value experiment description. Every run writes the fully resolved
// form (all keys, defaults expanded) next to its outputs.
struct ExperimentConfig {
  std::string dataset = "mnist";  // mnist | cifar10
  std::string mnist_train_images, mnist_train_labels;
  std::string mnist_test_images, mnist_test_labels;
  std::vector<std::string> cifar_train_batches;
  std::string cifar_test_batch;
  long subset_per_class = 0;  // 0 keeps the full training split
  std::uint64_t subset_seed = 1;

  std::string bank = "union";  // gabor | lm | union | external | none
  std::string bank_path;
  int bank_size = 19;
  int gabor_orientations = 10;
  int gabor_frequencies = 7;
  double gabor_freq_min = 0.05;
  double gabor_freq_max = 0.35;

  TrainConfig train;
  std::string out_dir = "run";

  // Recorded after the run so evaluation can replay normalization exactly.
  std::vector<double> norm_mean, norm_std;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (!end || *end != '\0' || v.empty())
    throw ParamError("config: bad number for " + key);
  return d;
}

inline long parse_long(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const long d = std::strtol(v.c_str(), &end, 10);
  if (!end || *end != '\0' || v.empty())
    throw ParamError("config: bad integer for " + key);
  return d;
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  char* end = nullptr;
  const unsigned long long d = std::strtoull(v.c_str(), &end, 10);
  if (!end || *end != '\0' || v.empty())
    throw ParamError("config: bad integer for " + key);
  return d;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw ParamError("config: bad flag for " + key);
}

inline std::string join_csv(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back(',');
    out += items[i];
  }
  return out;
}

inline std::string join_doubles(const std::vector<double>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back(',');
    out += fmt_double(items[i]);
  }
  return out;
}

inline std::vector<double> parse_doubles(const std::string& v,
                                         const std::string& key) {
  std::vector<double> out;
  for (const std::string& item : split_csv(v))
    out.push_back(parse_double(item, key));
  return out;
}

}  // namespace detail

inline void apply_config_key(ExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
  using namespace detail;
  TrainConfig& t = cfg.train;
  RegConfig& r = t.reg;
  if (key == "dataset") cfg.dataset = value;
  else if (key == "mnist_train_images") cfg.mnist_train_images = value;
  else if (key == "mnist_train_labels") cfg.mnist_train_labels = value;
  else if (key == "mnist_test_images") cfg.mnist_test_images = value;
  else if (key == "mnist_test_labels") cfg.mnist_test_labels = value;
  else if (key == "cifar_train_batches") cfg.cifar_train_batches = split_csv(value);
  else if (key == "cifar_test_batch") cfg.cifar_test_batch = value;
  else if (key == "subset_per_class") cfg.subset_per_class = parse_long(value, key);
  else if (key == "subset_seed") cfg.subset_seed = parse_u64(value, key);
  else if (key == "bank") cfg.bank = value;
  else if (key == "bank_path") cfg.bank_path = value;
  else if (key == "bank_size") cfg.bank_size = static_cast<int>(parse_long(value, key));
  else if (key == "gabor_orientations") cfg.gabor_orientations = static_cast<int>(parse_long(value, key));
  else if (key == "gabor_frequencies") cfg.gabor_frequencies = static_cast<int>(parse_long(value, key));
  else if (key == "gabor_freq_min") cfg.gabor_freq_min = parse_double(value, key);
  else if (key == "gabor_freq_max") cfg.gabor_freq_max = parse_double(value, key);
  else if (key == "spec") t.spec_name = value;
  else if (key == "epochs") t.epochs = static_cast<int>(parse_long(value, key));
  else if (key == "batch_size") t.batch_size = static_cast<int>(parse_long(value, key));
  else if (key == "optimizer") {
    if (value == "rmsprop") t.optimizer = TrainConfig::Opt::rmsprop;
    else if (value == "sgd") t.optimizer = TrainConfig::Opt::sgd;
    else throw ParamError("config: unknown optimizer " + value);
  }
  else if (key == "learning_rate") t.learning_rate = parse_double(value, key);
  else if (key == "rmsprop_rho") t.rmsprop_rho = parse_double(value, key);
  else if (key == "rmsprop_eps") t.rmsprop_eps = parse_double(value, key);
  else if (key == "rmsprop_decay") t.rmsprop_decay = parse_double(value, key);
  else if (key == "step_decay_period") t.step_decay_period = static_cast<int>(parse_long(value, key));
  else if (key == "step_decay_factor") t.step_decay_factor = parse_double(value, key);
  else if (key == "seed") t.seed = parse_u64(value, key);
  else if (key == "eval_every") t.eval_every = static_cast<int>(parse_long(value, key));
  else if (key == "augment") t.augment = parse_bool(value, key);
  else if (key == "sample_with_replacement") t.sample_with_replacement = parse_bool(value, key);
  else if (key == "classification_off") t.classification_off = parse_bool(value, key);
  else if (key == "track_best") t.track_best = parse_bool(value, key);
  else if (key == "lambda_fbr") r.lambda_fbr = parse_double(value, key);
  else if (key == "gamma_ortho") r.gamma_ortho = parse_double(value, key);
  else if (key == "l1_coeff") r.l1_coeff = parse_double(value, key);
  else if (key == "l2_coeff") r.l2_coeff = parse_double(value, key);
  else if (key == "ortho_variant") {
    if (value == "so") r.ortho_variant = OrthoVariant::so;
    else if (value == "dso") r.ortho_variant = OrthoVariant::dso;
    else throw ParamError("config: unknown ortho_variant " + value);
  }
  else if (key == "ortho_squared") r.ortho_squared = parse_bool(value, key);
  else if (key == "min_regularized_kernel") r.min_regularized_kernel = static_cast<int>(parse_long(value, key));
  else if (key == "bank_scale") r.bank_scale = parse_double(value, key);
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "norm_mean") cfg.norm_mean = parse_doubles(value, key);
  else if (key == "norm_std") cfg.norm_std = parse_doubles(value, key);
  else throw ParamError("config: unknown key " + key);
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ParamError("config: expected key=value, got: " + stripped);
    apply_config_key(cfg, detail::trim(stripped.substr(0, eq)),
                     detail::trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

// Canonical rendering: every key, fixed order, %.17g doubles.
inline std::string serialize_experiment_config(const ExperimentConfig& cfg) {
  using namespace detail;
  const TrainConfig& t = cfg.train;
  const RegConfig& r = t.reg;
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  };
  kv("dataset", cfg.dataset);
  kv("mnist_train_images", cfg.mnist_train_images);
  kv("mnist_train_labels", cfg.mnist_train_labels);
  kv("mnist_test_images", cfg.mnist_test_images);
  kv("mnist_test_labels", cfg.mnist_test_labels);
  kv("cifar_train_batches", join_csv(cfg.cifar_train_batches));
  kv("cifar_test_batch", cfg.cifar_test_batch);
  kv("subset_per_class", std::to_string(cfg.subset_per_class));
  kv("subset_seed", std::to_string(cfg.subset_seed));
  kv("bank", cfg.bank);
  kv("bank_path", cfg.bank_path);
  kv("bank_size", std::to_string(cfg.bank_size));
  kv("gabor_orientations", std::to_string(cfg.gabor_orientations));
  kv("gabor_frequencies", std::to_string(cfg.gabor_frequencies));
  kv("gabor_freq_min", fmt_double(cfg.gabor_freq_min));
  kv("gabor_freq_max", fmt_double(cfg.gabor_freq_max));
  kv("spec", t.spec_name);
  kv("epochs", std::to_string(t.epochs));
  kv("batch_size", std::to_string(t.batch_size));
  kv("optimizer", t.optimizer == TrainConfig::Opt::rmsprop ? "rmsprop" : "sgd");
  kv("learning_rate", fmt_double(t.learning_rate));
  kv("rmsprop_rho", fmt_double(t.rmsprop_rho));
  kv("rmsprop_eps", fmt_double(t.rmsprop_eps));
  kv("rmsprop_decay", fmt_double(t.rmsprop_decay));
  kv("step_decay_period", std::to_string(t.step_decay_period));
  kv("step_decay_factor", fmt_double(t.step_decay_factor));
  kv("seed", std::to_string(t.seed));
  kv("eval_every", std::to_string(t.eval_every));
  kv("augment", t.augment ? "1" : "0");
  kv("sample_with_replacement", t.sample_with_replacement ? "1" : "0");
  kv("classification_off", t.classification_off ? "1" : "0");
  kv("track_best", t.track_best ? "1" : "0");
  kv("lambda_fbr", fmt_double(r.lambda_fbr));
  kv("gamma_ortho", fmt_double(r.gamma_ortho));
  kv("l1_coeff", fmt_double(r.l1_coeff));
  kv("l2_coeff", fmt_double(r.l2_coeff));
  kv("ortho_variant", r.ortho_variant == OrthoVariant::so ? "so" : "dso");
  kv("ortho_squared", r.ortho_squared ? "1" : "0");
  kv("min_regularized_kernel", std::to_string(r.min_regularized_kernel));
  kv("bank_scale", fmt_double(r.bank_scale));
  kv("out_dir", cfg.out_dir);
  kv("norm_mean", join_doubles(cfg.norm_mean));
  kv("norm_std", join_doubles(cfg.norm_std));
  return out;
}

inline std::array<std::uint8_t, 32> experiment_digest(const ExperimentConfig& cfg) {
  return config_digest(serialize_experiment_config(cfg));
}

// Builds the regularization bank a config asks for; external banks are
// finalized after loading (unit norm, external family keeps its mean).
inline FilterBank build_bank_recipe(const ExperimentConfig& cfg) {
  if (cfg.bank == "gabor" || cfg.bank == "union") {
    FilterBank gabor = build_gabor_bank(
        cfg.gabor_orientations,
        geometric_frequencies(cfg.gabor_frequencies, cfg.gabor_freq_min,
                              cfg.gabor_freq_max),
        cfg.bank_size, cfg.bank_size);
    if (cfg.bank == "gabor") return gabor;
    return merge_banks(gabor, build_lm_bank(cfg.bank_size, cfg.bank_size));
  }
  if (cfg.bank == "lm") return build_lm_bank(cfg.bank_size, cfg.bank_size);
  if (cfg.bank == "external") {
    if (cfg.bank_path.empty())
      throw ParamError("config: external bank needs bank_path");
    return finalize_bank(load_bank(cfg.bank_path));
  }
  throw ParamError("config: unknown bank recipe " + cfg.bank);
}

inline TrainData load_datasets(const ExperimentConfig& cfg) {
  TrainData data;
  if (cfg.dataset == "mnist") {
    data.train = load_mnist_idx(cfg.mnist_train_images, cfg.mnist_train_labels);
    data.test = load_mnist_idx(cfg.mnist_test_images, cfg.mnist_test_labels);
    data.augment_options = {false, 2};  // digits keep their chirality
  } else if (cfg.dataset == "cifar10") {
    data.train = load_cifar10(cfg.cifar_train_batches);
    data.test = load_cifar10({cfg.cifar_test_batch});
    data.augment_options = {true, 2};
  } else {
    throw ParamError("config: unknown dataset " + cfg.dataset);
  }
  if (cfg.subset_per_class > 0)
    data.train = subset(data.train,
                        static_cast<std::size_t>(cfg.subset_per_class),
                        cfg.subset_seed);
  return data;
}

struct RunOutput {
  std::filesystem::path dir;
  TrainResult result;
  ExperimentConfig resolved;
};

// Executes a config end to end: loads data, builds the bank, trains with the
// metrics CSV streamed row by row, then writes the resolved config and final
// checkpoint. Outputs carry no timestamps, so identical inputs rewrite
// byte-identical files.
inline RunOutput run_experiment(ExperimentConfig cfg) {
  cfg.train.validate();
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);

  TrainData data = load_datasets(cfg);
  FilterBank bank;
  const bool have_bank = cfg.bank != "none";
  if (have_bank) bank = build_bank_recipe(cfg);

  std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw Error("run: cannot open metrics.csv");
  csv << metrics_csv_header() << "\n";
  csv.flush();

  RunOutput out;
  out.dir = dir;
  try {
    out.result = train(cfg.train, data, have_bank ? &bank : nullptr, nullptr,
                       [&](const MetricsRow& row) {
                         csv << metrics_csv_row(row) << "\n";
                         csv.flush();
                       });
  } catch (const NumericError&) {
    csv.flush();
    throw;
  }

  cfg.norm_mean = out.result.stats.mean;
  cfg.norm_std = out.result.stats.stddev;
  out.resolved = cfg;

  const std::string resolved_text = serialize_experiment_config(cfg);
  {
    std::ofstream rc(dir / "config.resolved", std::ios::trunc);
    rc << resolved_text;
  }
  const auto digest = config_digest(resolved_text);
  save_checkpoint((dir / "final.fbck").string(),
                  make_checkpoint(out.result.net, out.result.opt,
                                  out.result.epochs_done, digest));
  if (out.result.best) {
    OptimizerState empty_state;
    save_checkpoint((dir / "best.fbck").string(),
                    make_checkpoint(out.result.best->second, empty_state,
                                    out.result.best->first + 1, digest));
  }
  return out;
}

}  // namespace fbr
