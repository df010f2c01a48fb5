#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fbr/experiment.hpp"

namespace {

using namespace fbr;

struct BankArgs {
  bool gabor = false, lm = false, make_union = false;
  std::string external;
  int orientations = 10;
  int frequencies = 7;
  double freq_min = 0.05, freq_max = 0.35;
  int size = 19;
  std::string out;
  std::string render;
};

int cmd_bank(const BankArgs& a) {
  ExperimentConfig cfg;
  const int picked = int(a.gabor) + int(a.lm) + int(a.make_union) +
                     int(!a.external.empty());
  if (picked > 1) throw ParamError("bank: pick one of --gabor/--lm/--union/--external");
  cfg.bank = a.gabor ? "gabor" : a.lm ? "lm" : !a.external.empty() ? "external" : "union";
  cfg.bank_path = a.external;
  cfg.bank_size = a.size;
  cfg.gabor_orientations = a.orientations;
  cfg.gabor_frequencies = a.frequencies;
  cfg.gabor_freq_min = a.freq_min;
  cfg.gabor_freq_max = a.freq_max;

  const FilterBank bank = build_bank_recipe(cfg);
  save_bank(bank, a.out);
  std::printf("wrote %zu filters (%dx%d) to %s\n", bank.size(), bank.width,
              bank.height, a.out.c_str());
  if (!a.render.empty()) {
    render_bank_grid(bank, a.render);
    std::printf("rendered grid to %s\n", a.render.c_str());
  }
  return 0;
}

int cmd_train(const std::string& config_path) {
  const ExperimentConfig cfg = load_experiment_config(config_path);
  const RunOutput out = run_experiment(cfg);
  if (!out.result.log.empty()) {
    const MetricsRow& last = out.result.log.back();
    std::printf("done: epochs=%d test_ce=%.9g test_acc=%.9g\n",
                out.result.epochs_done, last.test_ce, last.test_acc);
  } else {
    std::printf("done: no epochs requested\n");
  }
  std::printf("outputs in %s\n", out.dir.string().c_str());
  return 0;
}

// Rebuilds the network a resolved config describes from its checkpoint.
struct Restored {
  Network net;
  ExperimentConfig cfg;
};

Restored restore_run(const std::string& checkpoint_path,
                     const std::string& config_path) {
  Restored r;
  r.cfg = load_experiment_config(config_path);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  {
    std::ifstream in(config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    if (config_digest(ss.str()) != ckpt.digest)
      std::fprintf(stderr,
                   "warning: checkpoint digest does not match this config\n");
  }
  r.net = build_network(named_spec(r.cfg.train.spec_name),
                        r.cfg.train.reg.min_regularized_kernel);
  OptimizerState opt;
  int epochs_done = 0;
  restore_checkpoint(ckpt, r.net, opt, epochs_done);
  return r;
}

LabeledDataset test_split(const ExperimentConfig& cfg) {
  LabeledDataset test;
  if (cfg.dataset == "mnist")
    test = load_mnist_idx(cfg.mnist_test_images, cfg.mnist_test_labels);
  else if (cfg.dataset == "cifar10")
    test = load_cifar10({cfg.cifar_test_batch});
  else
    throw ParamError("eval: unknown dataset " + cfg.dataset);
  if (cfg.norm_mean.empty() || cfg.norm_std.empty())
    throw DataError("eval: config carries no normalization record");
  ChannelStats st{cfg.norm_mean, cfg.norm_std};
  normalize(test, &st);
  return test;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path) {
  const Restored r = restore_run(checkpoint_path, config_path);
  const EvalResult ev = evaluate(r.net, test_split(r.cfg));
  std::printf("test_ce=%.9g test_acc=%.9g\n", ev.ce, ev.accuracy);
  std::printf("test_ce,test_acc\n%.9g,%.9g\n", ev.ce, ev.accuracy);
  return 0;
}

int cmd_export_kernels(const std::string& checkpoint_path,
                       const std::string& config_path, int layer,
                       const std::string& out) {
  const Restored r = restore_run(checkpoint_path, config_path);
  if (layer < 0 || static_cast<std::size_t>(layer) >= r.net.conv.size())
    throw ParamError("export-kernels: no conv layer " + std::to_string(layer));
  const ConvLayer& conv = r.net.conv[static_cast<std::size_t>(layer)];
  const std::size_t cells =
      static_cast<std::size_t>(conv.kernel_h()) * conv.kernel_w();
  std::vector<const double*> tiles;
  for (std::size_t i = 0; i < conv.kernel_count() * conv.channels(); ++i)
    tiles.push_back(conv.kernels.ptr() + i * cells);
  render_tile_grid(tiles, conv.kernel_w(), conv.kernel_h(), out);
  std::printf("wrote %zu kernel tiles to %s\n", tiles.size(), out.c_str());
  return 0;
}

int cmd_export_features(const std::string& checkpoint_path,
                        const std::string& config_path, long image_index,
                        const std::vector<int>& layers,
                        const std::string& out_dir) {
  const Restored r = restore_run(checkpoint_path, config_path);
  const LabeledDataset test = test_split(r.cfg);
  if (image_index < 0 || static_cast<std::size_t>(image_index) >= test.size())
    throw ParamError("export-features: image index out of range");

  const LabeledDataset one =
      gather(test, {static_cast<std::size_t>(image_index)});
  ForwardTrace trace;
  network_forward(r.net, one.images, &trace);
  std::filesystem::create_directories(out_dir);

  for (int layer : layers) {
    if (layer < 0 ||
        static_cast<std::size_t>(layer) >= r.net.spec.layers.size())
      throw ParamError("export-features: no layer " + std::to_string(layer));
    const std::size_t li = static_cast<std::size_t>(layer);
    const Tensor& act = li + 1 < trace.inputs.size() ? trace.inputs[li + 1]
                                                     : trace.logits;
    if (act.rank() != 4)
      throw ParamError("export-features: layer " + std::to_string(layer) +
                       " has no spatial maps");
    const std::size_t maps = act.extent(1);
    const std::size_t cells = act.extent(2) * act.extent(3);
    std::vector<const double*> tiles;
    for (std::size_t m = 0; m < maps; ++m) tiles.push_back(act.ptr() + m * cells);
    const std::string path =
        (std::filesystem::path(out_dir) / ("layer" + std::to_string(layer) + ".pgm"))
            .string();
    render_tile_grid(tiles, static_cast<int>(act.extent(3)),
                     static_cast<int>(act.extent(2)), path);
    std::printf("wrote %zu maps to %s\n", maps, path.c_str());
  }
  return 0;
}

struct CompareRow {
  std::string type;
  double gamma, lambda, l1, l2, acc, ce;
};

int cmd_compare(const std::vector<std::string>& run_dirs,
                const std::string& csv_out) {
  std::vector<CompareRow> rows;
  for (const std::string& dir : run_dirs) {
    try {
      const ExperimentConfig cfg = load_experiment_config(
          (std::filesystem::path(dir) / "config.resolved").string());
      std::ifstream csv(std::filesystem::path(dir) / "metrics.csv");
      if (!csv) throw Error("no metrics.csv");
      std::string line, header, last;
      std::getline(csv, header);
      if (header != metrics_csv_header()) throw FormatError("bad metrics header");
      while (std::getline(csv, line))
        if (!line.empty()) last = line;
      if (last.empty()) throw FormatError("metrics.csv has no rows");

      std::vector<std::string> fields;
      std::stringstream ss(last);
      std::string item;
      while (std::getline(ss, item, ',')) fields.push_back(item);
      if (fields.size() != 11) throw FormatError("bad metrics row");

      const RegConfig& reg = cfg.train.reg;
      CompareRow row;
      row.type = reg.lambda_fbr > 0   ? "fbr"
                 : reg.gamma_ortho > 0 ? "ortho"
                 : reg.l1_coeff > 0    ? "l1"
                 : reg.l2_coeff > 0    ? "l2"
                                       : "baseline";
      row.gamma = reg.gamma_ortho;
      row.lambda = reg.lambda_fbr;
      row.l1 = reg.l1_coeff;
      row.l2 = reg.l2_coeff;
      row.ce = std::stod(fields[6]);
      row.acc = std::stod(fields[7]);
      rows.push_back(row);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "warning: skipping %s: %s\n", dir.c_str(), e.what());
    }
  }
  std::sort(rows.begin(), rows.end(),
            [](const CompareRow& a, const CompareRow& b) { return a.ce < b.ce; });

  std::printf("%-10s %-10s %-10s %-10s %-10s %-10s %-10s\n", "reg_type",
              "gamma", "lambda", "l1", "l2", "acc", "ce");
  for (const CompareRow& r : rows)
    std::printf("%-10s %-10.4g %-10.4g %-10.4g %-10.4g %-10.6g %-10.6g\n",
                r.type.c_str(), r.gamma, r.lambda, r.l1, r.l2, r.acc, r.ce);

  if (!csv_out.empty()) {
    std::ofstream out(csv_out, std::ios::trunc);
    out << "reg_type,gamma,lambda,l1,l2,acc,ce\n";
    char buf[256];
    for (const CompareRow& r : rows) {
      std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                    r.type.c_str(), r.gamma, r.lambda, r.l1, r.l2, r.acc, r.ce);
      out << buf;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"filter bank regularization lab"};
  app.require_subcommand(1);

  BankArgs bank;
  CLI::App* bank_cmd = app.add_subcommand("bank", "build and save a filter bank");
  bank_cmd->add_flag("--gabor", bank.gabor, "gabor bank");
  bank_cmd->add_flag("--lm", bank.lm, "leung-malik bank");
  bank_cmd->add_flag("--union", bank.make_union, "gabor + lm union (default)");
  bank_cmd->add_option("--external", bank.external, "load an FBNK file and finalize it");
  bank_cmd->add_option("--orient", bank.orientations, "gabor orientation count");
  bank_cmd->add_option("--freqs", bank.frequencies, "gabor frequency count");
  bank_cmd->add_option("--freq-min", bank.freq_min, "lowest frequency (cycles/pixel)");
  bank_cmd->add_option("--freq-max", bank.freq_max, "highest frequency (cycles/pixel)");
  bank_cmd->add_option("--size", bank.size, "filter grid size (odd)");
  bank_cmd->add_option("-o,--out", bank.out, "output FBNK path")->required();
  bank_cmd->add_option("--render", bank.render, "also render a PGM tile grid");

  std::string train_config;
  CLI::App* train_cmd = app.add_subcommand("train", "run an experiment config");
  train_cmd->add_option("config", train_config, "key=value config file")->required();

  std::string eval_ckpt, eval_config;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "FBCK checkpoint")->required();
  eval_cmd->add_option("--config", eval_config, "resolved run config")->required();

  std::string ek_ckpt, ek_config, ek_out;
  int ek_layer = 0;
  CLI::App* ek_cmd = app.add_subcommand("export-kernels", "render conv kernels as a PGM grid");
  ek_cmd->add_option("--checkpoint", ek_ckpt, "FBCK checkpoint")->required();
  ek_cmd->add_option("--config", ek_config, "resolved run config")->required();
  ek_cmd->add_option("--layer", ek_layer, "conv layer index")->required();
  ek_cmd->add_option("-o,--out", ek_out, "output PGM path")->required();

  std::string ef_ckpt, ef_config, ef_out_dir, ef_layers = "0";
  long ef_image = 0;
  CLI::App* ef_cmd = app.add_subcommand("export-features", "render activation maps for a test image");
  ef_cmd->add_option("--checkpoint", ef_ckpt, "FBCK checkpoint")->required();
  ef_cmd->add_option("--config", ef_config, "resolved run config")->required();
  ef_cmd->add_option("--image", ef_image, "test image index");
  ef_cmd->add_option("--layers", ef_layers, "comma-separated layer indices");
  ef_cmd->add_option("--out-dir", ef_out_dir, "output directory")->required();

  std::vector<std::string> cmp_dirs;
  std::string cmp_csv;
  CLI::App* cmp_cmd = app.add_subcommand("compare", "tabulate finished runs");
  cmp_cmd->add_option("dirs", cmp_dirs, "run directories")->required();
  cmp_cmd->add_option("--csv", cmp_csv, "also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*bank_cmd) return cmd_bank(bank);
    if (*train_cmd) return cmd_train(train_config);
    if (*eval_cmd) return cmd_eval(eval_ckpt, eval_config);
    if (*ek_cmd) return cmd_export_kernels(ek_ckpt, ek_config, ek_layer, ek_out);
    if (*ef_cmd) {
      std::vector<int> layers;
      std::stringstream ss(ef_layers);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) layers.push_back(std::stoi(item));
      return cmd_export_features(ef_ckpt, ef_config, ef_image, layers, ef_out_dir);
    }
    if (*cmp_cmd) return cmd_compare(cmp_dirs, cmp_csv);
  } catch (const fbr::NumericError& e) {
    std::fprintf(stderr, "numeric abort at iteration %ld: %s\n", e.iteration,
                 e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
