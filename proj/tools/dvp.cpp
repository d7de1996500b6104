#include <malloc.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "dvp/checkpoint.hpp"
#include "dvp/config.hpp"
#include "dvp/data.hpp"
#include "dvp/image_io.hpp"
#include "dvp/metrics.hpp"
#include "dvp/trainer.hpp"

namespace fs = std::filesystem;
using namespace dvp;

namespace {

std::string find_data_file(const std::string& dir, const std::string& stem) {
  for (const std::string suffix : {"", ".gz"}) {
    const std::string path = dir + "/" + stem + suffix;
    if (fs::exists(path)) return path;
  }
  throw UsageError("no " + stem + "[.gz] under " + dir);
}

Dataset load_train(const std::string& dir) {
  Dataset ds = load_idx(find_data_file(dir, "train-images-idx3-ubyte"));
  ds.split = "train";
  return ds;
}

Dataset load_test(const std::string& dir) {
  Dataset ds = load_idx(find_data_file(dir, "t10k-images-idx3-ubyte"));
  ds.split = "test";
  return ds;
}

NormMatrix norm_matrix_for(const Dataset& train, const ModelConfig& mc) {
  return compute_norm_matrix(
      mc.image_channels, train.side, mc.pseudo_side, train.count,
      [&train](int i, double* buf) { train.fill_intensity(i, buf); },
      train.digest);
}

struct LoadedModel {
  RunConfig cfg;
  ParamStore ps;
  std::unique_ptr<LadderVae> model;
  NormMatrix S;
  Checkpoint ckpt;
};

LoadedModel load_model(const std::string& ckpt_path) {
  LoadedModel lm;
  lm.ckpt = load_checkpoint(ckpt_path);
  lm.cfg = parse_config(lm.ckpt.config_text);
  Rng init_rng(lm.cfg.train.seed + 0x9E3779B97F4A7C15ull);
  lm.model = std::make_unique<LadderVae>(lm.cfg.model, lm.ps, init_rng);
  restore_params(lm.ckpt, lm.ps);
  lm.S = restore_norm_matrix(lm.ckpt);
  return lm;
}

/// Swaps EMA shadows in for the lifetime of the guard (if shadows exist).
struct EmaScope {
  ParamStore& ps;
  bool active;
  explicit EmaScope(ParamStore& s)
      : ps(s), active(!s.all().empty() && !s.all()[0].ema.empty()) {
    if (active) ps.swap_ema();
  }
  ~EmaScope() {
    if (active) ps.swap_ema();
  }
};

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, int64_t seed_override,
              const std::string& resume) {
  RunConfig cfg = load_config_file(config_path);
  if (seed_override >= 0) cfg.train.seed = uint64_t(seed_override);
  const std::string config_text = serialize_config(cfg);

  Dataset all = load_train(data_dir);
  const int val_n = std::min(cfg.train.val_images, all.count / 2);
  Dataset val = dataset_tail(all, std::max(1, val_n), "val");
  Dataset train = dataset_head(all, all.count - val.count, "train");
  if (cfg.train.subset > 0 && cfg.train.subset < train.count)
    train = dataset_head(train, cfg.train.subset, "train");

  fs::create_directories(out_dir);
  NormMatrix S = norm_matrix_for(train, cfg.model);

  ParamStore ps;
  Rng init_rng(cfg.train.seed + 0x9E3779B97F4A7C15ull);
  LadderVae model(cfg.model, ps, init_rng);
  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    restore_params(ckpt, ps);
  }
  std::cout << "parameters: " << ps.scalar_count() << "\n";
  std::cout << "train images: " << train.count << ", val images: " << val.count
            << "\n";

  FitResult res = fit(model, ps, train, val, S, cfg.train, config_text, out_dir,
                      out_dir + "/train_log.jsonl");

  nlohmann::ordered_json report{{"steps", res.steps},
                                {"final_val_nll", res.final_val_nll},
                                {"best_val_nll", res.best_val_nll},
                                {"first_epoch_train_loss", res.first_epoch_train_loss},
                                {"last_epoch_train_loss", res.last_epoch_train_loss},
                                {"parameters", ps.scalar_count()}};
  std::ofstream(out_dir + "/train_report.json") << report.dump(2) << "\n";
  std::cout << "final_val_nll: " << res.final_val_nll << "\n";
  std::cout << "best_val_nll: " << res.best_val_nll << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& metrics, int seeds, int au_chains,
             int max_images) {
  LoadedModel lm = load_model(ckpt_path);
  Dataset test = load_test(data_dir);
  if (max_images > 0 && max_images < test.count)
    test = dataset_head(test, max_images, "test");
  EmaScope ema(lm.ps);

  nlohmann::ordered_json report;
  report["checkpoint"] = ckpt_path;
  report["test_images"] = test.count;
  const bool want_elbo = metrics.find("elbo") != std::string::npos;
  const bool want_au = metrics.find("au") != std::string::npos;
  if (!want_elbo && !want_au)
    throw UsageError("eval: --metrics must name elbo and/or au");

  if (want_elbo) {
    const double nll = eval_nll_bound(*lm.model, lm.S, test, seeds, kEvalSeed,
                                      lm.cfg.train.batch_size);
    std::cout.setf(std::ios::fixed);
    std::cout.precision(4);
    std::cout << "nll_bound: " << nll << " nats\n";
    report["nll_bound"] = nll;
  }
  if (want_au) {
    AuReport au = active_units(*lm.model, test, 0.01, au_chains, kEvalSeed,
                               lm.cfg.train.batch_size);
    std::cout.setf(std::ios::fixed);
    std::cout.precision(1);
    std::cout << "active_units: " << 100.0 * au.au_fraction << "%\n";
    report["active_units"] = au.au_fraction;
    report["active_units_per_layer"] = au.per_layer_fraction;
    report["au_threshold"] = au.threshold;
  }
  const std::string report_path =
      (fs::path(ckpt_path).parent_path() / "eval_report.json").string();
  std::ofstream(report_path) << report.dump(2) << "\n";
  std::cout << "report: " << report_path << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, int n, double temperature,
               uint64_t seed, const std::string& out_path, bool show_pseudo) {
  LoadedModel lm = load_model(ckpt_path);
  EmaScope ema(lm.ps);
  Rng rng(seed);
  GenerateResult gen = lm.model->generate(n, temperature, lm.S, rng);
  std::vector<Tensor> rows;
  if (show_pseudo) rows.push_back(gen.u_x);
  rows.push_back(gen.means);
  const int columns = show_pseudo ? n : std::max(1, int(std::ceil(std::sqrt(double(n)))));
  write_grid_png(out_path, rows, columns);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& data_dir,
                    const std::string& scales_arg, double temperature, int n,
                    uint64_t seed, const std::string& out_path) {
  LoadedModel lm = load_model(ckpt_path);
  Dataset test = load_test(data_dir);
  EmaScope ema(lm.ps);

  std::vector<int> sides;
  if (scales_arg != "none" && !scales_arg.empty()) {
    std::stringstream ss(scales_arg);
    std::string item;
    while (std::getline(ss, item, ',')) sides.push_back(std::stoi(item));
  }
  Rng rng(seed);
  std::vector<int> idx;
  for (int i = 0; i < std::min(n, test.count); ++i) idx.push_back(i);
  Tensor x = binarize_dynamic(test, idx, rng);
  Tensor recon = lm.model->generative_reconstruction(x, lm.S, sides, temperature, rng);
  write_grid_png(out_path, {x, recon}, int(idx.size()));
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_inspect_dct(const std::string& data_dir, int d, const std::string& out_dir) {
  Dataset train = load_train(data_dir);
  ModelConfig mc;
  mc.image_side = train.side;
  mc.pseudo_side = d;
  NormMatrix S = norm_matrix_for(train, mc);
  fs::create_directories(out_dir);

  {
    std::ofstream f(out_dir + "/S.txt");
    f << "# per-frequency normalization, " << S.channels << " x " << S.side
      << " x " << S.side << ", dataset digest " << S.source_digest << "\n";
    f.precision(12);
    for (int c = 0; c < S.channels; ++c)
      for (int k = 0; k < S.side; ++k) {
        for (int m = 0; m < S.side; ++m) f << (m ? " " : "") << S.at(c, k, m);
        f << "\n";
      }
  }

  const int n = std::min(8, train.count);
  std::vector<real> xs(size_t(n) * train.side * train.side);
  std::vector<real> us(size_t(n) * d * d);
  std::vector<real> uxs(size_t(n) * train.side * train.side);
  std::vector<double> img(train.side * train.side);
  for (int i = 0; i < n; ++i) {
    train.fill_intensity(i, img.data());
    const auto u = f_dct(img, 1, train.side, S);
    const auto ux = f_dct_dagger(u, 1, train.side, S);
    for (size_t j = 0; j < img.size(); ++j) {
      xs[size_t(i) * img.size() + j] = real(img[j]);
      uxs[size_t(i) * img.size() + j] = real(ux[j]);
    }
    // normalized coefficients lie in [-1,1]; shift for display
    for (size_t j = 0; j < u.size(); ++j)
      us[size_t(i) * u.size() + j] = real(0.5 * (u[j] + 1.0));
  }
  write_grid_png(out_dir + "/x.png",
                 {Tensor::constant({n, 1, train.side, train.side}, xs)}, n);
  write_grid_png(out_dir + "/u.png", {Tensor::constant({n, 1, d, d}, us)}, n);
  write_grid_png(out_dir + "/u_x.png",
                 {Tensor::constant({n, 1, train.side, train.side}, uxs)}, n);
  std::cout << "wrote " << out_dir << "/{S.txt,x.png,u.png,u_x.png}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // large tensor buffers churn quickly; keep freed pages in the heap
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);

  CLI::App app{"TopDown hierarchical VAE with a diffusion-based pseudoinput prior"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir = "runs/default", ckpt_path,
                            resume, metrics = "elbo,au", scales = "none",
                            out_path = "samples.png";
  int64_t seed_override = -1;
  uint64_t seed = 0;
  int n = 16, eval_seeds = 1, au_chains = 5, max_images = 0, d = 7;
  double temperature = 1.0;

  auto* train = app.add_subcommand("train", "optimize a model on IDX data");
  train->add_option("--config", config_path)->required();
  train->add_option("--data", data_dir)->required();
  train->add_option("--out", out_dir)->required();
  train->add_option("--seed", seed_override, "overrides the config seed");
  train->add_option("--resume", resume, "checkpoint to warm-start weights from");

  auto* eval = app.add_subcommand("eval", "test NLL bound and active units");
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--metrics", metrics, "comma list: elbo,au");
  eval->add_option("--seeds", eval_seeds, "noise draws for the bound");
  eval->add_option("--au-chains", au_chains);
  eval->add_option("--max-images", max_images, "0 = full test set");

  auto* sample = app.add_subcommand("sample", "unconditional samples");
  sample->add_option("--ckpt", ckpt_path)->required();
  sample->add_option("--n", n);
  sample->add_option("--temperature", temperature);
  sample->add_option("--seed", seed);
  sample->add_option("--out", out_path);
  bool show_pseudo = false;
  sample->add_flag("--show-pseudoinputs", show_pseudo,
                   "top row shows the lifted pseudoinputs");

  auto* rec = app.add_subcommand("reconstruct", "posterior/prior mixed reconstructions");
  rec->add_option("--ckpt", ckpt_path)->required();
  rec->add_option("--data", data_dir)->required();
  rec->add_option("--scales", scales, "comma list of scale sides, or 'none'");
  rec->add_option("--temperature", temperature);
  rec->add_option("--n", n);
  rec->add_option("--seed", seed);
  rec->add_option("--out", out_path);

  auto* inspect = app.add_subcommand("inspect-dct", "write S and example transforms");
  inspect->add_option("--data", data_dir)->required();
  inspect->add_option("--d", d, "pseudoinput side");
  inspect->add_option("--out", out_dir)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand(train))
      return cmd_train(config_path, data_dir, out_dir, seed_override, resume);
    if (app.got_subcommand(eval))
      return cmd_eval(ckpt_path, data_dir, metrics, eval_seeds, au_chains, max_images);
    if (app.got_subcommand(sample))
      return cmd_sample(ckpt_path, n, temperature, seed, out_path, show_pseudo);
    if (app.got_subcommand(rec))
      return cmd_reconstruct(ckpt_path, data_dir, scales, temperature, n, seed, out_path);
    if (app.got_subcommand(inspect)) return cmd_inspect_dct(data_dir, d, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
