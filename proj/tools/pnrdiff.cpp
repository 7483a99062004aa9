#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pnr/checkpoint.hpp"
#include "pnr/data.hpp"
#include "pnr/io.hpp"
#include "pnr/metrics.hpp"
#include "pnr/sampler.hpp"
#include "pnr/substrate_checks.hpp"
#include "pnr/sweep.hpp"
#include "pnr/trainer.hpp"

namespace fs = std::filesystem;
using namespace pnr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

// ---- --config JSON --------------------------------------------------------
// Keys are long flag names without dashes. Flags given on the command line
// win; the rest are appended as if typed.

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a path");
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (config_path.empty()) return out;

  std::set<std::string> given;
  for (const auto& a : out)
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));

  const auto bytes = io::read_file(config_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(config_path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError(config_path + ": config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (given.count(it.key())) continue;
    const auto& v = it.value();
    const std::string flag = "--" + it.key();
    if (v.is_boolean()) {
      if (v.get<bool>()) out.push_back(flag);
    } else if (v.is_array()) {
      std::string joined;
      for (const auto& e : v) joined += (joined.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
      out.push_back(flag);
      out.push_back(joined);
    } else {
      out.push_back(flag);
      out.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
  }
  return out;
}

void print_config(const CLI::App& sub) {
  std::cout << "[" << sub.get_name() << "] resolved config:\n";
  std::istringstream in(sub.config_to_str(true, false));
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line.rfind("config", 0) != 0) std::cout << "  " << line << "\n";
  std::cout.flush();
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw UsageError("size must look like HxW, got '" + s + "'");
  try {
    std::size_t a = 0, b = 0;
    const int h = std::stoi(s.substr(0, x), &a);
    const int w = std::stoi(s.substr(x + 1), &b);
    if (a != x || b != s.size() - x - 1) throw std::invalid_argument("trailing");
    return {h, w};
  } catch (const std::exception&) {
    throw UsageError("size must look like HxW, got '" + s + "'");
  }
}

fs::path suffixed(const fs::path& out, int index) {
  fs::path p = out;
  p.replace_filename(out.stem().string() + "_" + std::to_string(index) + out.extension().string());
  return p;
}

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::unique_ptr<NetworkModel> open_model(const std::string& ckpt, bool no_ema) {
  Checkpoint ck = load_checkpoint(ckpt);
  std::cout << "loaded checkpoint " << ckpt << " (step " << ck.step << ")\n";
  return std::make_unique<NetworkModel>(std::move(ck.model), !no_ema);
}

ImageTensor read_input(const std::string& path, const NetworkModel& m) {
  ImageTensor y = data::read_ppm(path);
  const int c = const_cast<NetworkModel&>(m).model().shape.channels;
  if (y.shape().c != c)
    throw UsageError(path + " has " + std::to_string(y.shape().c) + " channels, the model expects " +
                     std::to_string(c));
  return y;
}

// ---- subcommands ---------------------------------------------------------------

struct GenDataArgs {
  std::string out, size = "32x32", source, kernels = "camera";
  int n = 0, max_kernel = 31, channels = 1;
  double noise_max = 15.0;
  std::uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a) {
  data::DatasetConfig cfg;
  cfg.count = a.n;
  std::tie(cfg.height, cfg.width) = parse_size(a.size);
  cfg.channels = a.channels;
  cfg.kernel = a.kernels == "gaussian" ? data::KernelConfig::gaussian_dominant() : data::KernelConfig{};
  cfg.kernel.max_support = a.max_kernel;
  cfg.noise_max = a.noise_max;
  cfg.seed = a.seed;
  if (!a.source.empty()) cfg.source_dir = a.source;
  cfg.validate();
  const auto m = data::make_dataset(cfg, a.out);
  std::cout << "wrote " << m.pairs.size() << " pairs to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, out, log;
  TrainerConfig cfg;
  bool timing = false;
};

int cmd_train(TrainArgs a) {
  auto pairs = data::load_pairs(a.data);
  if (!pairs.empty()) a.cfg.model.channels = pairs.front().sharp.shape().c;
  std::cout << "training on " << pairs.size() << " pairs\n";
  Trainer trainer(a.cfg, std::move(pairs));
  const fs::path log = a.log.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.log);
  const int every = std::max(1, a.cfg.steps / 20);
  trainer.run(log, a.timing,
              [](const Trainer::Progress& p) {
                std::printf("step %lld loss %.6f\n", static_cast<long long>(p.step), p.loss);
                std::fflush(stdout);
              },
              every);
  save_checkpoint(a.out, trainer);
  std::cout << "wrote checkpoint " << a.out << " and loss log " << log.string() << "\n";
  return kExitOk;
}

struct SampleArgs {
  std::string ckpt, input, out;
  SampleConfig cfg;
  bool emit_singles = false, no_ema = false;
};

int cmd_sample(const SampleArgs& a) {
  auto model = open_model(a.ckpt, a.no_ema);
  const ImageTensor y = read_input(a.input, *model);
  if (a.cfg.average && a.cfg.n_samples == 1) std::cerr << "warning: --average with --n 1 is a single sample\n";
  const auto set = sample_set(*model, y, a.cfg);
  if (a.cfg.average) {
    data::write_ppm(a.out, clamp_unit(mean_of(set)));
    std::cout << "wrote average of " << set.size() << " samples to " << a.out << "\n";
  } else if (set.size() == 1) {
    data::write_ppm(a.out, set.front());
    std::cout << "wrote " << a.out << "\n";
  }
  if (set.size() > 1 && (!a.cfg.average || a.emit_singles)) {
    for (std::size_t i = 0; i < set.size(); ++i) data::write_ppm(suffixed(a.out, static_cast<int>(i)), set[i]);
    std::cout << "wrote " << set.size() << " samples as " << suffixed(a.out, 0).string() << " ...\n";
  }
  return kExitOk;
}

struct SweepArgs {
  std::string ckpt, data, out, t_grid, var_grid, navg_grid;
  std::uint64_t seed = 0;
  int limit = 0;
  bool timing = false, no_ema = false;
};

int cmd_sweep(const SweepArgs& a) {
  SweepGrid grid;
  if (!a.t_grid.empty()) grid.steps = parse_int_list(a.t_grid);
  if (!a.var_grid.empty()) grid.var_ends = parse_double_list(a.var_grid);
  if (!a.navg_grid.empty()) grid.n_avg = parse_int_list(a.navg_grid);
  grid.validate();
  auto model = open_model(a.ckpt, a.no_ema);
  auto pairs = data::load_pairs(a.data);
  if (a.limit > 0 && static_cast<std::size_t>(a.limit) < pairs.size()) pairs.resize(static_cast<std::size_t>(a.limit));
  SweepOptions opt;
  opt.seed = a.seed;
  opt.timing = a.timing;
  opt.on_row = [](const SweepRow& r) {
    std::printf("T=%d var_end=%g n_avg=%d psnr=%.3f ssim=%.4f std=%.4f\n", r.steps, r.var_end, r.n_avg, r.psnr_mean,
                r.ssim_mean, r.pixel_std_mean);
    std::fflush(stdout);
  };
  const auto rows = pd_sweep(*model, pairs, grid, opt);
  write_sweep_csv(a.out, rows);
  std::cout << "wrote " << rows.size() << " rows to " << a.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string pred, ref, out;
};

int cmd_eval(const EvalArgs& a) {
  const auto files = image_files(a.pred);
  if (files.empty()) throw IoError("no .ppm/.pgm images in " + a.pred);
  std::vector<double> psnr, ssim;
  for (const auto& f : files) {
    const ImageTensor p = data::read_ppm(f);
    const ImageTensor r = data::read_ppm(fs::path(a.ref) / f.filename());
    psnr.push_back(metrics::psnr(p, r));
    ssim.push_back(metrics::ssim(p, r));
  }
  metrics::MetricReport report;
  report["psnr"] = metrics::summarize(psnr);
  report["ssim"] = metrics::summarize(ssim);
  io::atomic_write(a.out, metrics::report_to_json(report));
  std::printf("%zu images: psnr %.4f ssim %.5f\n", files.size(), report["psnr"].mean, report["ssim"].mean);
  return kExitOk;
}

struct DiversityArgs {
  std::string ckpt, input, ref, out_prefix;
  SampleConfig cfg;
  bool identical_seeds = false, no_ema = false;
};

int cmd_diversity(DiversityArgs a) {
  if (a.cfg.n_samples < 2) throw UsageError("diversity needs --n >= 2");
  auto model = open_model(a.ckpt, a.no_ema);
  const ImageTensor y = read_input(a.input, *model);
  const ImageTensor ref = a.ref.empty() ? y : data::read_ppm(a.ref);
  std::vector<ImageTensor> samples;
  if (a.identical_seeds) {
    for (int i = 0; i < a.cfg.n_samples; ++i) samples.push_back(sample(*model, y, a.cfg));
  } else {
    samples = sample_set(*model, y, a.cfg);
  }
  const auto d = metrics::diversity_stats(y, ref, samples);
  const std::string map_path = a.out_prefix + "_std.pgm";
  metrics::write_std_map_pgm(map_path, d.std_map);
  const double mean_std = metrics::summarize(std::vector<double>(d.std_map.span().begin(), d.std_map.span().end())).mean;
  nlohmann::ordered_json j = {{"n", a.cfg.n_samples},  {"sharpness", d.sharpness}, {"diversity", d.diversity},
                              {"mean_std", mean_std}, {"std_map", fs::path(map_path).filename().string()}};
  // NaN is not JSON; report it as null
  if (!std::isfinite(d.sharpness)) j["sharpness"] = nullptr;
  if (!std::isfinite(d.diversity)) j["diversity"] = nullptr;
  io::atomic_write(a.out_prefix + "_stats.json", j.dump() + "\n");
  std::cout << j.dump() << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance) {
  const auto suite = run_substrate_checks(seed, tolerance);
  std::cout << suite.format();
  std::printf("worst relative error %.3e (tolerance %.1e): %s\n", suite.worst(), tolerance,
              suite.passed() ? "PASS" : "FAIL");
  return suite.passed() ? kExitOk : kExitNumeric;
}

void add_sample_flags(CLI::App* s, SampleConfig& cfg, bool& no_ema) {
  s->add_option("--steps", cfg.steps, "refinement steps T")->capture_default_str();
  s->add_option("--final-var", cfg.var_end, "final step variance 1 - alpha_T")->capture_default_str();
  s->add_option("--n", cfg.n_samples, "number of samples")->capture_default_str();
  s->add_option("--seed", cfg.seed, "random seed")->capture_default_str();
  s->add_flag("--no-ema", no_ema, "use raw weights instead of the EMA shadows");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predict-and-refine diffusion deblurring"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenDataArgs gen;
  auto* s_gen = app.add_subcommand("gen-data", "generate a synthetic blur dataset");
  s_gen->add_option("--out", gen.out, "output directory")->required();
  s_gen->add_option("--n", gen.n, "number of pairs")->capture_default_str();
  s_gen->add_option("--size", gen.size, "image size HxW")->capture_default_str();
  s_gen->add_option("--channels", gen.channels, "1 (gray) or 3 (color)")->capture_default_str();
  s_gen->add_option("--max-kernel", gen.max_kernel, "maximum kernel support")->capture_default_str();
  s_gen->add_option("--noise-max", gen.noise_max, "noise sigma upper bound, 8-bit units")->capture_default_str();
  s_gen->add_option("--kernels", gen.kernels, "camera or gaussian")
      ->check(CLI::IsMember({"camera", "gaussian"}))
      ->capture_default_str();
  s_gen->add_option("--source", gen.source, "directory of sharp source images");
  s_gen->add_option("--seed", gen.seed, "random seed")->capture_default_str();

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "jointly train predictor and denoiser");
  s_train->add_option("--data", tr.data, "dataset directory or manifest")->required();
  s_train->add_option("--out", tr.out, "checkpoint path")->required();
  s_train->add_option("--log", tr.log, "loss CSV (default <out>.loss.csv)");
  s_train->add_option("--steps", tr.cfg.steps)->capture_default_str();
  s_train->add_option("--batch", tr.cfg.batch)->capture_default_str();
  s_train->add_option("--crop", tr.cfg.crop)->capture_default_str();
  s_train->add_option("--lr", tr.cfg.lr)->capture_default_str();
  s_train->add_option("--wd", tr.cfg.weight_decay, "decoupled weight decay")->capture_default_str();
  s_train->add_option("--ema", tr.cfg.ema_decay)->capture_default_str();
  s_train->add_option("--seed", tr.cfg.seed)->capture_default_str();
  s_train->add_option("--T", tr.cfg.schedule_steps, "training schedule steps")->capture_default_str();
  s_train->add_option("--var-start", tr.cfg.var_start)->capture_default_str();
  s_train->add_option("--var-end", tr.cfg.var_end)->capture_default_str();
  s_train->add_option("--base-ch-pred", tr.cfg.model.base_ch_pred)->capture_default_str();
  s_train->add_option("--base-ch-den", tr.cfg.model.base_ch_den)->capture_default_str();
  s_train->add_option("--blocks", tr.cfg.model.blocks, "residual blocks per depth")->capture_default_str();
  s_train->add_flag("--null-predictor", tr.cfg.null_predictor, "train without g (x_init = 0)");
  s_train->add_flag("--timing", tr.timing, "record wall_ms in the loss log");

  SampleArgs sa;
  auto* s_sample = app.add_subcommand("sample", "restore one image");
  s_sample->add_option("--ckpt", sa.ckpt)->required();
  s_sample->add_option("--input", sa.input)->required();
  s_sample->add_option("--out", sa.out)->required();
  add_sample_flags(s_sample, sa.cfg, sa.no_ema);
  s_sample->add_flag("--average", sa.cfg.average, "write the mean of the samples");
  s_sample->add_flag("--emit-singles", sa.emit_singles, "with --average, also write every sample");

  SweepArgs sw;
  auto* s_sweep = app.add_subcommand("sweep", "perception-distortion grid");
  s_sweep->add_option("--ckpt", sw.ckpt)->required();
  s_sweep->add_option("--data", sw.data)->required();
  s_sweep->add_option("--out", sw.out)->required();
  s_sweep->add_option("--t-grid", sw.t_grid, "comma list (default 10,20,30,50,100,200,300,500)");
  s_sweep->add_option("--var-grid", sw.var_grid, "comma list (default 0.01,0.02,0.05,0.1,0.2,0.5)");
  s_sweep->add_option("--navg-grid", sw.navg_grid, "comma list (default 1,2,4,8)");
  s_sweep->add_option("--seed", sw.seed)->capture_default_str();
  s_sweep->add_option("--limit", sw.limit, "evaluate only the first N pairs (0 = all)")->capture_default_str();
  s_sweep->add_flag("--timing", sw.timing, "record wall_ms per cell");
  s_sweep->add_flag("--no-ema", sw.no_ema);

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "PSNR/SSIM of a directory against references");
  s_eval->add_option("--pred", ev.pred)->required();
  s_eval->add_option("--ref", ev.ref)->required();
  s_eval->add_option("--out", ev.out)->required();

  DiversityArgs dv;
  dv.cfg.n_samples = 8;
  auto* s_div = app.add_subcommand("diversity", "sample spread and sharpness statistics");
  s_div->add_option("--ckpt", dv.ckpt)->required();
  s_div->add_option("--input", dv.input)->required();
  s_div->add_option("--ref", dv.ref, "sharp reference (default: the input)");
  s_div->add_option("--out-prefix", dv.out_prefix)->required();
  add_sample_flags(s_div, dv.cfg, dv.no_ema);
  s_div->add_flag("--identical-seeds", dv.identical_seeds, "draw every sample from the same stream");

  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  auto* s_gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  s_gc->add_option("--seed", gc_seed)->capture_default_str();
  s_gc->add_option("--tolerance", gc_tol)->capture_default_str();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }

  CLI::App* sub = app.get_subcommands().front();
  print_config(*sub);
  try {
    if (sub == s_gen) return cmd_gen_data(gen);
    if (sub == s_train) return cmd_train(tr);
    if (sub == s_sample) return cmd_sample(sa);
    if (sub == s_sweep) return cmd_sweep(sw);
    if (sub == s_eval) return cmd_eval(ev);
    if (sub == s_div) return cmd_diversity(dv);
    if (sub == s_gc) return cmd_gradcheck(gc_seed, gc_tol);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
