#include "pnr/trainer.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pnr/diffusion.hpp"
#include "pnr/io.hpp"

namespace pnr {

using nlohmann::json;

void TrainerConfig::validate() const {
  if (steps < 0) throw UsageError("steps must be non-negative");
  if (batch < 1) throw UsageError("batch must be positive");
  if (crop < 1) throw UsageError("crop must be positive");
  if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
  if (weight_decay < 0.0) throw UsageError("weight decay must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw UsageError("ema decay must lie in [0, 1)");
  model.validate();
  build_linear_schedule(schedule_steps, var_start, var_end);
}

std::string TrainerConfig::to_json() const {
  json j = {{"steps", steps},
            {"batch", batch},
            {"crop", crop},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"ema_decay", ema_decay},
            {"seed", seed},
            {"schedule", {{"T", schedule_steps}, {"var_start", var_start}, {"var_end", var_end}}},
            {"channels", model.channels},
            {"base_ch_pred", model.base_ch_pred},
            {"base_ch_den", model.base_ch_den},
            {"blocks", model.blocks},
            {"null_predictor", null_predictor},
            {"augment", augment}};
  return j.dump();
}

TrainerConfig TrainerConfig::from_json(const std::string& text) {
  TrainerConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("trainer config: ") + e.what());
  }
  static const std::set<std::string> known = {"steps", "batch", "crop", "lr", "weight_decay", "ema_decay",
                                              "seed", "schedule", "channels", "base_ch_pred", "base_ch_den",
                                              "blocks", "null_predictor", "augment"};
  try {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key())) throw UsageError("trainer config: unknown key " + it.key());
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.crop = j.value("crop", c.crop);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.seed = j.value("seed", c.seed);
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      c.schedule_steps = s.value("T", c.schedule_steps);
      c.var_start = s.value("var_start", c.var_start);
      c.var_end = s.value("var_end", c.var_end);
    }
    c.model.channels = j.value("channels", c.model.channels);
    c.model.base_ch_pred = j.value("base_ch_pred", c.model.base_ch_pred);
    c.model.base_ch_den = j.value("base_ch_den", c.model.base_ch_den);
    c.model.blocks = j.value("blocks", c.model.blocks);
    c.null_predictor = j.value("null_predictor", c.null_predictor);
    c.augment = j.value("augment", c.augment);
  } catch (const json::exception& e) {
    throw UsageError(std::string("trainer config: ") + e.what());
  }
  return c;
}

// ---- AdamW ----

template <class T>
AdamW<T>::AdamW(const nn::ParamStore<T>& store) {
  for (std::size_t i = 0; i < store.tensor_count(); ++i) {
    m_.emplace_back(store[i].size(), 0.0);
    v_.emplace_back(store[i].size(), 0.0);
  }
}

template <class T>
void AdamW<T>::step(nn::ParamStore<T>& store, double lr, double weight_decay) {
  if (store.tensor_count() != m_.size()) throw UsageError("optimizer state does not match the store");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  const double shrink = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < store.tensor_count(); ++i) {
    auto& p = store[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      m[j] = beta1 * m[j] + (1.0 - beta1) * g;
      v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
      const double upd = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
      p.value[j] = static_cast<T>(p.value[j] * shrink - lr * upd);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

// ---- augmentation ----

Augmentation draw_augmentation(int height, int width, int crop, bool dihedral, Rng& rng) {
  if (crop > height || crop > width)
    throw UsageError("crop " + std::to_string(crop) + " exceeds image " + std::to_string(height) + "x" +
                     std::to_string(width));
  Augmentation a;
  a.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - crop + 1)));
  a.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - crop + 1)));
  if (dihedral) {
    a.flip_h = rng.bernoulli(0.5);
    a.flip_v = rng.bernoulli(0.5);
    a.rot90 = static_cast<int>(rng.below(4));
  }
  return a;
}

ImageTensor flip_horizontal(const ImageTensor& img) {
  const Shape& s = img.shape();
  ImageTensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = img.at(n, c, y, s.w - 1 - x);
  return out;
}

ImageTensor flip_vertical(const ImageTensor& img) {
  const Shape& s = img.shape();
  ImageTensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = img.at(n, c, s.h - 1 - y, x);
  return out;
}

ImageTensor rotate90(const ImageTensor& img) {
  const Shape& s = img.shape();
  ImageTensor out(Shape{s.n, s.c, s.w, s.h});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.w; ++y)
        for (int x = 0; x < s.h; ++x) out.at(n, c, y, x) = img.at(n, c, x, s.w - 1 - y);
  return out;
}

ImageTensor apply_augmentation(const ImageTensor& img, const Augmentation& a, int crop) {
  const Shape& s = img.shape();
  if (a.y0 < 0 || a.x0 < 0 || a.y0 + crop > s.h || a.x0 + crop > s.w) throw UsageError("crop window out of bounds");
  ImageTensor out(Shape{s.n, s.c, crop, crop});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) out.at(n, c, y, x) = img.at(n, c, a.y0 + y, a.x0 + x);
  if (a.flip_h) out = flip_horizontal(out);
  if (a.flip_v) out = flip_vertical(out);
  for (int r = 0; r < a.rot90; ++r) out = rotate90(out);
  return out;
}

TrainingPair augment(const data::ImagePair& pair, int crop, bool dihedral, Rng& rng) {
  require_same_shape(pair.sharp.shape(), pair.blurry.shape(), "augment");
  const Augmentation a = draw_augmentation(pair.sharp.shape().h, pair.sharp.shape().w, crop, dihedral, rng);
  return {apply_augmentation(pair.sharp, a, crop), apply_augmentation(pair.blurry, a, crop)};
}

// ---- trainer ----

Trainer::Trainer(const TrainerConfig& config, std::vector<data::ImagePair> pairs)
    : config_((config.validate(), config)),
      pairs_(std::move(pairs)),
      schedule_(build_linear_schedule(config.schedule_steps, config.var_start, config.var_end)),
      intervals_(schedule_),
      model_(config.model, config.seed),
      opt_pred_(model_.predictor.net().params()),
      opt_den_(model_.denoiser.net().params()) {
  if (pairs_.empty()) throw UsageError("training set is empty");
  for (const auto& p : pairs_) {
    const Shape& s = p.sharp.shape();
    require_same_shape(s, p.blurry.shape(), "training pair");
    if (s.c != config_.model.channels)
      throw UsageError("training image has " + std::to_string(s.c) + " channels, model expects " +
                       std::to_string(config_.model.channels));
    if (config_.crop > s.h || config_.crop > s.w)
      throw UsageError("crop " + std::to_string(config_.crop) + " exceeds a training image of size " +
                       std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  model_.enable_ema();
}

Trainer::Batch Trainer::draw_batch(std::int64_t step) const {
  const int b = config_.batch;
  const int c = config_.model.channels;
  const int k = config_.crop;
  std::vector<ImageTensor> xs, ys;
  Batch out;
  out.eps = ImageTensor(Shape{b, c, k, k});
  for (int i = 0; i < b; ++i) {
    Rng rng(derive_seed(config_.seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i)}));
    const auto& pair = pairs_[rng.below(pairs_.size())];
    TrainingPair tp = augment(pair, k, config_.augment, rng);
    xs.push_back(std::move(tp.x0));
    ys.push_back(std::move(tp.y));
    out.levels.push_back(sample_continuous_level(intervals_, rng));
    for (float& e : out.eps.item(i)) e = static_cast<float>(rng.normal());
  }
  out.x0 = stack_batch<float>(xs);
  out.y = stack_batch<float>(ys);
  return out;
}

double Trainer::compute_gradients(const Batch& batch) {
  auto& pred_store = model_.predictor.net().params();
  auto& den_store = model_.denoiser.net().params();
  pred_store.zero_grad();
  den_store.zero_grad();

  const Shape s = batch.x0.shape();
  ImageTensor x_init(s);
  if (!config_.null_predictor) x_init = model_.predictor.forward(batch.y, true);
  const ImageTensor r = residual_target(batch.x0, x_init);

  ImageTensor noisy(s);
  for (int n = 0; n < s.n; ++n) {
    const double a = batch.levels[static_cast<std::size_t>(n)];
    const double b = std::sqrt(std::max(0.0, 1.0 - a * a));
    auto rn = r.item(n);
    auto en = batch.eps.item(n);
    auto out = noisy.item(n);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * rn[i] + b * en[i]);
  }
  const ImageTensor eps_hat = model_.denoiser.forward(noisy, batch.levels, batch.y, true);
  const double loss = base_loss(batch.eps, eps_hat);
  if (!std::isfinite(loss)) return loss;

  const ImageTensor g_noisy = model_.denoiser.backward(base_loss_grad(batch.eps, eps_hat));
  if (!config_.null_predictor) {
    // noisy = a * (x0 - x_init) + ..., so dL/dx_init = -a * dL/dnoisy
    ImageTensor g_init(s);
    for (int n = 0; n < s.n; ++n) {
      const float a = static_cast<float>(batch.levels[static_cast<std::size_t>(n)]);
      auto gi = g_init.item(n);
      auto gn = g_noisy.item(n);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] = -a * gn[i];
    }
    model_.predictor.backward(g_init);
  }
  return loss;
}

double Trainer::step() {
  const Batch batch = draw_batch(step_);
  const double loss = compute_gradients(batch);
  if (!std::isfinite(loss))
    throw NumericError("non-finite training loss at step " + std::to_string(step_ + 1));
  if (!config_.null_predictor) {
    opt_pred_.step(model_.predictor.net().params(), config_.lr, config_.weight_decay);
    model_.predictor.net().params().ema_update(config_.ema_decay);
  }
  opt_den_.step(model_.denoiser.net().params(), config_.lr, config_.weight_decay);
  model_.denoiser.net().params().ema_update(config_.ema_decay);
  ++step_;
  losses_.push_back(loss);
  return loss;
}

void Trainer::run(const std::optional<std::filesystem::path>& log_path, bool timing,
                  const std::function<void(const Progress&)>& on_progress, int progress_every) {
  std::ostringstream log;
  log << "step,loss,wall_ms\n";
  const auto start = std::chrono::steady_clock::now();
  char line[96];
  while (step_ < config_.steps) {
    const double loss = step();
    long long ms = 0;
    if (timing)
      ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    std::snprintf(line, sizeof line, "%lld,%.9g,%lld\n", static_cast<long long>(step_), loss, ms);
    log << line;
    if (on_progress && progress_every > 0 && (step_ % progress_every == 0 || step_ == config_.steps))
      on_progress({step_, loss});
  }
  if (log_path) io::atomic_write(*log_path, log.str());
}

}  // namespace pnr
