#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pnr/data.hpp"
#include "pnr/model.hpp"
#include "pnr/schedule.hpp"

namespace pnr {

struct TrainerConfig {
  int steps = 20000;
  int batch = 16;
  int crop = 32;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;
  int schedule_steps = 2000;
  double var_start = 1e-6;
  double var_end = 0.01;
  ModelShape model{};
  // Skip g entirely (x_init = 0): the plain conditional model.
  bool null_predictor = false;
  bool augment = true;

  void validate() const;
  std::string to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainerConfig from_json(const std::string& text);
};

// Decoupled weight decay: w <- w - lr*wd*w, then the usual bias-corrected step.
template <class T>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamW(const nn::ParamStore<T>& store);
  void step(nn::ParamStore<T>& store, double lr, double weight_decay);
  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

// One paired crop + dihedral transform.
struct Augmentation {
  int y0 = 0;
  int x0 = 0;
  bool flip_h = false;
  bool flip_v = false;
  int rot90 = 0;  // quarter turns counter-clockwise
};

Augmentation draw_augmentation(int height, int width, int crop, bool dihedral, Rng& rng);
// Crop the window, flip, then rotate.
ImageTensor apply_augmentation(const ImageTensor& img, const Augmentation& a, int crop);
ImageTensor flip_horizontal(const ImageTensor& img);
ImageTensor flip_vertical(const ImageTensor& img);
ImageTensor rotate90(const ImageTensor& img);

struct TrainingPair {
  ImageTensor x0;
  ImageTensor y;
};
// The same window and transform applied to both images.
TrainingPair augment(const data::ImagePair& pair, int crop, bool dihedral, Rng& rng);

class Trainer {
 public:
  struct Batch {
    ImageTensor x0;
    ImageTensor y;
    std::vector<double> levels;
    ImageTensor eps;
  };

  Trainer(const TrainerConfig& config, std::vector<data::ImagePair> pairs);

  // Example i of step s is drawn from its own stream hash(seed, s, i): pair
  // choice, augmentation, noise level and eps, in that order.
  Batch draw_batch(std::int64_t step) const;
  // Zeroes and fills gradients for both nets; returns the loss.
  double compute_gradients(const Batch& batch);
  // One optimizer update plus one EMA update. Non-finite loss throws.
  double step();

  struct Progress {
    std::int64_t step = 0;
    double loss = 0.0;
  };
  // Runs until config.steps, optionally logging "step,loss,wall_ms" rows. With
  // timing off the wall_ms column is written as 0 so logs are reproducible.
  void run(const std::optional<std::filesystem::path>& log_path, bool timing,
           const std::function<void(const Progress&)>& on_progress = {}, int progress_every = 0);

  const TrainerConfig& config() const { return config_; }
  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  std::int64_t steps_done() const { return step_; }
  const std::vector<double>& losses() const { return losses_; }
  std::uint64_t rng_digest() const { return derive_seed(config_.seed, {static_cast<std::uint64_t>(step_)}); }

 private:
  TrainerConfig config_;
  std::vector<data::ImagePair> pairs_;
  NoiseSchedule schedule_;
  LevelIntervals intervals_;
  Model<float> model_;
  AdamW<float> opt_pred_;
  AdamW<float> opt_den_;
  std::int64_t step_ = 0;
  std::vector<double> losses_;
};

}  // namespace pnr
