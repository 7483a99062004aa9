#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pnr/rng.hpp"
#include "pnr/tensor.hpp"

namespace pnr::data {

// ---- PPM / PGM ----------------------------------------------------------
// Binary P5 (1 channel) / P6 (3 channels), maxval 255. Pixel mapping between
// the [-1, 1] working range and bytes: u8 = round((v + 1) * 127.5) clamped,
// v = u8 / 127.5 - 1.

std::uint8_t to_u8(float v);
float from_u8(std::uint8_t u);

std::vector<std::uint8_t> encode_ppm(const ImageTensor& img);
ImageTensor decode_ppm(std::span<const std::uint8_t> bytes);
ImageTensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const ImageTensor& img);

// ---- blur kernels ---------------------------------------------------------

// Non-negative, odd square support, weights sum to 1.
struct BlurKernel {
  int size = 1;
  std::vector<double> weights{1.0};

  double at(int y, int x) const { return weights[static_cast<std::size_t>(y) * size + x]; }
  int radius() const { return size / 2; }
  void validate(int max_support = 31) const;
  static BlurKernel delta() { return {}; }
};

// Camera-shake stand-in: a correlated random walk (heading diffuses with
// `jitter` radians per step) of total length drawn from
// [min_length, max_length] pixels, splatted bilinearly, smoothed by a
// Gaussian with sigma drawn from [min_smooth, max_smooth].
struct KernelConfig {
  int max_support = 31;
  double min_length = 0.0;
  double max_length = 25.0;
  int walk_steps = 64;
  double jitter = 0.35;
  double min_smooth = 0.3;
  double max_smooth = 0.8;
  double p_delta = 0.1;  // probability of a near-delta kernel

  // Short walks with wide Gaussian smoothing; used for toy datasets.
  static KernelConfig gaussian_dominant();
  void validate() const;
};

BlurKernel gen_kernel(const KernelConfig& cfg, Rng& rng);

// Rasterize trajectory points (pixel offsets from the kernel center) with
// bilinear splatting, smooth, trim to the smallest odd square holding the
// mass, normalize. A single point at the origin with smooth_sigma = 0 is the
// delta kernel.
struct Point {
  double x = 0.0;
  double y = 0.0;
};
BlurKernel kernel_from_trajectory(std::span<const Point> points, double smooth_sigma, int max_support);

// Root-mean-square distance of the kernel mass from its centroid, in pixels.
double kernel_spread(const BlurKernel& k);

// Per-channel 2-D convolution, reflect boundary, same output shape.
ImageTensor apply_blur(const ImageTensor& sharp, const BlurKernel& k);

// Gaussian noise with std sigma_8bit * 2 / 255 in the [-1, 1] domain.
ImageTensor add_noise(const ImageTensor& img, double sigma_8bit, Rng& rng);

// Kernels on disk: P5 scaled so the largest weight maps to 255.
void write_kernel_pgm(const std::filesystem::path& path, const BlurKernel& k);
BlurKernel read_kernel_pgm(const std::filesystem::path& path);

// ---- procedural sources ------------------------------------------------------

// Gradient background plus anti-aliased polygons and pen strokes, in [-1, 1].
ImageTensor render_procedural(int height, int width, int channels, Rng& rng);

// ---- datasets ---------------------------------------------------------------

struct DatasetConfig {
  int count = 0;
  int height = 32;
  int width = 32;
  int channels = 1;
  KernelConfig kernel{};
  double noise_max = 15.0;  // sigma ~ U[0, noise_max] in 8-bit units
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> source_dir;  // user sharp images instead of procedural ones

  void validate() const;
};

struct BlurPairRecord {
  std::string sharp_path;  // relative to the dataset root
  std::string blurry_path;
  std::string kernel_path;
  BlurKernel kernel;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

struct Manifest {
  int version = 1;
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
  std::vector<BlurPairRecord> pairs;
};

// One sharp/blurry example, fully determined by (cfg, index).
struct GeneratedPair {
  ImageTensor sharp;
  ImageTensor blurry;
  BlurKernel kernel;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};
GeneratedPair generate_pair(const DatasetConfig& cfg, std::size_t index,
                            std::span<const ImageTensor> sources = {});

// Loads every .ppm/.pgm in a directory, sorted by file name.
std::vector<ImageTensor> load_source_images(const std::filesystem::path& dir, int channels);

// Writes sharp/, blurry/, kernels/ and manifest.json under out_dir.
Manifest make_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);

std::string manifest_to_json(const Manifest& m);
// Accepts the dataset directory or the manifest file itself. Kernels are read
// back from their PGM files.
Manifest load_manifest(const std::filesystem::path& dir_or_file);
std::filesystem::path manifest_root(const std::filesystem::path& dir_or_file);

struct ImagePair {
  ImageTensor sharp;
  ImageTensor blurry;
};
// Decodes every pair and checks dimensions agree.
std::vector<ImagePair> load_pairs(const std::filesystem::path& dir_or_file);

}  // namespace pnr::data
