#include <algorithm>
#include <cstdio>
#include "json.hpp"

#include "pnr/data.hpp"
#include "pnr/io.hpp"

namespace pnr::data {

namespace fs = std::filesystem;
using nlohmann::json;

void DatasetConfig::validate() const {
  if (count < 0) throw UsageError("dataset count must be non-negative");
  if (height < 1 || width < 1) throw UsageError("dataset image size must be positive");
  if (channels != 1 && channels != 3) throw UsageError("dataset images need 1 or 3 channels");
  if (noise_max < 0.0) throw UsageError("noise_max must be non-negative");
  kernel.validate();
  if (kernel.max_support > std::min(height, width))
    throw UsageError("kernel support " + std::to_string(kernel.max_support) + " exceeds the image size " +
                     std::to_string(height) + "x" + std::to_string(width));
}

namespace {

ImageTensor convert_channels(const ImageTensor& img, int channels) {
  const Shape& s = img.shape();
  if (s.c == channels) return img;
  ImageTensor out(Shape{1, channels, s.h, s.w});
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      if (channels == 1) {
        double m = 0.0;
        for (int c = 0; c < s.c; ++c) m += img.at(0, c, y, x);
        out.at(0, 0, y, x) = static_cast<float>(m / s.c);
      } else {
        for (int c = 0; c < channels; ++c) out.at(0, c, y, x) = img.at(0, 0, y, x);
      }
    }
  return out;
}

std::string entry_name(std::size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.%s", index, ext);
  return buf;
}

}  // namespace

std::vector<ImageTensor> load_source_images(const fs::path& dir, int channels) {
  if (!fs::is_directory(dir)) throw IoError("source directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .ppm/.pgm images in " + dir.string());
  std::vector<ImageTensor> out;
  for (const auto& f : files) out.push_back(convert_channels(read_ppm(f), channels));
  return out;
}

GeneratedPair generate_pair(const DatasetConfig& cfg, std::size_t index, std::span<const ImageTensor> sources) {
  GeneratedPair p;
  p.seed = derive_seed(cfg.seed, {index});
  Rng rng(p.seed);
  if (sources.empty()) {
    p.sharp = render_procedural(cfg.height, cfg.width, cfg.channels, rng);
  } else {
    const ImageTensor& src = sources[rng.below(sources.size())];
    const Shape& s = src.shape();
    if (s.h < cfg.height || s.w < cfg.width) throw UsageError("source image smaller than the dataset size");
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.h - cfg.height + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.w - cfg.width + 1)));
    p.sharp = ImageTensor(Shape{1, s.c, cfg.height, cfg.width});
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) p.sharp.at(0, c, y, x) = src.at(0, c, y0 + y, x0 + x);
  }
  p.kernel = gen_kernel(cfg.kernel, rng);
  p.sigma = rng.uniform(0.0, cfg.noise_max);
  p.blurry = add_noise(apply_blur(p.sharp, p.kernel), p.sigma, rng);
  return p;
}

std::string manifest_to_json(const Manifest& m) {
  json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["size"] = {m.height, m.width};
  j["pairs"] = json::array();
  for (const auto& r : m.pairs)
    j["pairs"].push_back(
        {{"sharp", r.sharp_path}, {"blurry", r.blurry_path}, {"sigma", r.sigma}, {"kernel_path", r.kernel_path},
         {"seed", r.seed}});
  return j.dump(2) + "\n";
}

Manifest make_dataset(const DatasetConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::vector<ImageTensor> sources;
  if (cfg.source_dir) sources = load_source_images(*cfg.source_dir, cfg.channels);
  const char* ext = cfg.channels == 1 ? "pgm" : "ppm";
  io::ensure_directory(out_dir / "sharp");
  io::ensure_directory(out_dir / "blurry");
  io::ensure_directory(out_dir / "kernels");

  Manifest m;
  m.seed = cfg.seed;
  m.height = cfg.height;
  m.width = cfg.width;
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.count); ++i) {
    GeneratedPair g = generate_pair(cfg, i, sources);
    BlurPairRecord r;
    r.sharp_path = "sharp/" + entry_name(i, ext);
    r.blurry_path = "blurry/" + entry_name(i, ext);
    r.kernel_path = "kernels/" + entry_name(i, "pgm");
    write_ppm(out_dir / r.sharp_path, g.sharp);
    write_ppm(out_dir / r.blurry_path, g.blurry);
    write_kernel_pgm(out_dir / r.kernel_path, g.kernel);
    r.kernel = std::move(g.kernel);
    r.sigma = g.sigma;
    r.seed = g.seed;
    m.pairs.push_back(std::move(r));
  }
  io::atomic_write(out_dir / "manifest.json", manifest_to_json(m));
  return m;
}

fs::path manifest_root(const fs::path& dir_or_file) {
  return fs::is_directory(dir_or_file) ? dir_or_file : dir_or_file.parent_path();
}

Manifest load_manifest(const fs::path& dir_or_file) {
  const fs::path file = fs::is_directory(dir_or_file) ? dir_or_file / "manifest.json" : dir_or_file;
  const auto bytes = io::read_file(file);
  Manifest m;
  try {
    const json j = json::parse(bytes.begin(), bytes.end());
    m.version = j.at("version").get<int>();
    if (m.version != 1) throw IoError("unsupported manifest version " + std::to_string(m.version));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.height = j.at("size").at(0).get<int>();
    m.width = j.at("size").at(1).get<int>();
    const fs::path root = manifest_root(dir_or_file);
    for (const auto& e : j.at("pairs")) {
      BlurPairRecord r;
      r.sharp_path = e.at("sharp").get<std::string>();
      r.blurry_path = e.at("blurry").get<std::string>();
      r.kernel_path = e.at("kernel_path").get<std::string>();
      r.sigma = e.at("sigma").get<double>();
      r.seed = e.value("seed", std::uint64_t{0});
      r.kernel = read_kernel_pgm(root / r.kernel_path);
      m.pairs.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw IoError(file.string() + ": malformed manifest: " + e.what());
  }
  return m;
}

std::vector<ImagePair> load_pairs(const fs::path& dir_or_file) {
  const Manifest m = load_manifest(dir_or_file);
  const fs::path root = manifest_root(dir_or_file);
  std::vector<ImagePair> out;
  out.reserve(m.pairs.size());
  for (const auto& r : m.pairs) {
    ImagePair p{read_ppm(root / r.sharp_path), read_ppm(root / r.blurry_path)};
    if (!(p.sharp.shape() == p.blurry.shape()))
      throw IoError("pair " + r.sharp_path + " / " + r.blurry_path + " differ in size");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace pnr::data
