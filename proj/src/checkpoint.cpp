#include "pnr/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"
#include "pnr/io.hpp"

namespace pnr {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_floats(std::vector<std::uint8_t>& out, const std::vector<float>& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  out.insert(out.end(), p, p + v.size() * sizeof(float));
}

json layout(const nn::ParamStore<float>& store) {
  json a = json::array();
  for (std::size_t i = 0; i < store.tensor_count(); ++i) a.push_back({{"name", store[i].name}, {"shape", store[i].shape}});
  return a;
}

std::size_t blob_bytes(const nn::ParamStore<float>& store) { return store.scalar_count() * sizeof(float); }

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  void floats(std::vector<float>& dst) {
    const std::size_t need = dst.size() * sizeof(float);
    if (pos_ + need > n_) throw IoError("checkpoint truncated");
    std::memcpy(dst.data(), p_ + pos_, need);
    pos_ += need;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

void read_store(Reader& r, nn::ParamStore<float>& store) {
  for (std::size_t i = 0; i < store.tensor_count(); ++i) r.floats(store[i].value);
  for (std::size_t i = 0; i < store.tensor_count(); ++i) r.floats(store.shadow(i));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainerConfig& config, std::int64_t step,
                                            std::uint64_t rng_digest, const Model<float>& model) {
  const auto& ps = model.predictor.net().params();
  const auto& ds = model.denoiser.net().params();
  if (!ps.has_ema() || !ds.has_ema()) throw UsageError("checkpoint needs EMA shadows on both networks");
  json meta = {{"version", kCheckpointVersion},
               {"config", json::parse(config.to_json())},
               {"schedule", {config.schedule_steps, config.var_start, config.var_end}},
               {"step", step},
               {"rng_digest", rng_digest},
               {"predictor", layout(ps)},
               {"denoiser", layout(ds)}};
  const std::string text = meta.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + 2 * (blob_bytes(ps) + blob_bytes(ds)) + 8);
  for (const auto* store : {&ps, &ds}) {
    for (std::size_t i = 0; i < store->tensor_count(); ++i) put_floats(out, (*store)[i].value);
    for (std::size_t i = 0; i < store->tensor_count(); ++i) put_floats(out, store->shadow(i));
  }
  put_u64(out, io::fnv1a64(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint (bad magic)");
  if (bytes.size() < 16 + 8) throw IoError("checkpoint truncated");
  const std::size_t body = bytes.size() - 8;
  if (io::fnv1a64(bytes.data(), body) != get_u64(bytes.data() + body))
    throw IoError("checkpoint checksum mismatch (corrupt or truncated file)");
  const std::uint64_t meta_len = get_u64(bytes.data() + 8);
  if (meta_len > body - 16) throw IoError("checkpoint truncated");

  Checkpoint ck;
  json meta;
  try {
    meta = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(meta_len));
    const int version = meta.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw IoError("unsupported checkpoint version " + std::to_string(version));
    ck.config = TrainerConfig::from_json(meta.at("config").dump());
    ck.step = meta.at("step").get<std::int64_t>();
    ck.rng_digest = meta.at("rng_digest").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint metadata: ") + e.what());
  } catch (const UsageError& e) {
    throw IoError(std::string("checkpoint metadata: ") + e.what());
  }

  ck.model = std::make_unique<Model<float>>(ck.config.model, ck.config.seed);
  ck.model->enable_ema();
  auto& ps = ck.model->predictor.net().params();
  auto& ds = ck.model->denoiser.net().params();
  if (meta.at("predictor") != layout(ps) || meta.at("denoiser") != layout(ds))
    throw IoError("checkpoint parameter layout does not match its configuration");
  const std::size_t start = 16 + meta_len;
  if (body - start != 2 * (blob_bytes(ps) + blob_bytes(ds))) throw IoError("checkpoint blob size mismatch");
  Reader r(bytes.data() + start, body - start);
  read_store(r, ps);
  read_store(r, ds);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TrainerConfig& config, std::int64_t step,
                     std::uint64_t rng_digest, const Model<float>& model) {
  io::atomic_write(path, encode_checkpoint(config, step, rng_digest, model));
}

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer) {
  save_checkpoint(path, trainer.config(), trainer.steps_done(), trainer.rng_digest(), trainer.model());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace pnr
