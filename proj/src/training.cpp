#include "exreg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "exreg/metrics.hpp"
#include "exreg/parallel.hpp"

namespace exreg {

// ---- losses --------------------------------------------------------------------------------

namespace {

void require_same(const char* op, const Image& a, const Image& b) {
  if (!a.same_size(b)) throw std::invalid_argument(std::string(op) + ": image sizes differ");
}

}  // namespace

double l1_loss(const Image& out, const Image& target) {
  require_same("l1_loss", out, target);
  double s = 0;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) s += std::abs(double(out.pixels[i]) - double(target.pixels[i]));
  return s / static_cast<double>(out.pixels.size());
}

double charbonnier_loss(const Image& out, const Image& target, double eps) {
  require_same("charbonnier_loss", out, target);
  if (!(eps > 0)) throw std::invalid_argument("charbonnier_loss: eps must be positive");
  double s = 0;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double d = double(out.pixels[i]) - double(target.pixels[i]);
    s += std::sqrt(d * d + eps * eps);
  }
  return s / static_cast<double>(out.pixels.size());
}

// ---- optimiser -----------------------------------------------------------------------------

void adam_step(const ParamRefs& params, const std::vector<Tensor>& grads, AdamState& state, const AdamOptions& opt) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->value.shape()) {
      throw std::invalid_argument("adam_step: gradient shape " + shape_str(grads[i].shape()) + " does not match " +
                                  params[i]->name + " " + shape_str(params[i]->value.shape()));
    }
    if (!grads[i].all_finite()) {
      throw std::runtime_error("adam_step: non-finite gradient for parameter " + params[i]->name);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    AdamMoments& s = state.moments[p.name];
    if (s.m.shape() != p.value.shape()) {
      s.m = Tensor(p.value.shape());
      s.v = Tensor(p.value.shape());
      s.t = 0;
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(s.t));
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double gk = g[k];
      const double m = opt.beta1 * s.m[k] + (1 - opt.beta1) * gk;
      const double v = opt.beta2 * s.v[k] + (1 - opt.beta2) * gk * gk;
      s.m[k] = static_cast<Real>(m);
      s.v[k] = static_cast<Real>(v);
      p.value[k] -= static_cast<Real>(opt.lr * (m / c1) / (std::sqrt(v / c2) + opt.eps));
    }
  }
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  double ss = 0;
  for (const auto& g : grads)
    for (Real v : g.data()) ss += double(v) * double(v);
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const Real f = static_cast<Real>(max_norm / norm);
    for (auto& g : grads)
      for (auto& v : g.data()) v *= f;
  }
  return norm;
}

// ---- checkpoint IO -------------------------------------------------------------------------

namespace {

enum class DType : std::uint8_t { f64 = 0, f32 = 1, u8 = 2, u64 = 3 };

constexpr char kMagic[4] = {'E', 'X', 'R', 'G'};

struct Blob {
  std::string name;
  DType dtype = DType::u8;
  Shape shape;
  std::vector<std::uint8_t> data;
};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos));
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
  }
  std::vector<std::uint8_t> take(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(buf.begin() + static_cast<long>(pos), buf.begin() + static_cast<long>(pos + n));
    pos += n;
    return v;
  }
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

Blob text_blob(std::string name, const std::string& text) {
  return Blob{std::move(name), DType::u8, {text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())};
}

Blob u64_blob(std::string name, std::uint64_t v) {
  Writer w;
  w.le(v);
  return Blob{std::move(name), DType::u64, {1}, std::move(w.out)};
}

Blob tensor_blob(std::string name, const Tensor& t) {
  Writer w;
  for (Real v : t.data()) {
    if constexpr (sizeof(Real) == 8) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      w.le(bits);
    } else {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      w.le(bits);
    }
  }
  return Blob{std::move(name), sizeof(Real) == 8 ? DType::f64 : DType::f32, t.shape(), std::move(w.out)};
}

Tensor blob_tensor(const Blob& b) {
  Tensor t(b.shape);
  Reader r(b.data);
  if (b.dtype == DType::f64) {
    if (b.data.size() != t.size() * 8) throw std::runtime_error("checkpoint blob " + b.name + " has the wrong size");
    for (auto& v : t.data()) {
      const auto bits = r.le<std::uint64_t>();
      double d;
      std::memcpy(&d, &bits, 8);
      v = static_cast<Real>(d);
    }
  } else if (b.dtype == DType::f32) {
    if (b.data.size() != t.size() * 4) throw std::runtime_error("checkpoint blob " + b.name + " has the wrong size");
    for (auto& v : t.data()) {
      const auto bits = r.le<std::uint32_t>();
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<Real>(f);
    }
  } else {
    throw std::runtime_error("checkpoint blob " + b.name + " is not a real tensor");
  }
  return t;
}

std::string blob_text(const Blob& b) { return std::string(b.data.begin(), b.data.end()); }

std::uint64_t blob_u64(const Blob& b) {
  if (b.dtype != DType::u64 || b.data.size() != 8) throw std::runtime_error("checkpoint blob " + b.name + " is not u64");
  Reader r(b.data);
  return r.le<std::uint64_t>();
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace

bool Checkpoint::has_stage(const std::string& s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  std::vector<Blob> blobs;
  blobs.push_back(text_blob("meta.config", format_key_values(to_key_values(c.model.cfg))));
  blobs.push_back(text_blob("meta.train", format_key_values(c.train_config)));
  blobs.push_back(text_blob("meta.stages", join(c.stages)));
  blobs.push_back(u64_blob("meta.step", c.step));
  for (const auto* p : c.model.parameters()) blobs.push_back(tensor_blob(p->name, p->value));
  for (const auto& [name, s] : c.adam.moments) {
    blobs.push_back(tensor_blob("adam.m." + name, s.m));
    blobs.push_back(tensor_blob("adam.v." + name, s.v));
    blobs.push_back(u64_blob("adam.t." + name, s.t));
  }
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(c.version);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(blobs.size()));
  for (const auto& b : blobs) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(b.name.size()));
    w.bytes(b.name.data(), b.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(b.dtype));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) w.le<std::uint64_t>(d);
    w.le<std::uint64_t>(b.data.size());
    w.bytes(b.data.data(), b.data.size());
  }
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw std::runtime_error("not an exreg checkpoint (bad magic)");
  Checkpoint c;
  c.version = r.le<std::uint32_t>();
  if (c.version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint format version " + std::to_string(c.version));
  }
  const auto count = r.le<std::uint32_t>();
  std::map<std::string, Blob> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    const auto name_len = r.le<std::uint32_t>();
    const auto name = r.take(name_len);
    b.name.assign(name.begin(), name.end());
    b.dtype = static_cast<DType>(r.le<std::uint8_t>());
    if (static_cast<std::uint8_t>(b.dtype) > 3) throw std::runtime_error("checkpoint blob " + b.name + ": unknown dtype");
    const auto rank = r.le<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) b.shape.push_back(r.le<std::uint64_t>());
    b.data = r.take(r.le<std::uint64_t>());
    blobs[b.name] = std::move(b);
  }
  if (r.pos != bytes.size()) throw std::runtime_error("checkpoint has trailing bytes");
  auto get = [&](const std::string& name) -> const Blob& {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw std::runtime_error("checkpoint is missing " + name);
    return it->second;
  };
  const ModelConfig cfg = model_config_from(parse_key_values(blob_text(get("meta.config"))));
  c.model = ExregModel::init(cfg, 0);
  c.train_config = parse_key_values(blob_text(get("meta.train")));
  const std::string stages = blob_text(get("meta.stages"));
  for (std::size_t b = 0; b < stages.size();) {
    const auto e = std::min(stages.find(',', b), stages.size());
    c.stages.push_back(stages.substr(b, e - b));
    b = e + 1;
  }
  c.step = blob_u64(get("meta.step"));
  for (auto* p : c.model.parameters()) {
    Tensor t = blob_tensor(get(p->name));
    if (t.shape() != p->value.shape()) {
      throw std::runtime_error("checkpoint parameter " + p->name + " has shape " + shape_str(t.shape()) + ", expected " +
                               shape_str(p->value.shape()));
    }
    p->value = std::move(t);
    p->zero_grad();
  }
  for (const auto& [name, b] : blobs) {
    if (name.rfind("adam.m.", 0) != 0) continue;
    const std::string pname = name.substr(7);
    AdamMoments& s = c.adam.moments[pname];
    s.m = blob_tensor(b);
    s.v = blob_tensor(get("adam.v." + pname));
    s.t = blob_u64(get("adam.t." + pname));
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("error writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---- configuration -------------------------------------------------------------------------

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::megnet: return "megnet";
    case Stage::regnet: return "regnet";
    case Stage::cotrain: return "cotrain";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  if (s == "megnet") return Stage::megnet;
  if (s == "regnet") return Stage::regnet;
  if (s == "cotrain") return Stage::cotrain;
  throw std::invalid_argument("unknown stage '" + s + "' (expected megnet, regnet or cotrain)");
}

TrainConfig TrainConfig::defaults(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::megnet:
      c.batch_size = 16, c.patch_size = 32, c.epochs = 30, c.passes_per_epoch = 8;
      c.adam.lr = 5e-4;
      c.delta_set = {-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5};
      break;
    case Stage::regnet:
      c.batch_size = 4, c.patch_size = 64, c.epochs = 60;
      c.adam.lr = 1e-3;
      break;
    case Stage::cotrain:
      c.batch_size = 4, c.patch_size = 64, c.epochs = 20;
      c.adam.lr = 1e-4;
      break;
  }
  return c;
}

KeyValues TrainConfig::to_key_values() const {
  const auto d = [](double v) { return format_ev(v); };
  return {{"stage", stage_name(stage)},
          {"batch_size", std::to_string(batch_size)},
          {"patch_size", std::to_string(patch_size)},
          {"epochs", std::to_string(epochs)},
          {"passes_per_epoch", std::to_string(passes_per_epoch)},
          {"lr", d(adam.lr)},
          {"beta1", d(adam.beta1)},
          {"beta2", d(adam.beta2)},
          {"adam_eps", d(adam.eps)},
          {"seed", std::to_string(seed)},
          {"charbonnier_eps", d(charbonnier_epsilon)},
          {"clip_norm", d(clip_norm)},
          {"val_every", std::to_string(val_every)},
          {"val_fraction", d(val_fraction)},
          {"max_val_scenes", std::to_string(max_val_scenes)},
          {"delta_set", format_list(delta_set)}};
}

void TrainConfig::validate() const {
  if (!(adam.lr > 0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(charbonnier_epsilon > 0)) throw std::invalid_argument("charbonnier epsilon must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (patch_size == 0) throw std::invalid_argument("patch size must be >= 1");
  if (passes_per_epoch == 0) throw std::invalid_argument("passes per epoch must be >= 1");
  if (val_every == 0) throw std::invalid_argument("val_every must be >= 1");
  if (val_fraction < 0 || val_fraction >= 1) throw std::invalid_argument("validation fraction must be in [0,1)");
  if (delta_set.empty()) throw std::invalid_argument("delta set must not be empty");
}

bool is_validation_scene(const std::string& scene_id, double fraction) {
  return static_cast<double>(splitmix64(fnv1a64(scene_id)) % 10000) < fraction * 10000.0;
}

// ---- evaluation helpers used for validation ------------------------------------------------

std::vector<double> megnet_generation_psnr(const Megnet& net, const std::vector<SceneRecord>& scenes,
                                           const std::vector<double>& deltas, std::size_t threads) {
  std::vector<std::vector<double>> per_scene(scenes.size(), std::vector<double>(deltas.size(), std::nan("")));
  parallel_for(scenes.size(), threads, [&](std::size_t i) {
    const SceneRecord& s = scenes[i];
    const Rendition* src = s.find(0.0);
    if (!src) return;
    for (std::size_t d = 0; d < deltas.size(); ++d) {
      const Rendition* dst = s.find(deltas[d]);
      if (!dst) continue;
      per_scene[i][d] = psnr(megnet_forward(net, src->image, deltas[d]), dst->image);
    }
  });
  std::vector<double> out(deltas.size());
  for (std::size_t d = 0; d < deltas.size(); ++d) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& row : per_scene)
      if (!std::isnan(row[d])) sum += row[d], ++n;
    out[d] = n ? sum / static_cast<double>(n) : std::nan("");
  }
  return out;
}

double correction_psnr(const ExregModel& model, const std::vector<SceneRecord>& scenes, std::size_t threads) {
  std::vector<std::vector<double>> per_scene(scenes.size());
  parallel_for(scenes.size(), threads, [&](std::size_t i) {
    for (const auto& r : scenes[i].renditions) {
      per_scene[i].push_back(psnr(correct_image_resized(model, r.image).image, scenes[i].ground_truth));
    }
  });
  double sum = 0;
  std::size_t n = 0;
  for (const auto& row : per_scene)
    for (double v : row) sum += v, ++n;
  return n ? sum / static_cast<double>(n) : std::nan("");
}

// ---- training loop -------------------------------------------------------------------------

namespace {

Tensor batch_tensor(const std::vector<PatchPair>& batch, bool targets) {
  const Image& first = targets ? batch[0].target : batch[0].input;
  const std::size_t H = first.height, W = first.width, plane = 3 * H * W;
  Tensor t({batch.size(), 3, H, W});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Tensor one = image_to_tensor(targets ? batch[n].target : batch[n].input);
    std::copy(one.data().begin(), one.data().end(), t.data().begin() + static_cast<long>(n * plane));
  }
  return t;
}

using ParamIndex = std::unordered_map<const Parameter*, std::size_t>;

void accumulate(const Tape& tape, const ParamIndex& index, std::vector<Tensor>& grads, Real weight) {
  for (const auto& [p, g] : tape.parameter_grads()) {
    auto it = index.find(p);
    if (it == index.end()) continue;
    Tensor& dst = grads[it->second];
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += weight * g[k];
  }
}

struct SampleResult {
  double loss = 0;
  std::vector<Tensor> grads;
};

}  // namespace

TrainOutcome train(const TrainConfig& cfg, const std::vector<SceneRecord>& scenes, const std::optional<Checkpoint>& init,
                   const ModelConfig& model_cfg, const TrainProgress& progress) {
  cfg.validate();
  if (scenes.empty()) throw std::invalid_argument("train: empty dataset");
  Checkpoint ck;
  if (init) {
    ck = *init;
  } else {
    if (cfg.stage != Stage::megnet) {
      throw std::invalid_argument(std::string("train: stage ") + stage_name(cfg.stage) +
                                  " needs a checkpoint with a trained megnet");
    }
    ck.model = ExregModel::init(model_cfg, split_seed(cfg.seed, "init"));
  }
  if (cfg.stage != Stage::megnet && !ck.has_stage("megnet")) {
    throw std::invalid_argument(std::string("train: stage ") + stage_name(cfg.stage) +
                                " needs a checkpoint with a trained megnet");
  }
  if (cfg.stage != Stage::megnet && cfg.patch_size % 16 != 0) {
    throw std::invalid_argument("train: regnet patch size must be divisible by 16");
  }

  std::vector<SceneRecord> train_set, val_set;
  for (const auto& s : scenes) (is_validation_scene(s.scene_id, cfg.val_fraction) ? val_set : train_set).push_back(s);
  if (train_set.empty()) train_set = val_set;
  if (cfg.max_val_scenes && val_set.size() > cfg.max_val_scenes) val_set.resize(cfg.max_val_scenes);

  ParamRefs trainable;
  if (cfg.stage != Stage::regnet) trainable = ck.model.megnet.parameters();
  if (cfg.stage != Stage::megnet)
    for (auto* p : ck.model.regnet.parameters()) trainable.push_back(p);
  ParamIndex index;
  for (std::size_t i = 0; i < trainable.size(); ++i) index[trainable[i]] = i;
  auto zero_grads = [&] {
    std::vector<Tensor> g;
    g.reserve(trainable.size());
    for (const auto* p : trainable) g.emplace_back(p->value.shape());
    return g;
  };

  const PairMode mode = cfg.stage == Stage::megnet ? PairMode::megnet : PairMode::regnet;
  PatchSampler sampler(train_set, mode, cfg.patch_size, split_seed(cfg.seed, std::string("sampler.") + stage_name(cfg.stage)),
                       cfg.delta_set);
  Rng order_rng(split_seed(cfg.seed, std::string("order.") + stage_name(cfg.stage)));

  auto validate_now = [&]() -> double {
    if (val_set.empty()) return std::nan("");
    if (cfg.stage == Stage::megnet) {
      double sum = 0;
      std::size_t n = 0;
      for (double v : megnet_generation_psnr(ck.model.megnet, val_set, cfg.delta_set, cfg.threads))
        if (!std::isnan(v)) sum += v, ++n;
      return n ? sum / static_cast<double>(n) : std::nan("");
    }
    return correction_psnr(ck.model, val_set, cfg.threads);
  };

  // The generator is frozen during the regnet stage, so when patches cover whole images every
  // stack can be generated once up front instead of once per step.
  std::map<std::pair<std::size_t, double>, ExposureStack> stack_cache;
  const bool whole_images = std::all_of(train_set.begin(), train_set.end(), [&](const SceneRecord& s) {
    return s.ground_truth.height == cfg.patch_size && s.ground_truth.width == cfg.patch_size;
  });
  if (cfg.stage == Stage::regnet && whole_images) {
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t i = 0; i < train_set.size(); ++i)
      for (std::size_t r = 0; r < train_set[i].renditions.size(); ++r) jobs.emplace_back(i, r);
    std::vector<ExposureStack> stacks(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
      stacks[j] = generate_stack(ck.model.megnet, train_set[jobs[j].first].renditions[jobs[j].second].image,
                                 ck.model.cfg.stack_evs);
    });
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      const Rendition& r = train_set[jobs[j].first].renditions[jobs[j].second];
      stack_cache.emplace(std::make_pair(jobs[j].first, r.relative_ev), std::move(stacks[j]));
    }
  }
  auto frozen_stack = [&](const PatchPair& p) {
    auto it = stack_cache.find({p.scene, p.input_ev});
    return it != stack_cache.end() ? it->second : generate_stack(ck.model.megnet, p.input, ck.model.cfg.stack_evs);
  };

  TrainOutcome outcome;
  ck.train_config = cfg.to_key_values();
  double best_val = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  const std::vector<double>& stack_evs = ck.model.cfg.stack_evs;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order;
    for (std::size_t pass = 0; pass < cfg.passes_per_epoch; ++pass) {
      std::vector<std::size_t> perm(train_set.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      order_rng.shuffle(perm.begin(), perm.end());
      order.insert(order.end(), perm.begin(), perm.end());
    }
    double loss_sum = 0;
    std::size_t loss_count = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t bn = std::min(cfg.batch_size, order.size() - b0);
      std::vector<PatchPair> batch;
      for (std::size_t k = 0; k < bn; ++k) batch.push_back(sampler.draw(order[b0 + k]));

      std::vector<Tensor> grads = zero_grads();
      double loss = 0;
      if (cfg.stage == Stage::megnet) {
        Tape tape;
        std::vector<double> deltas;
        for (const auto& p : batch) deltas.push_back(p.delta_ev);
        const Var out = ck.model.megnet.forward(tape, tape.constant(batch_tensor(batch, false)), deltas);
        const Var l = exreg::l1_loss(out, tape.constant(batch_tensor(batch, true)));
        loss = l.value()[0];
        if (std::isfinite(loss)) {
          tape.backward(l);
          accumulate(tape, index, grads, Real(1));
        }
      } else {
        std::vector<SampleResult> results(bn);
        parallel_for(bn, cfg.threads, [&](std::size_t k) {
          const PatchPair& p = batch[k];
          Tape tape;
          const Var x = tape.constant(image_to_tensor(p.input));
          const StackVars stack = cfg.stage == Stage::cotrain
                                      ? generate_stack(tape, ck.model.megnet, x, stack_evs)
                                      : stack_constants(tape, frozen_stack(p));
          const RegnetOutput out = regnet_forward(tape, ck.model.regnet, stack);
          const Var l = exreg::charbonnier_loss(out.image, tape.constant(image_to_tensor(p.target)),
                                                static_cast<Real>(cfg.charbonnier_epsilon));
          results[k].loss = l.value()[0];
          if (!std::isfinite(results[k].loss)) return;
          tape.backward(l);
          results[k].grads = zero_grads();
          accumulate(tape, index, results[k].grads, Real(1));
        });
        // Fixed summation order keeps results independent of the thread count.
        for (std::size_t k = 0; k < bn; ++k) {
          loss += results[k].loss / static_cast<double>(bn);
          if (results[k].grads.empty()) continue;
          for (std::size_t i = 0; i < grads.size(); ++i)
            for (std::size_t e = 0; e < grads[i].size(); ++e) grads[i][e] += results[k].grads[i][e] / static_cast<Real>(bn);
        }
      }
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(ck.step + 1));
      }
      clip_grad_norm(grads, cfg.clip_norm);
      adam_step(trainable, grads, ck.adam, cfg.adam);
      ++ck.step;
      loss_sum += loss;
      ++loss_count;
    }

    TrainLogRow row{ck.step, stage_name(cfg.stage), loss_sum / static_cast<double>(std::max<std::size_t>(1, loss_count)),
                    std::nan("")};
    const bool last = epoch + 1 == cfg.epochs;
    if ((epoch + 1) % cfg.val_every == 0 || last) {
      row.val_psnr = validate_now();
      if (!std::isnan(row.val_psnr) && row.val_psnr > best_val) {
        best_val = row.val_psnr;
        outcome.best = ck;
        have_best = true;
      }
    }
    outcome.log.push_back(row);
    if (progress) progress(row);
  }
  if (!have_best) outcome.best = ck;
  outcome.best.stages.push_back(stage_name(cfg.stage));
  return outcome;
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& csv, bool append) {
  const bool header = !append || !std::filesystem::exists(csv) || std::filesystem::file_size(csv) == 0;
  std::ofstream os(csv, append ? std::ios::app : std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write training log " + csv.string());
  if (header) os << "step,stage,loss,val_psnr\n";
  for (const auto& r : log) os << r.step << ',' << r.stage << ',' << format_metric(r.loss) << ',' << format_metric(r.val_psnr) << '\n';
}

}  // namespace exreg
