#include "exreg/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "exreg/parallel.hpp"

namespace exreg {

namespace fs = std::filesystem;

Image render_ev(const Image& base, double delta_ev) {
  if (base.space != ColorSpace::linear) throw std::invalid_argument("render_ev: base image must be linear");
  const Real gain = static_cast<Real>(std::exp2(delta_ev));
  Image out(base.height, base.width, ColorSpace::srgb);
  for (std::size_t i = 0; i < base.pixels.size(); ++i) {
    out.pixels[i] = srgb_encode(std::clamp(base.pixels[i] * gain, Real(0), Real(1)));
  }
  return out;
}

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

std::string format_ev(double ev) {
  if (ev == 0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, ev);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& s, const std::string& what) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("cannot parse " + what + " '" + s + "'");
  }
  return v;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const fs::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write manifest " + file.string());
  os << "# exreg manifest split=" << split_name(m.split) << '\n';
  for (const auto& e : m.entries) {
    os << e.scene_id << '\t' << e.role << '\t' << format_ev(e.relative_ev) << '\t' << e.path << '\n';
  }
  if (!os) throw std::runtime_error("error writing manifest " + file.string());
}

DatasetManifest load_manifest(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.find("split=test") != std::string::npos) m.split = Split::test;
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 4) {
      throw std::invalid_argument(file.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    }
    if (cols[1] != "gt" && cols[1] != "input") {
      throw std::invalid_argument(file.string() + ":" + std::to_string(lineno) + ": unknown role '" + cols[1] + "'");
    }
    m.entries.push_back(ManifestEntry{cols[0], cols[1], parse_double(cols[2], "relative_ev"), cols[3]});
  }
  return m;
}

const Rendition* SceneRecord::find(double ev) const {
  for (const auto& r : renditions) {
    if (std::abs(r.relative_ev - ev) < 1e-9) return &r;
  }
  return nullptr;
}

std::vector<SceneRecord> load_scenes(const DatasetManifest& m) {
  std::map<std::string, SceneRecord> by_id;
  std::map<std::string, bool> has_gt;
  for (const auto& e : m.entries) {
    const fs::path p = m.root / e.path;
    if (!fs::exists(p)) throw std::runtime_error("manifest references missing file " + p.string());
    SceneRecord& rec = by_id[e.scene_id];
    rec.scene_id = e.scene_id;
    if (e.role == "gt") {
      if (has_gt[e.scene_id]) throw std::invalid_argument("scene " + e.scene_id + " has two ground truths");
      rec.ground_truth = read_png(p);
      has_gt[e.scene_id] = true;
    } else {
      if (rec.find(e.relative_ev)) {
        throw std::invalid_argument("scene " + e.scene_id + " repeats relative_ev " + format_ev(e.relative_ev));
      }
      rec.renditions.push_back(Rendition{e.relative_ev, read_png(p)});
    }
  }
  std::vector<SceneRecord> out;
  for (auto& [id, rec] : by_id) {
    if (!has_gt[id]) throw std::invalid_argument("scene " + id + " has no ground truth");
    std::sort(rec.renditions.begin(), rec.renditions.end(),
              [](const Rendition& a, const Rendition& b) { return a.relative_ev < b.relative_ev; });
    for (const auto& r : rec.renditions) {
      if (!r.image.same_size(rec.ground_truth)) throw std::invalid_argument("scene " + id + " mixes image sizes");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---- synthesis ------------------------------------------------------------------------------

namespace {

struct Shape2D {
  bool ellipse;
  double cx, cy, a, b, angle;
  Real color[3];
  double texture_amp, texture_fx, texture_fy, texture_phase;
};

struct Blob {
  double cx, cy, sigma, amp;
};

}  // namespace

LatentScene make_latent_scene(std::uint64_t seed, std::size_t size, double illumination_stops) {
  Rng rng(seed);
  const double S = static_cast<double>(size);

  // Background: a tinted linear gradient.
  Real bg[3];
  for (auto& c : bg) c = static_cast<Real>(rng.uniform(0.05, 0.6));
  const double bg_angle = rng.uniform(0, 2 * M_PI);
  const double bg_slope = rng.uniform(-0.8, 0.8);

  std::vector<Shape2D> shapes(4 + rng.index(6));
  for (auto& s : shapes) {
    s.ellipse = rng.uniform() < 0.5;
    s.cx = rng.uniform(0, S);
    s.cy = rng.uniform(0, S);
    s.a = rng.uniform(0.06, 0.25) * S;
    s.b = rng.uniform(0.06, 0.25) * S;
    s.angle = rng.uniform(0, M_PI);
    for (auto& c : s.color) c = static_cast<Real>(rng.uniform(0.02, 0.85));
    s.texture_amp = rng.uniform() < 0.5 ? rng.uniform(0.0, 0.15) : 0.0;
    s.texture_fx = rng.uniform(-0.8, 0.8);
    s.texture_fy = rng.uniform(-0.8, 0.8);
    s.texture_phase = rng.uniform(0, 2 * M_PI);
  }

  // Local exposure field in stops: offset + gradient + a few broad blobs, squashed by tanh.
  const double il_offset = rng.uniform(-0.3, 0.3);
  const double il_angle = rng.uniform(0, 2 * M_PI);
  const double il_slope = rng.uniform(-0.6, 0.6);
  std::vector<Blob> blobs(1 + rng.index(3));
  for (auto& b : blobs) {
    b.cx = rng.uniform(0, S);
    b.cy = rng.uniform(0, S);
    b.sigma = rng.uniform(0.15, 0.35) * S;
    b.amp = rng.uniform(-1.2, 1.2);
  }

  LatentScene scene{Image(size, size, ColorSpace::linear), Image(size, size, ColorSpace::linear)};
  constexpr int kSuper = 4;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / S - 0.5;
      const double v = (static_cast<double>(y) + 0.5) / S - 0.5;
      const double grad = 1.0 + bg_slope * (u * std::cos(bg_angle) + v * std::sin(bg_angle));
      Real px[3] = {0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double fx = static_cast<double>(x) + (sx + 0.5) / kSuper;
          const double fy = static_cast<double>(y) + (sy + 0.5) / kSuper;
          Real c[3] = {static_cast<Real>(bg[0] * grad), static_cast<Real>(bg[1] * grad),
                       static_cast<Real>(bg[2] * grad)};
          // Later shapes occlude earlier ones.
          for (const auto& s : shapes) {
            const double dx = fx - s.cx, dy = fy - s.cy;
            const double rx = dx * std::cos(s.angle) + dy * std::sin(s.angle);
            const double ry = -dx * std::sin(s.angle) + dy * std::cos(s.angle);
            const bool inside = s.ellipse ? (rx * rx) / (s.a * s.a) + (ry * ry) / (s.b * s.b) < 1.0
                                          : std::abs(rx) < s.a && std::abs(ry) < s.b;
            if (!inside) continue;
            const double tex =
                1.0 + s.texture_amp * std::sin(s.texture_fx * fx + s.texture_fy * fy + s.texture_phase);
            for (int k = 0; k < 3; ++k) c[k] = static_cast<Real>(s.color[k] * tex);
          }
          for (int k = 0; k < 3; ++k) px[k] += c[k];
        }
      }
      double field = il_offset + il_slope * 2.0 * (u * std::cos(il_angle) + v * std::sin(il_angle));
      for (const auto& b : blobs) {
        const double dx = static_cast<double>(x) + 0.5 - b.cx, dy = static_cast<double>(y) + 0.5 - b.cy;
        field += b.amp * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
      }
      const Real gain = static_cast<Real>(std::exp2(illumination_stops * std::tanh(field)));
      for (int k = 0; k < 3; ++k) {
        const Real r = std::clamp(px[k] / Real(kSuper * kSuper), Real(0.02), Real(0.85));
        scene.reflectance.at(y, x, k) = r;
        scene.as_shot.at(y, x, k) = r * gain;
      }
    }
  }
  return scene;
}

SynthesizedDataset synthesize_dataset(const SynthesisOptions& opts, const fs::path& out_dir) {
  if (opts.n_scenes < 1) throw std::invalid_argument("synthesize_dataset: need at least one scene");
  if (opts.image_size < 8) throw std::invalid_argument("synthesize_dataset: image size must be >= 8");
  if (opts.ev_set.empty()) throw std::invalid_argument("synthesize_dataset: empty EV set");
  for (std::size_t i = 0; i < opts.ev_set.size(); ++i)
    for (std::size_t j = i + 1; j < opts.ev_set.size(); ++j)
      if (std::abs(opts.ev_set[i] - opts.ev_set[j]) < 1e-9)
        throw std::invalid_argument("synthesize_dataset: duplicate EV " + format_ev(opts.ev_set[i]));

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  std::vector<double> evs = opts.ev_set;
  std::sort(evs.begin(), evs.end());
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(opts.n_scenes) * opts.test_fraction));
  const std::size_t n_train = opts.n_scenes - std::min(n_test, opts.n_scenes);

  std::vector<std::vector<ManifestEntry>> per_scene(opts.n_scenes);
  parallel_for(opts.n_scenes, opts.threads, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "s%04zu", i);
    const LatentScene scene =
        make_latent_scene(split_seed(split_seed(opts.seed, "scene"), i), opts.image_size, opts.illumination_stops);
    std::vector<ManifestEntry> rows;
    const std::string gt_path = std::string("images/") + id + "_gt.png";
    write_png(out_dir / gt_path, render_ev(scene.reflectance, 0.0), opts.bit_depth);
    rows.push_back(ManifestEntry{id, "gt", 0.0, gt_path});
    for (double ev : evs) {
      const std::string path = std::string("images/") + id + "_ev" + format_ev(ev) + ".png";
      write_png(out_dir / path, render_ev(scene.as_shot, ev), opts.bit_depth);
      rows.push_back(ManifestEntry{id, "input", ev, path});
    }
    per_scene[i] = std::move(rows);
  });

  SynthesizedDataset ds;
  ds.train.root = out_dir;
  ds.train.split = Split::train;
  ds.test.root = out_dir;
  ds.test.split = Split::test;
  for (std::size_t i = 0; i < opts.n_scenes; ++i) {
    auto& dst = i < n_train ? ds.train.entries : ds.test.entries;
    dst.insert(dst.end(), per_scene[i].begin(), per_scene[i].end());
  }
  save_manifest(ds.train, out_dir / "train.tsv");
  save_manifest(ds.test, out_dir / "test.tsv");
  return ds;
}

// ---- patch sampling -------------------------------------------------------------------------

PatchSampler::PatchSampler(const std::vector<SceneRecord>& scenes, PairMode mode, std::size_t patch_size,
                           std::uint64_t seed, std::vector<double> delta_set)
    : scenes_(scenes), mode_(mode), patch_size_(patch_size), delta_set_(std::move(delta_set)), rng_(seed) {
  if (scenes_.empty()) throw std::invalid_argument("patch sampler: empty dataset");
  if (delta_set_.empty()) throw std::invalid_argument("patch sampler: empty delta set");
  for (const auto& s : scenes_) {
    if (patch_size_ > s.ground_truth.height || patch_size_ > s.ground_truth.width) {
      throw std::invalid_argument("patch sampler: patch size " + std::to_string(patch_size_) +
                                  " exceeds image size of scene " + s.scene_id);
    }
    if (s.renditions.empty()) throw std::invalid_argument("patch sampler: scene " + s.scene_id + " has no renditions");
  }
}

PatchPair PatchSampler::draw(std::size_t scene_index) {
  const SceneRecord& s = scenes_.at(scene_index);
  PatchPair pair;
  pair.scene = scene_index;
  const Image* input = nullptr;
  const Image* target = nullptr;
  if (mode_ == PairMode::megnet) {
    for (int attempt = 0; attempt < 64 && !input; ++attempt) {
      const double delta = delta_set_[rng_.index(delta_set_.size())];
      std::vector<const Rendition*> sources;
      for (const auto& r : s.renditions) {
        if (s.find(r.relative_ev + delta)) sources.push_back(&r);
      }
      if (sources.empty()) continue;
      const Rendition* src = sources[rng_.index(sources.size())];
      input = &src->image;
      target = &s.find(src->relative_ev + delta)->image;
      pair.delta_ev = delta;
      pair.input_ev = src->relative_ev;
    }
    if (!input) throw std::invalid_argument("patch sampler: scene " + s.scene_id + " has no pair for the delta set");
  } else {
    const Rendition& src = s.renditions[rng_.index(s.renditions.size())];
    input = &src.image;
    target = &s.ground_truth;
    pair.input_ev = src.relative_ev;
    pair.delta_ev = -src.relative_ev;
  }
  const std::size_t H = s.ground_truth.height, W = s.ground_truth.width;
  const std::size_t y = rng_.index(H - patch_size_ + 1);
  const std::size_t x = rng_.index(W - patch_size_ + 1);
  pair.input = crop(*input, y, x, patch_size_, patch_size_);
  pair.target = crop(*target, y, x, patch_size_, patch_size_);
  return pair;
}

std::vector<PatchPair> PatchSampler::next_batch(std::size_t batch) {
  std::vector<PatchPair> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(draw(rng_.index(scenes_.size())));
  return out;
}

std::vector<PatchPair> sample_patch_pairs(const std::vector<SceneRecord>& scenes, std::size_t patch_size,
                                          std::size_t batch, std::uint64_t seed, PairMode mode) {
  PatchSampler sampler(scenes, mode, patch_size, seed);
  return sampler.next_batch(batch);
}

}  // namespace exreg
