#include "exreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "exreg/parallel.hpp"

namespace exreg {

namespace {

void require_same_size(const char* op, const Image& a, const Image& b) {
  if (!a.same_size(b)) {
    throw std::invalid_argument(std::string(op) + ": size mismatch " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width));
  }
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> w(kWindow);
  double s = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Valid-region separable Gaussian filter of a single plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t H, std::size_t W,
                                 const std::vector<double>& taps) {
  const std::size_t oh = H - kWindow + 1, ow = W - kWindow + 1;
  std::vector<double> rows(H * ow);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * plane[y * W + x + k];
      rows[y * ow + x] = s;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

SceneScores score_scene(const SceneRecord& scene, const std::vector<Image>& outputs, const PsnrVarOptions& opts) {
  SceneScores s;
  s.scene_id = scene.scene_id;
  std::vector<double> var_inputs;
  for (std::size_t i = 0; i < scene.renditions.size(); ++i) {
    const double ev = scene.renditions[i].relative_ev;
    s.evs.push_back(ev);
    s.psnr.push_back(psnr(outputs[i], scene.ground_truth));
    s.ssim.push_back(ssim(outputs[i], scene.ground_truth));
    if (!(opts.exclude_zero_ev && ev == 0)) var_inputs.push_back(s.psnr.back());
  }
  const bool all_inf = !var_inputs.empty() && std::all_of(var_inputs.begin(), var_inputs.end(),
                                                          [](double v) { return std::isinf(v); });
  const bool any_inf = std::any_of(var_inputs.begin(), var_inputs.end(), [](double v) { return std::isinf(v); });
  const std::size_t min_n = opts.sample_variance ? 2 : 1;
  if (all_inf) {
    s.psnr_var = 0;  // identical outputs: no spread
  } else if (any_inf || var_inputs.size() < std::max<std::size_t>(min_n, 2)) {
    s.psnr_var = std::nan("");
  } else {
    s.psnr_var = psnr_var(var_inputs, opts.sample_variance).variance;
  }
  return s;
}

void summarise(const std::vector<SceneScores>& scenes, GroupSummary& under, GroupSummary& over, GroupSummary& all,
               double& mean_var) {
  std::vector<double> pu, po, pa, su, so, sa, vars;
  for (const auto& s : scenes) {
    for (std::size_t i = 0; i < s.evs.size(); ++i) {
      (s.evs[i] < 0 ? pu : po).push_back(s.psnr[i]);
      (s.evs[i] < 0 ? su : so).push_back(s.ssim[i]);
      pa.push_back(s.psnr[i]);
      sa.push_back(s.ssim[i]);
    }
    if (!std::isnan(s.psnr_var)) vars.push_back(s.psnr_var);
  }
  under = GroupSummary{pu.size(), mean_of(pu), mean_of(su)};
  over = GroupSummary{po.size(), mean_of(po), mean_of(so)};
  all = GroupSummary{pa.size(), mean_of(pa), mean_of(sa)};
  mean_var = mean_of(vars);
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_size("psnr", a, b);
  if (a.pixels.empty()) throw std::invalid_argument("psnr: empty image");
  double se = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    se += d * d;
  }
  if (se == 0) return kInfinity;
  const double mse = se / static_cast<double>(a.pixels.size());
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  require_same_size("ssim", a, b);
  if (a.height < kWindow || a.width < kWindow) {
    throw std::invalid_argument("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " is smaller than the 11x11 window");
  }
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const std::size_t H = a.height, W = a.width, n = H * W;
  const auto taps = gaussian_taps();
  double total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.pixels[i * 3 + c];
      y[i] = b.pixels[i * 3 + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, H, W, taps), my = filter_valid(y, H, W, taps);
    const auto sxx = filter_valid(xx, H, W, taps), syy = filter_valid(yy, H, W, taps);
    const auto sxy = filter_valid(xy, H, W, taps);
    double s = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      s += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) / ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    total += s / static_cast<double>(mx.size());
  }
  return total / 3.0;
}

PsnrVar psnr_var(const std::vector<double>& psnrs, bool sample_variance) {
  if (psnrs.size() < 2) throw std::invalid_argument("psnr_var: need at least 2 outputs, got " + std::to_string(psnrs.size()));
  for (double p : psnrs)
    if (!std::isfinite(p)) throw std::invalid_argument("psnr_var: infinite or NaN PSNR among the outputs");
  const double m = mean_of(psnrs);
  double ss = 0;
  for (double p : psnrs) ss += (p - m) * (p - m);
  const double denom = static_cast<double>(sample_variance ? psnrs.size() - 1 : psnrs.size());
  return PsnrVar{m, ss / denom};
}

PsnrVar psnr_var(const std::vector<Image>& outputs, const Image& gt, const std::vector<double>& evs,
                 const PsnrVarOptions& opts) {
  if (opts.exclude_zero_ev && evs.size() != outputs.size()) {
    throw std::invalid_argument("psnr_var: excluding the 0-EV entry needs one EV per output");
  }
  std::vector<double> values;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (opts.exclude_zero_ev && evs[i] == 0) continue;
    values.push_back(psnr(outputs[i], gt));
  }
  return psnr_var(values, opts.sample_variance);
}

double perceptual_index(double ma, double niqe) {
  if (!std::isfinite(ma) || !std::isfinite(niqe)) throw std::invalid_argument("perceptual_index: non-finite score");
  return 0.5 * (10.0 - ma + niqe);
}

std::map<std::string, std::pair<double, double>> load_pi_scores(const std::filesystem::path& csv) {
  std::ifstream is(csv);
  if (!is) throw std::runtime_error("cannot open PI score file " + csv.string());
  std::map<std::string, std::pair<double, double>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("image", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string name, ma, niqe;
    if (!std::getline(ss, name, ',') || !std::getline(ss, ma, ',') || !std::getline(ss, niqe)) {
      throw std::invalid_argument(csv.string() + ":" + std::to_string(lineno) + ": expected image,ma,niqe");
    }
    try {
      out[name] = {std::stod(ma), std::stod(niqe)};
    } catch (const std::exception&) {
      throw std::invalid_argument(csv.string() + ":" + std::to_string(lineno) + ": bad score");
    }
  }
  return out;
}

EvaluationReport evaluate(const std::vector<SceneRecord>& scenes, const Corrector& corrector,
                          const EvaluateOptions& opts) {
  std::vector<const SceneRecord*> order;
  for (const auto& s : scenes) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->scene_id < b->scene_id; });

  EvaluationReport r;
  r.var_options = opts.var_options;
  r.scenes.resize(order.size());
  r.baseline.resize(order.size());
  parallel_for(order.size(), opts.threads, [&](std::size_t i) {
    const SceneRecord& scene = *order[i];
    std::vector<Image> outputs, inputs;
    for (const auto& rend : scene.renditions) {
      Image y = corrector(rend.image, rend.relative_ev);
      if (!y.same_size(scene.ground_truth)) throw std::runtime_error("evaluate: corrector changed the image size");
      outputs.push_back(std::move(y));
      inputs.push_back(rend.image);
    }
    r.scenes[i] = score_scene(scene, outputs, opts.var_options);
    r.baseline[i] = score_scene(scene, inputs, opts.var_options);
  });
  summarise(r.scenes, r.under, r.over, r.all, r.mean_psnr_var);
  summarise(r.baseline, r.baseline_under, r.baseline_over, r.baseline_all, r.baseline_mean_psnr_var);
  if (opts.pi_scores && !opts.pi_scores->empty()) {
    std::vector<double> pis;
    for (const auto& [name, s] : *opts.pi_scores) pis.push_back(perceptual_index(s.first, s.second));
    r.mean_pi = mean_of(pis);
  }
  return r;
}

std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_report_csv(const EvaluationReport& report, std::ostream& os) {
  os << "scene_id,ev,psnr_db,ssim\n";
  for (const auto& s : report.scenes) {
    for (std::size_t i = 0; i < s.evs.size(); ++i) {
      os << s.scene_id << ',' << format_ev(s.evs[i]) << ',' << format_metric(s.psnr[i]) << ','
         << format_metric(s.ssim[i]) << '\n';
    }
  }
}

std::string format_summary(const EvaluationReport& r) {
  std::ostringstream os;
  auto row = [&](const char* label, const GroupSummary& g, const GroupSummary& b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s %6zu  %12s  %10s  %12s  %10s\n", label, g.count, format_metric(g.mean_psnr).c_str(),
                  format_metric(g.mean_ssim).c_str(), format_metric(b.mean_psnr).c_str(),
                  format_metric(b.mean_ssim).c_str());
    os << buf;
  };
  os << "PSNR in sRGB-encoded space; PSNR-Var uses " << (r.var_options.sample_variance ? "sample" : "population")
     << " variance" << (r.var_options.exclude_zero_ev ? " excluding the 0-EV rendition" : "") << ".\n";
  os << "scenes: " << r.scenes.size() << "\n\n";
  char head[160];
  std::snprintf(head, sizeof head, "%-24s %6s  %12s  %10s  %12s  %10s\n", "group", "images", "psnr_db", "ssim",
                "input_psnr", "input_ssim");
  os << head;
  row("under-exposed (EV < 0)", r.under, r.baseline_under);
  row("over-exposed (EV >= 0)", r.over, r.baseline_over);
  row("all", r.all, r.baseline_all);
  os << "\nPSNR-Var: corrected " << format_metric(r.mean_psnr_var) << ", input " << format_metric(r.baseline_mean_psnr_var)
     << "\n";
  if (r.mean_pi) os << "PI (external Ma/NIQE scores): " << format_metric(*r.mean_pi) << "\n";
  return os.str();
}

}  // namespace exreg
