// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero if any
// criterion fails. Criteria 5 to 9 drive the exreg command line in-process on synthetic data.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "exreg/cli.hpp"
#include "exreg/gradcheck.hpp"
#include "exreg/metrics.hpp"
#include "exreg/model.hpp"
#include "exreg/training.hpp"
#include "oracles.hpp"

using namespace exreg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Settings {
  fs::path work;
  std::size_t threads = 1;
  std::ofstream log;
};

// Runs one exreg command, appending its output to the acceptance log.
void exreg(Settings& s, std::vector<std::string> args) {
  args.insert(args.begin(), "exreg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream err;
  s.log << "$";
  for (const auto& a : args) s.log << ' ' << a;
  s.log << '\n';
  const int code = cli::run(int(argv.size()), argv.data(), s.log, err);
  s.log << err.str();
  s.log.flush();
  if (code != 0) throw std::runtime_error(args[1] + " exited with " + std::to_string(code) + ": " + err.str());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(is), {}};
}

Tensor run_op(const std::function<Var(Tape&)>& f) {
  Tape t;
  return f(t).value();
}

// ---- 1 -------------------------------------------------------------------------------------

Verdict gradients() {
  const auto t0 = Clock::now();
  const std::vector<GradcheckReport> reports = run_gradcheck_suite();
  double worst = 0;
  std::string worst_name;
  std::size_t failed = 0;
  for (const auto& r : reports) {
    if (!r.passed()) ++failed;
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = r.name + " " + r.worst;
  }
  const double secs = seconds_since(t0);
  return {!reports.empty() && failed == 0 && secs < 120,
          std::to_string(reports.size()) + " checks, " + std::to_string(failed) + " failed, max rel error " +
              std::to_string(worst) + " (" + worst_name + "), " + fixed(secs, 1) + " s"};
}

// ---- 2 -------------------------------------------------------------------------------------

Verdict oracles() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::map<std::string, std::pair<int, double>> stats;  // name -> (instances, worst error)
  auto record = [&](const std::string& name, double err) {
    auto& s = stats[name];
    ++s.first;
    s.second = std::max(s.second, err);
  };

  while (stats["conv2d"].first < 120) {
    const std::size_t N = 1 + rng.index(2), C = 1 + rng.index(3), K = 1 + rng.index(3), k = 1 + rng.index(4);
    const int stride = 1 + int(rng.index(2)), pad = int(rng.index(k));
    const long H = long(k) + stride * long(rng.index(4)) - 2 * pad, W = long(k) + stride * long(rng.index(4)) - 2 * pad;
    if (H < 1 || W < 1) continue;
    const Tensor x = oracle::random_tensor(rng, {N, C, std::size_t(H), std::size_t(W)});
    const Tensor w = oracle::random_tensor(rng, {K, C, k, k}), b = oracle::random_tensor(rng, {K});
    const Tensor got = run_op([&](Tape& t) { return conv2d(t.constant(x), t.constant(w), t.constant(b), stride, pad); });
    record("conv2d", oracle::max_abs_diff(got, oracle::conv2d(x, w, b, stride, pad)));
  }
  while (stats["transposed_conv2d"].first < 120) {
    const std::size_t N = 1 + rng.index(2), C = 1 + rng.index(3), O = 1 + rng.index(3), k = 1 + rng.index(4);
    const int stride = 1 + int(rng.index(2)), pad = int(rng.index((k + 1) / 2));
    const std::size_t H = 1 + rng.index(5), W = 1 + rng.index(5);
    if ((H - 1) * stride + k <= std::size_t(2 * pad) || (W - 1) * stride + k <= std::size_t(2 * pad)) continue;
    const Tensor x = oracle::random_tensor(rng, {N, C, H, W});
    const Tensor w = oracle::random_tensor(rng, {C, O, k, k}), b = oracle::random_tensor(rng, {O});
    const Tensor got =
        run_op([&](Tape& t) { return transposed_conv2d(t.constant(x), t.constant(w), t.constant(b), stride, pad); });
    record("transposed_conv2d", oracle::max_abs_diff(got, oracle::transposed_conv2d(x, w, b, stride, pad)));
  }
  for (int i = 0; i < 120; ++i) {
    const std::size_t k = 1 + rng.index(4);
    const Tensor x = oracle::random_tensor(rng, {1 + rng.index(2), 1 + rng.index(3), k * (1 + rng.index(4)), k * (1 + rng.index(4))});
    record("avg_pool", oracle::max_abs_diff(run_op([&](Tape& t) { return avg_pool2d(t.constant(x), int(k)); }),
                                            oracle::avg_pool2d(x, k)));
  }
  for (int i = 0; i < 120; ++i) {
    const std::size_t H = 11 + rng.index(10), W = 11 + rng.index(10);
    const Image a = oracle::random_image(rng, H, W);
    Image b = a;
    const double noise = rng.uniform(0.01, 0.4);
    for (auto& v : b.pixels) v = std::clamp(v + Real(rng.uniform(-noise, noise)), Real(0), Real(1));
    record("psnr", std::abs(psnr(a, b) - oracle::psnr(a, b)));
    record("ssim", std::abs(ssim(a, b) - oracle::ssim(a, b)));
  }
  for (int i = 0; i < 120; ++i) {
    const Shape s{1 + rng.index(2), 3, 1 + rng.index(6), 1 + rng.index(6)};
    const Tensor a = oracle::random_tensor(rng, s, 0, 1), b = oracle::random_tensor(rng, s, 0, 1);
    const double eps = rng.uniform(1e-4, 1e-1);
    double l1 = 0, ch = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = double(a[j]) - double(b[j]);
      l1 += std::abs(d);
      ch += std::sqrt(d * d + eps * eps);
    }
    const double n = double(a.size());
    record("l1", std::abs(run_op([&](Tape& t) { return l1_loss(t.constant(a), t.constant(b)); })[0] - l1 / n));
    record("charbonnier",
           std::abs(run_op([&](Tape& t) { return charbonnier_loss(t.constant(a), t.constant(b), Real(eps)); })[0] - ch / n));
  }

  bool pass = true;
  std::string detail;
  for (const auto& [name, s] : stats) {
    pass = pass && s.first >= 100 && s.second <= 1e-9;
    detail += name + " " + std::to_string(s.first) + "x max " + fixed(s.second * 1e12, 3) + "e-12; ";
  }
  const double secs = seconds_since(t0);
  return {pass && secs < 60, detail + fixed(secs, 1) + " s"};
}

// ---- 3 -------------------------------------------------------------------------------------

Verdict closed_forms() {
  Rng rng(3);
  double modulation = 0, fam = 0;
  {
    const Tensor f = oracle::random_tensor(rng, {2, 4, 3, 5});
    const Tensor a = oracle::random_tensor(rng, {2, 4}), b = oracle::random_tensor(rng, {2, 4});
    const Tensor out = run_op([&](Tape& t) { return modulate(t.constant(f), t.constant(a), t.constant(b)); });
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t y = 0; y < 3; ++y)
          for (std::size_t x = 0; x < 5; ++x)
            modulation = std::max(modulation, (double)std::abs(out.at(n, c, y, x) - (a.at(n, c) * f.at(n, c, y, x) + b.at(n, c))));
  }
  {
    Regnet net = Regnet::init(model_profile("micro").regnet, 5, 3);
    FamNet& m = net.fam[0];
    for (auto* c : {&m.scale[1], &m.shift[1]})
      for (auto& v : c->weight.value.data()) v = Real(rng.uniform(-1, 1));
    const Tensor enf = oracle::random_tensor(rng, {1, 3, 8, 8});
    const Tensor e = oracle::random_tensor(rng, {1, 1, 16, 16}, -1.5, 1.5);
    Tape t;
    const Var er = bilinear_resize(t.constant(e), 8, 8);
    const Tensor S = m.scale[1](t, relu(m.scale[0](t, er))).value();
    const Tensor B = m.shift[1](t, relu(m.shift[0](t, er))).value();
    const Tensor got = fam_adjust(t, m, t.constant(enf), t.constant(e)).value();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x)
          fam = std::max(fam, (double)std::abs(got.at(0, c, y, x) - (S.at(0, 0, y, x) * enf.at(0, c, y, x) + B.at(0, 0, y, x))));
  }
  const Tensor z = Tensor::full({1, 3, 4, 4}, 0.3);
  const double charb = run_op([&](Tape& t) { return charbonnier_loss(t.constant(z), t.constant(z), Real(1e-3)); })[0];
  const double pi = perceptual_index(8, 4);
  const double charb_err = std::abs(charb - 1e-3), pi_err = std::abs(pi - 3.0);
  return {modulation <= 1e-12 && fam <= 1e-12 && charb_err <= 1e-12 && pi_err <= 1e-12,
          "modulation " + std::to_string(modulation) + ", FAM " + std::to_string(fam) + ", charbonnier(0) = " +
              std::to_string(charb) + ", PI(8,4) = " + fixed(pi, 12)};
}

// ---- 4 -------------------------------------------------------------------------------------

Verdict attention() {
  RegnetConfig cfg = model_profile("micro").regnet;
  const std::size_t C = cfg.encoder_channels.back();
  Rng rng(4);
  auto grids_for = [&](Tape& t, std::size_t count, std::size_t G, const std::vector<double>& evs) {
    std::vector<TokenGrid> g;
    for (std::size_t k = 0; k < count; ++k) g.push_back({t.constant(oracle::random_tensor(rng, {G * G, C})), evs[k], G});
    return g;
  };

  double row_err = 0;
  {
    const Regnet net = Regnet::init(cfg, 5, 41);
    Tape t;
    const auto grids = grids_for(t, 5, 2, {-1.5, -1, 0, 1, 1.5});
    AttentionTrace trace;
    cross_attend(t, net, grids, 2, t.constant(oracle::random_tensor(rng, {2, 2}, -1.5, 1.5)), &trace);
    for (const auto* ws : {&trace.block1_weights, &trace.block2_weights})
      for (const Tensor& w : *ws)
        for (std::size_t q = 0; q < w.dim(0); ++q) {
          double s = 0;
          for (std::size_t k = 0; k < w.dim(1); ++k) s += w.at(q, k);
          row_err = std::max(row_err, std::abs(s - 1));
        }
    if (trace.block1_weights.empty() || trace.block2_weights.empty()) row_err = kInfinity;
  }
  bool single_exact = false;
  {
    const Regnet net = Regnet::init(cfg, 1, 42);
    Tape t;
    AttentionTrace trace;
    cross_attend(t, net, grids_for(t, 1, 1, {0.0}), 0, t.constant(Tensor::from({1, 1}, {0.4})), &trace);
    single_exact = trace.block1_attended == trace.block1_values;
  }
  double perm_err = 0;
  {
    const Regnet net = Regnet::init(cfg, 5, 43);
    Tape t;
    const auto grids = grids_for(t, 5, 2, std::vector<double>(5, 0.5));
    const Var e = t.constant(oracle::random_tensor(rng, {2, 2}, -1.5, 1.5));
    const Tensor ref = cross_attend(t, net, grids, 2, e).value();
    const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
    std::vector<TokenGrid> shuffled;
    for (std::size_t p : perm) shuffled.push_back(grids[p]);
    perm_err = oracle::max_abs_diff(ref, cross_attend(t, net, shuffled, 3, e).value());
  }
  return {row_err <= 1e-9 && single_exact && perm_err <= 1e-9,
          "row-sum error " + std::to_string(row_err) + ", single token exact: " + (single_exact ? "yes" : "no") +
              ", permutation error " + std::to_string(perm_err)};
}

// ---- 5 to 9: trained models ----------------------------------------------------------------

// Budget for the desk-scale run. MEGNet uses its stage defaults; the regressor gets a short
// schedule at a higher learning rate so the whole run fits the time limit.
constexpr const char* kRegnetEpochs = "12";
constexpr const char* kRegnetLr = "1e-3";
constexpr const char* kCotrainEpochs = "2";

struct MainRun {
  double seconds = 0;
  double megnet_seconds = 0;
  EvaluationReport report;
  std::vector<double> megnet_losses;  // per logged epoch
  double regnet_val_init = 0, regnet_val_final = 0;
};

std::vector<double> logged_losses(const fs::path& csv) {
  std::istringstream is(slurp(csv));
  std::vector<double> out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::string step, stage, loss;
    std::getline(row, step, ',');
    std::getline(row, stage, ',');
    std::getline(row, loss, ',');
    out.push_back(std::stod(loss));
  }
  return out;
}

// Mean corrected PSNR on the training run's validation scenes.
double validation_psnr(const fs::path& ckpt, const std::vector<SceneRecord>& scenes, std::size_t threads) {
  const Checkpoint ck = load_checkpoint(ckpt);
  std::vector<SceneRecord> val;
  for (const auto& s : scenes)
    if (is_validation_scene(s.scene_id, TrainConfig::defaults(Stage::regnet).val_fraction)) val.push_back(s);
  return correction_psnr(ck.model, val, threads);
}

MainRun main_run(Settings& s) {
  const auto t0 = Clock::now();
  const std::string d = (s.work / "data").string(), threads = std::to_string(s.threads);
  exreg(s, {"make-dataset", "--scenes", "200", "--size", "64", "--seed", "1", "--out", d, "--threads", threads});
  exreg(s, {"train", "--stage", "megnet", "--data", d, "--out", (s.work / "megnet").string(), "--threads", threads});
  MainRun r;
  r.megnet_seconds = seconds_since(t0);
  std::cout << "  megnet trained in " << fixed(r.megnet_seconds, 0) << " s" << std::endl;
  exreg(s, {"train", "--stage", "regnet", "--data", d, "--init", (s.work / "megnet/model.exrg").string(), "--out",
            (s.work / "regnet").string(), "--epochs", kRegnetEpochs, "--lr", kRegnetLr, "--threads", threads});
  std::cout << "  regnet trained at " << fixed(seconds_since(t0), 0) << " s" << std::endl;
  exreg(s, {"train", "--stage", "cotrain", "--data", d, "--init", (s.work / "regnet/model.exrg").string(), "--out",
            (s.work / "cotrain").string(), "--epochs", kCotrainEpochs, "--threads", threads});
  std::cout << "  cotrain finished at " << fixed(seconds_since(t0), 0) << " s" << std::endl;
  exreg(s, {"evaluate", "--ckpt", (s.work / "cotrain/model.exrg").string(), "--data", d, "--out",
            (s.work / "eval").string(), "--threads", threads});
  r.seconds = seconds_since(t0);

  r.megnet_losses = logged_losses(s.work / "megnet/train_log.csv");
  const std::vector<SceneRecord> train = load_scenes(load_manifest(s.work / "data/train.tsv"));
  r.regnet_val_init = validation_psnr(s.work / "megnet/model.exrg", train, s.threads);
  r.regnet_val_final = validation_psnr(s.work / "regnet/model.exrg", train, s.threads);

  const Checkpoint ck = load_checkpoint(s.work / "cotrain/model.exrg");
  const std::vector<SceneRecord> test = load_scenes(load_manifest(s.work / "data/test.tsv"));
  r.report = evaluate(test, [&](const Image& in, double) { return correct_image_resized(ck.model, in).image; },
                      {{}, s.threads, {}});
  return r;
}

Verdict efficacy(const MainRun& r) {
  const EvaluationReport& e = r.report;
  const double du = e.under.mean_psnr - e.baseline_under.mean_psnr, dov = e.over.mean_psnr - e.baseline_over.mean_psnr;
  return {du >= 3 && dov >= 3 && r.seconds <= 1800,
          "under " + fixed(e.under.mean_psnr) + " vs " + fixed(e.baseline_under.mean_psnr) + " dB (+" + fixed(du) +
              "), over " + fixed(e.over.mean_psnr) + " vs " + fixed(e.baseline_over.mean_psnr) + " dB (+" + fixed(dov) +
              "), " + std::to_string(e.scenes.size()) + " test scenes, " + fixed(r.seconds, 0) + " s"};
}

Verdict megnet_loss_trend(const MainRun& r) {
  const std::size_t n = std::min<std::size_t>(5, r.megnet_losses.size());
  bool decreasing = n == 5;
  std::string detail = "first logged losses:";
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && !(r.megnet_losses[i] < r.megnet_losses[i - 1])) decreasing = false;
    detail += " " + fixed(r.megnet_losses[i], 5);
  }
  return {decreasing, detail};
}

Verdict regnet_gain(const MainRun& r) {
  const double gain = r.regnet_val_final - r.regnet_val_init;
  return {gain >= 3, "validation PSNR " + fixed(r.regnet_val_init) + " dB at init, " + fixed(r.regnet_val_final) +
                         " dB trained (+" + fixed(gain) + ")"};
}

Verdict consistency(const MainRun& r) {
  const double ours = r.report.mean_psnr_var, input = r.report.baseline_mean_psnr_var;
  return {std::isfinite(ours) && ours < input && ours < 0.5 * input,
          "PSNR-Var corrected " + fixed(ours, 3) + " vs input " + fixed(input, 3) + " (" + fixed(100 * ours / input, 1) +
              "%)"};
}

Verdict generation_trend(Settings& s, const MainRun& r) {
  const auto t0 = Clock::now();
  const fs::path d = s.work / "heldout";
  exreg(s, {"make-dataset", "--scenes", "20", "--size", "64", "--seed", "77", "--ev-set", "-1.5,-1,-0.5,0,0.5,1,1.5",
            "--test-fraction", "1", "--out", d.string(), "--threads", std::to_string(s.threads)});
  const std::vector<SceneRecord> scenes = load_scenes(load_manifest(d / "test.tsv"));
  const Checkpoint ck = load_checkpoint(s.work / "megnet/model.exrg");
  const std::vector<double> deltas{-1.5, -1, -0.5, 0, 0.5, 1, 1.5};
  const std::vector<double> p = megnet_generation_psnr(ck.model.megnet, scenes, deltas, s.threads);
  std::vector<double> by_mag(4);
  for (std::size_t i = 0; i < 4; ++i) by_mag[i] = (p[3 - i] + p[3 + i]) / 2;
  bool monotone = true;
  for (std::size_t i = 1; i < 4; ++i) monotone = monotone && by_mag[i] <= by_mag[i - 1];
  const double secs = r.megnet_seconds + seconds_since(t0);
  std::string detail = "|dEV| 0/0.5/1/1.5: ";
  for (double v : by_mag) detail += fixed(v) + " ";
  return {monotone && by_mag[0] >= 35 && secs <= 600, detail + "dB on 20 held-out scenes, " + fixed(secs, 0) + " s"};
}

Verdict n_ablation(Settings& s) {
  const std::string d = (s.work / "data").string(), threads = std::to_string(s.threads);
  const std::string meg = (s.work / "megnet/model.exrg").string();
  std::string detail;
  bool ok = true;
  for (const auto& [n, evs] : std::vector<std::pair<int, std::string>>{{2, "-1.5,1.5"}, {4, "-1.5,-1,1,1.5"}}) {
    const fs::path out = s.work / ("ablation_n" + std::to_string(n));
    exreg(s, {"train", "--stage", "regnet", "--data", d, "--init", meg, "--out", out.string(), "--stack-evs", evs,
              "--epochs", "3", "--lr", kRegnetLr, "--threads", threads});
    exreg(s, {"evaluate", "--ckpt", (out / "model.exrg").string(), "--data", d, "--out", (out / "eval").string(),
              "--threads", threads});
    const Checkpoint ck = load_checkpoint(out / "model.exrg");
    const std::vector<SceneRecord> test = load_scenes(load_manifest(s.work / "data/test.tsv"));
    const EvaluationReport rep =
        evaluate(test, [&](const Image& in, double) { return correct_image_resized(ck.model, in).image; }, {{}, s.threads, {}});
    ok = ok && std::isfinite(rep.all.mean_psnr) && ck.model.regnet.stack_size == std::size_t(n + 1);
    detail += "N=" + std::to_string(n) + ": " + fixed(rep.all.mean_psnr) + " dB (PSNR-Var " + fixed(rep.mean_psnr_var, 3) +
              "); ";
  }
  return {ok, detail + "3 regressor epochs each"};
}

Verdict determinism(Settings& s) {
  auto run = [&](const std::string& tag) {
    const fs::path w = s.work / ("determinism_" + tag);
    const std::string d = (w / "data").string();
    exreg(s, {"make-dataset", "--scenes", "12", "--size", "32", "--seed", "5", "--test-fraction", "0.25", "--out", d,
              "--threads", "1"});
    const std::vector<std::string> small{"--batch-size", "4", "--patch-size", "32", "--seed", "9", "--threads", "1"};
    auto train = [&](std::vector<std::string> a) {
      a.insert(a.end(), small.begin(), small.end());
      exreg(s, a);
    };
    train({"train", "--stage", "megnet", "--data", d, "--out", (w / "m").string(), "--profile", "micro",
           "--image-size", "32", "--epochs", "2"});
    train({"train", "--stage", "regnet", "--data", d, "--init", (w / "m/model.exrg").string(), "--out",
           (w / "r").string(), "--epochs", "1"});
    train({"train", "--stage", "cotrain", "--data", d, "--init", (w / "r/model.exrg").string(), "--out",
           (w / "c").string(), "--epochs", "1"});
    exreg(s, {"evaluate", "--ckpt", (w / "c/model.exrg").string(), "--data", d, "--out", (w / "eval").string(),
              "--threads", "1"});
    return w;
  };
  const fs::path a = run("a"), b = run("b");
  std::size_t compared = 0, differing = 0;
  for (const char* f : {"m/model.exrg", "r/model.exrg", "c/model.exrg", "c/train_log.csv", "eval/report.csv",
                        "eval/baseline.csv"}) {
    ++compared;
    if (slurp(a / f) != slurp(b / f)) ++differing;
  }
  return {differing == 0, std::to_string(compared) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exreg acceptance run"};
  Settings s;
  std::string work = (fs::temp_directory_path() / "exreg-acceptance").string();
  std::vector<int> only;
  bool keep = false;
  s.threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--work", work, "scratch directory (wiped at start)");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--threads", s.threads, "worker threads for the trained-model criteria");
  app.add_flag("--keep", keep, "keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  s.work = work;
  fs::remove_all(s.work);
  fs::create_directories(s.work);
  s.log.open(s.work / "acceptance.log");
  const std::set<int> wanted(only.begin(), only.end());
  auto want = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };

  int failures = 0;
  auto report = [&](int n, const std::string& title, const std::function<Verdict()>& f) {
    if (!want(n)) return;
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << title << "): " << v.detail << std::endl;
  };

  report(1, "gradient correctness", gradients);
  report(2, "oracle equivalence", oracles);
  report(3, "closed forms", closed_forms);
  report(4, "attention properties", attention);

  std::optional<MainRun> run;
  std::string run_error;
  if (want(5) || want(6) || want(7) || want(8)) {
    try {
      run = main_run(s);
    } catch (const std::exception& e) {
      run_error = e.what();
    }
  }
  auto with_run = [&](const std::function<Verdict(const MainRun&)>& f) {
    return [&, f] { return run ? f(*run) : Verdict{false, "desk-scale run failed: " + run_error}; };
  };
  report(5, "desk-scale efficacy", with_run(efficacy));
  report(6, "consistency", with_run(consistency));
  report(7, "generation trend", with_run([&](const MainRun& r) { return generation_trend(s, r); }));
  report(8, "N ablation", with_run([&](const MainRun&) { return n_ablation(s); }));
  report(9, "determinism", [&] { return determinism(s); });

  // Measured-run checks on the training stages of the desk-scale run.
  auto check = [&](const std::string& title, const std::function<Verdict()>& f) {
    if (!want(5)) return;
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS" : "FAIL") << " training check (" << title << "): " << v.detail << std::endl;
  };
  check("megnet loss strictly decreases", with_run(megnet_loss_trend));
  check("regnet gains at least 3 dB", with_run(regnet_gain));

  s.log.close();
  if (!keep) fs::remove_all(s.work);
  std::cout << (failures ? std::to_string(failures) + " checks failed" : std::string("all checks passed")) << std::endl;
  return failures ? 1 : 0;
}
