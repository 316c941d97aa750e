#include "exreg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "exreg/dataset.hpp"
#include "exreg/gradcheck.hpp"
#include "exreg/metrics.hpp"
#include "exreg/model.hpp"
#include "exreg/training.hpp"

namespace exreg::cli {

namespace fs = std::filesystem;

namespace {

// Raised when a run finishes but a self-check it performs does not hold.
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetArgs {
  std::size_t scenes = 200;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  std::string out;
  std::string ev_set = "-1.5,-1,0,1,1.5";
  double illumination = 0.75;
  double test_fraction = 0.1;
  int bit_depth = 8;
};

struct TrainArgs {
  std::string stage;
  std::string data;
  std::string manifest;
  std::string out;
  std::string init;
  std::string profile = "desk";
  std::optional<std::size_t> image_size;
  std::string stack_evs;
  std::optional<std::size_t> epochs, batch_size, patch_size, passes_per_epoch, val_every, max_val_scenes;
  std::optional<double> lr, beta1, beta2, adam_eps, charbonnier_eps, clip_norm, val_fraction;
  std::string delta_set;
  std::uint64_t seed = 0;
};

struct CorrectArgs {
  std::string ckpt, in, out, exposure_map;
  bool native = false;
};

struct GenerateArgs {
  std::string ckpt, in, out;
  double ev = 0;
};

struct EvaluateArgs {
  std::string ckpt;
  bool identity = false;
  std::string data;
  std::string manifest;
  std::string split = "test";
  std::string out;
  std::string pi_scores;
  bool sample_variance = false;
  bool exclude_zero_ev = false;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t max_elements = 0;
};

struct Args {
  DatasetArgs dataset;
  TrainArgs train;
  CorrectArgs correct;
  GenerateArgs generate;
  EvaluateArgs evaluate;
  GradcheckArgs gradcheck;
  std::size_t threads = 1;
  std::string config;
};

struct Parsed {
  std::unique_ptr<CLI::App> app;
  Args args;
  CLI::App* sub = nullptr;
};

void add_common(CLI::App* s, Args& a, bool threads) {
  s->add_option("--config", a.config, "file of 'key = value' lines; command-line flags take precedence");
  if (threads)
    s->add_option("--threads", a.threads, "worker threads (falls back to EXREG_THREADS)")
        ->envname("EXREG_THREADS")
        ->check(CLI::PositiveNumber);
}

std::unique_ptr<CLI::App> build(Args& a) {
  auto app = std::make_unique<CLI::App>("exreg: exposure correction as multi-dimensional regression", "exreg");
  app->require_subcommand(1);
  app->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto* ds = app->add_subcommand("make-dataset", "synthesize a multi-exposure dataset with ground truth");
  ds->add_option("--scenes", a.dataset.scenes, "number of scenes")->check(CLI::PositiveNumber);
  ds->add_option("--size", a.dataset.size, "square image size in pixels")->check(CLI::PositiveNumber);
  ds->add_option("--seed", a.dataset.seed, "root seed");
  ds->add_option("--out", a.dataset.out, "output directory")->required();
  ds->add_option("--ev-set", a.dataset.ev_set, "comma-separated relative EVs of the renditions");
  ds->add_option("--illumination", a.dataset.illumination, "peak local exposure variation in stops");
  ds->add_option("--test-fraction", a.dataset.test_fraction, "fraction of scenes in the test split");
  ds->add_option("--bit-depth", a.dataset.bit_depth, "PNG bit depth (8 or 16)")->check(CLI::IsMember({8, 16}));
  add_common(ds, a, true);

  auto* tr = app->add_subcommand("train", "train one stage (megnet, regnet or cotrain)");
  auto& t = a.train;
  tr->add_option("--stage", t.stage, "megnet, regnet or cotrain")->required();
  tr->add_option("--data", t.data, "dataset directory (uses train.tsv)");
  tr->add_option("--manifest", t.manifest, "manifest file");
  tr->add_option("--out", t.out, "output directory for model.exrg, train_log.csv and config.txt")->required();
  tr->add_option("--init", t.init, "checkpoint to continue from (required after the megnet stage)");
  tr->add_option("--profile", t.profile, "model profile: desk, full or micro");
  tr->add_option("--image-size", t.image_size, "native model resolution");
  tr->add_option("--stack-evs", t.stack_evs, "comma-separated EVs MEGNet generates around the input");
  tr->add_option("--epochs", t.epochs);
  tr->add_option("--batch-size", t.batch_size);
  tr->add_option("--patch-size", t.patch_size);
  tr->add_option("--passes-per-epoch", t.passes_per_epoch, "patches per training scene per epoch");
  tr->add_option("--lr", t.lr);
  tr->add_option("--beta1", t.beta1);
  tr->add_option("--beta2", t.beta2);
  tr->add_option("--adam-eps", t.adam_eps);
  tr->add_option("--charbonnier-eps", t.charbonnier_eps);
  tr->add_option("--clip-norm", t.clip_norm);
  tr->add_option("--val-every", t.val_every, "epochs between validations");
  tr->add_option("--val-fraction", t.val_fraction);
  tr->add_option("--max-val-scenes", t.max_val_scenes, "0 uses every validation scene");
  tr->add_option("--delta-set", t.delta_set, "comma-separated EV offsets for generator training");
  tr->add_option("--seed", t.seed, "root seed");
  add_common(tr, a, true);

  auto* co = app->add_subcommand("correct", "correct the exposure of one image");
  co->add_option("--ckpt", a.correct.ckpt)->required();
  co->add_option("--in", a.correct.in)->required();
  co->add_option("--out", a.correct.out)->required();
  co->add_option("--dump-exposure-map", a.correct.exposure_map, "16-bit PNG of the predicted exposure map");
  co->add_flag("--native", a.correct.native, "run at the model's native resolution and resize back");
  add_common(co, a, false);

  auto* ge = app->add_subcommand("generate", "re-expose one image with MEGNet alone");
  ge->add_option("--ckpt", a.generate.ckpt)->required();
  ge->add_option("--in", a.generate.in)->required();
  ge->add_option("--ev", a.generate.ev, "relative exposure change in stops")->required();
  ge->add_option("--out", a.generate.out)->required();
  add_common(ge, a, false);

  auto* ev = app->add_subcommand("evaluate", "score a checkpoint (or the identity) on a dataset split");
  auto& e = a.evaluate;
  ev->add_option("--ckpt", e.ckpt);
  ev->add_flag("--identity", e.identity, "evaluate the identity corrector");
  ev->add_option("--data", e.data, "dataset directory");
  ev->add_option("--manifest", e.manifest, "manifest file");
  ev->add_option("--split", e.split, "split read from --data")->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--out", e.out, "output directory for report.csv, baseline.csv and summary.txt")->required();
  ev->add_option("--pi-scores", e.pi_scores, "CSV image,ma,niqe of externally computed scores");
  ev->add_flag("--sample-variance", e.sample_variance, "PSNR-Var divides by n-1");
  ev->add_flag("--exclude-zero-ev", e.exclude_zero_ev, "PSNR-Var ignores the 0-EV rendition");
  add_common(ev, a, true);

  auto* gc = app->add_subcommand("gradcheck", "finite-difference check of every op and both networks");
  gc->add_option("--seed", a.gradcheck.seed);
  gc->add_option("--max-elements", a.gradcheck.max_elements, "elements sampled per tensor (0: all)");
  add_common(gc, a, false);

  auto* st = app->add_subcommand("selftest", "quick end-to-end check of a fresh build");
  add_common(st, a, false);
  return app;
}

Parsed parse(const std::vector<std::string>& tokens) {
  Parsed p;
  p.app = build(p.args);
  std::vector<std::string> rev(tokens.rbegin(), tokens.rend());
  p.app->parse(rev);
  p.sub = p.app->get_subcommands().front();
  return p;
}

std::string normalise_key(std::string k) {
  std::replace(k.begin(), k.end(), '_', '-');
  return k;
}

// Defaults < config file < flags: config entries are spliced in ahead of the real flags and the
// last occurrence of an option wins.
Parsed parse_layered(const std::vector<std::string>& tokens) {
  Parsed first = parse(tokens);
  if (first.args.config.empty()) return first;
  std::ifstream is(first.args.config);
  if (!is) throw std::invalid_argument("cannot read config file " + first.args.config);
  std::stringstream text;
  text << is.rdbuf();
  const std::string name = first.sub->get_name();
  std::vector<std::string> spliced{name};
  for (const auto& [key, value] : parse_key_values(text.str())) {
    const std::string flag = "--" + normalise_key(key);
    if (flag == "--config") continue;
    if (!first.sub->get_option_no_throw(flag)) {
      throw std::invalid_argument("config file " + first.args.config + ": unknown key '" + key + "' for " + name);
    }
    spliced.push_back(flag + "=" + value);
  }
  auto pos = std::find(tokens.begin(), tokens.end(), name);
  spliced.insert(spliced.end(), pos + 1, tokens.end());
  std::vector<std::string> head(tokens.begin(), pos);
  head.insert(head.end(), spliced.begin(), spliced.end());
  return parse(head);
}

void echo(std::ostream& out, const std::string& command, const KeyValues& kv) {
  out << "# resolved config: exreg " << command << '\n' << format_key_values(kv);
  out.flush();
}

std::vector<SceneRecord> scenes_from(const std::string& data, const std::string& manifest, const std::string& split) {
  if (data.empty() == manifest.empty()) throw std::invalid_argument("give exactly one of --data or --manifest");
  const fs::path file = manifest.empty() ? fs::path(data) / (split + ".tsv") : fs::path(manifest);
  return load_scenes(load_manifest(file));
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

int cmd_make_dataset(const Args& a, std::ostream& out) {
  const auto& d = a.dataset;
  SynthesisOptions o;
  o.n_scenes = d.scenes;
  o.image_size = d.size;
  o.seed = d.seed;
  o.ev_set = parse_double_list(d.ev_set);
  o.illumination_stops = d.illumination;
  o.test_fraction = d.test_fraction;
  o.bit_depth = d.bit_depth;
  o.threads = a.threads;
  echo(out, "make-dataset",
       {{"scenes", std::to_string(o.n_scenes)},
        {"size", std::to_string(o.image_size)},
        {"seed", std::to_string(o.seed)},
        {"out", d.out},
        {"ev-set", format_list(o.ev_set)},
        {"illumination", format_ev(o.illumination_stops)},
        {"test-fraction", format_ev(o.test_fraction)},
        {"bit-depth", std::to_string(o.bit_depth)},
        {"threads", std::to_string(o.threads)}});
  const SynthesizedDataset ds = synthesize_dataset(o, d.out);
  auto count = [](const DatasetManifest& m) {
    std::size_t n = 0;
    for (const auto& e : m.entries) n += e.role == "gt";
    return n;
  };
  out << "wrote " << count(ds.train) << " train and " << count(ds.test) << " test scenes to " << d.out << '\n';
  return kExitOk;
}

int cmd_train(const Args& a, std::ostream& out) {
  const TrainArgs& t = a.train;
  TrainConfig cfg = TrainConfig::defaults(parse_stage(t.stage));
  if (t.epochs) cfg.epochs = *t.epochs;
  if (t.batch_size) cfg.batch_size = *t.batch_size;
  if (t.patch_size) cfg.patch_size = *t.patch_size;
  if (t.passes_per_epoch) cfg.passes_per_epoch = *t.passes_per_epoch;
  if (t.val_every) cfg.val_every = *t.val_every;
  if (t.max_val_scenes) cfg.max_val_scenes = *t.max_val_scenes;
  if (t.lr) cfg.adam.lr = *t.lr;
  if (t.beta1) cfg.adam.beta1 = *t.beta1;
  if (t.beta2) cfg.adam.beta2 = *t.beta2;
  if (t.adam_eps) cfg.adam.eps = *t.adam_eps;
  if (t.charbonnier_eps) cfg.charbonnier_epsilon = *t.charbonnier_eps;
  if (t.clip_norm) cfg.clip_norm = *t.clip_norm;
  if (t.val_fraction) cfg.val_fraction = *t.val_fraction;
  if (!t.delta_set.empty()) cfg.delta_set = parse_double_list(t.delta_set);
  cfg.seed = t.seed;
  cfg.threads = a.threads;
  cfg.validate();

  std::optional<Checkpoint> init;
  ModelConfig model_cfg;
  if (!t.init.empty()) {
    init = load_checkpoint(t.init);
    if (t.image_size || t.profile != "desk") {
      throw std::invalid_argument("--profile and --image-size cannot change a model loaded with --init");
    }
    if (!t.stack_evs.empty()) {
      // The regressor input width follows the stack size, so it can only be chosen before it trains.
      if (init->has_stage("regnet") || init->has_stage("cotrain")) {
        throw std::invalid_argument("--stack-evs cannot change a checkpoint whose regnet is already trained");
      }
      ModelConfig c = init->model.cfg;
      c.stack_evs = parse_double_list(t.stack_evs);
      c.validate();
      for (auto* p : init->model.regnet.parameters()) init->adam.moments.erase(p->name);
      init->model.cfg = c;
      init->model.regnet =
          Regnet::init(c.regnet, c.stack_evs.size() + 1, split_seed(split_seed(t.seed, "init"), "regnet"));
    }
    model_cfg = init->model.cfg;
  } else {
    model_cfg = model_profile(t.profile);
    if (t.image_size) model_cfg.image_size = *t.image_size;
    if (!t.stack_evs.empty()) model_cfg.stack_evs = parse_double_list(t.stack_evs);
    model_cfg.validate();
  }

  KeyValues resolved;
  for (const auto& [k, v] : cfg.to_key_values()) resolved[normalise_key(k)] = v;
  if (!t.data.empty()) resolved["data"] = t.data;
  if (!t.manifest.empty()) resolved["manifest"] = t.manifest;
  resolved["out"] = t.out;
  if (!t.init.empty()) {
    resolved["init"] = t.init;
    if (!t.stack_evs.empty()) resolved["stack-evs"] = format_list(model_cfg.stack_evs);
  } else {
    resolved["profile"] = model_cfg.profile;
    resolved["image-size"] = std::to_string(model_cfg.image_size);
    resolved["stack-evs"] = format_list(model_cfg.stack_evs);
  }
  resolved["threads"] = std::to_string(a.threads);
  echo(out, "train", resolved);

  const std::vector<SceneRecord> scenes = scenes_from(t.data, t.manifest, "train");
  fs::create_directories(t.out);
  {
    std::ofstream cfg_file(fs::path(t.out) / ("config_" + t.stage + ".txt"));
    cfg_file << format_key_values(resolved);
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome res = train(cfg, scenes, init, model_cfg, [&](const TrainLogRow& r) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << r.stage << " step " << r.step << " loss " << format_metric(r.loss) << " val_psnr "
        << format_metric(r.val_psnr) << " (" << static_cast<long>(s) << " s)\n";
    out.flush();
  });
  const fs::path log = fs::path(t.out) / "train_log.csv";
  write_train_log(res.log, log, init.has_value());
  const fs::path model = fs::path(t.out) / "model.exrg";
  save_checkpoint(res.best, model);
  out << "saved " << model.string() << " (stages:";
  for (const auto& s : res.best.stages) out << ' ' << s;
  out << ")\n";
  return kExitOk;
}

Correction correct_any(const ExregModel& m, const Image& img, bool native) {
  if (native || img.height % 16 || img.width % 16) return correct_image_resized(m, img);
  return correct_image(m, img);
}

int cmd_correct(const Args& a, std::ostream& out) {
  const auto& c = a.correct;
  echo(out, "correct",
       {{"ckpt", c.ckpt}, {"in", c.in}, {"out", c.out}, {"dump-exposure-map", c.exposure_map}, {"native", bool_str(c.native)}});
  const Checkpoint ck = load_checkpoint(c.ckpt);
  const Image input = read_png(c.in);
  const Correction res = correct_any(ck.model, input, c.native);
  write_png(c.out, res.image);
  if (!c.exposure_map.empty()) {
    std::vector<Real> mapped(res.exposure.size());
    for (std::size_t i = 0; i < mapped.size(); ++i)
      mapped[i] = std::clamp((res.exposure[i] + Real(1.5)) / Real(3), Real(0), Real(1));
    write_gray16_png(c.exposure_map, mapped, input.height, input.width);
  }
  out << "wrote " << c.out << '\n';
  return kExitOk;
}

int cmd_generate(const Args& a, std::ostream& out) {
  const auto& g = a.generate;
  echo(out, "generate", {{"ckpt", g.ckpt}, {"in", g.in}, {"ev", format_ev(g.ev)}, {"out", g.out}});
  const Checkpoint ck = load_checkpoint(g.ckpt);
  const Image input = read_png(g.in);
  const Image result = megnet_forward(ck.model.megnet, input, g.ev);
  write_png(g.out, result);
  out << "wrote " << g.out << " (psnr vs input " << format_metric(psnr(result, input)) << " dB)\n";
  return kExitOk;
}

int cmd_evaluate(const Args& a, std::ostream& out) {
  const auto& e = a.evaluate;
  if (e.identity == !e.ckpt.empty()) throw std::invalid_argument("give exactly one of --ckpt or --identity");
  KeyValues resolved{{"out", e.out},
                     {"split", e.split},
                     {"sample-variance", bool_str(e.sample_variance)},
                     {"exclude-zero-ev", bool_str(e.exclude_zero_ev)},
                     {"threads", std::to_string(a.threads)}};
  if (e.identity) resolved["identity"] = "true";
  else resolved["ckpt"] = e.ckpt;
  if (!e.data.empty()) resolved["data"] = e.data;
  if (!e.manifest.empty()) resolved["manifest"] = e.manifest;
  if (!e.pi_scores.empty()) resolved["pi-scores"] = e.pi_scores;
  echo(out, "evaluate", resolved);

  const std::vector<SceneRecord> scenes = scenes_from(e.data, e.manifest, e.split);
  EvaluateOptions opts;
  opts.threads = a.threads;
  opts.var_options.sample_variance = e.sample_variance;
  opts.var_options.exclude_zero_ev = e.exclude_zero_ev;
  if (!e.pi_scores.empty()) opts.pi_scores = load_pi_scores(e.pi_scores);

  std::optional<Checkpoint> ck;
  if (!e.identity) ck = load_checkpoint(e.ckpt);
  const Corrector corrector = [&](const Image& img, double) {
    return ck ? correct_any(ck->model, img, false).image : img;
  };
  const EvaluationReport report = evaluate(scenes, corrector, opts);

  fs::create_directories(e.out);
  {
    std::ofstream os(fs::path(e.out) / "report.csv");
    write_report_csv(report, os);
    if (!os) throw std::runtime_error("cannot write " + (fs::path(e.out) / "report.csv").string());
  }
  {
    EvaluationReport base = report;
    base.scenes = report.baseline;
    std::ofstream os(fs::path(e.out) / "baseline.csv");
    write_report_csv(base, os);
  }
  const std::string summary = format_summary(report);
  std::ofstream(fs::path(e.out) / "summary.txt") << summary;
  out << summary;
  return kExitOk;
}

int cmd_gradcheck(const Args& a, std::ostream& out) {
  GradcheckOptions o;
  o.seed = a.gradcheck.seed;
  o.max_elements = a.gradcheck.max_elements;
  echo(out, "gradcheck", {{"seed", std::to_string(o.seed)}, {"max-elements", std::to_string(o.max_elements)}});
  const auto reports = run_gradcheck_suite(o);
  if (reports.empty()) throw std::invalid_argument("gradcheck needs a 64-bit build");
  bool ok = true;
  for (const auto& r : reports) {
    ok = ok && r.passed();
    out << (r.passed() ? "PASS " : "FAIL ") << r.name << ": max rel error " << r.max_rel_error << " over " << r.checked
        << " elements";
    if (r.skipped) out << " (" << r.skipped << " at kinks skipped)";
    if (!r.passed()) out << ", worst " << r.worst;
    out << '\n';
  }
  if (!ok) throw CheckFailed("gradcheck: tape gradients disagree with finite differences");
  out << "gradcheck: all " << reports.size() << " checks passed\n";
  return kExitOk;
}

// Removes its directory on scope exit.
struct ScratchDir {
  fs::path path;
  ScratchDir() {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path = fs::temp_directory_path() / ("exreg-selftest-" + std::to_string(stamp));
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

int cmd_selftest(std::ostream& out) {
  auto check = [&](bool ok, const std::string& what) {
    out << (ok ? "ok   " : "FAIL ") << what << '\n';
    out.flush();
    if (!ok) throw CheckFailed("selftest: " + what);
  };
#ifndef EXREG_SINGLE_PRECISION
  GradcheckOptions go;
  bool grads_ok = true;
  for (const auto& c : registered_op_cases()) grads_ok = grads_ok && c.run(go).passed();
  check(grads_ok, "op gradients match finite differences");
#endif

  ScratchDir dir;
  SynthesisOptions so;
  so.n_scenes = 6;
  so.image_size = 16;
  so.seed = 7;
  so.test_fraction = 0.34;
  const SynthesizedDataset ds = synthesize_dataset(so, dir.path / "data");
  const auto train_scenes = load_scenes(ds.train);
  const auto test_scenes = load_scenes(ds.test);
  check(train_scenes.size() == 4 && test_scenes.size() == 2, "dataset synthesis and manifest round trip");

  ModelConfig mc = model_profile("micro");
  TrainConfig tc = TrainConfig::defaults(Stage::megnet);
  tc.epochs = 2, tc.patch_size = 16, tc.batch_size = 4, tc.passes_per_epoch = 1;
  TrainOutcome meg = train(tc, train_scenes, std::nullopt, mc);
  check(meg.log.size() == 2 && std::isfinite(meg.log.back().loss), "megnet stage trains");

  tc = TrainConfig::defaults(Stage::regnet);
  tc.epochs = 1, tc.patch_size = 16, tc.batch_size = 2;
  TrainOutcome reg = train(tc, train_scenes, meg.best, mc);
  tc = TrainConfig::defaults(Stage::cotrain);
  tc.epochs = 1, tc.patch_size = 16, tc.batch_size = 2;
  TrainOutcome co = train(tc, train_scenes, reg.best, mc);
  check(co.best.stages == std::vector<std::string>{"megnet", "regnet", "cotrain"}, "regnet and cotrain stages train");

  const fs::path ckpt = dir.path / "model.exrg";
  save_checkpoint(co.best, ckpt);
  const Checkpoint loaded = load_checkpoint(ckpt);
  check(serialize_checkpoint(loaded) == serialize_checkpoint(co.best), "checkpoint round trip is byte-identical");

  const Correction c = correct_image(loaded.model, test_scenes.front().renditions.front().image);
  check(in_unit_range(c.image) && std::all_of(c.exposure.data().begin(), c.exposure.data().end(),
                                              [](Real v) { return std::abs(v) <= Real(1.5); }),
        "correction output is a valid image with a bounded exposure map");

  const EvaluationReport rep =
      evaluate(test_scenes, [&](const Image& img, double) { return correct_image(loaded.model, img).image; });
  check(rep.scenes.size() == 2 && std::isfinite(rep.all.mean_psnr), "evaluation produces finite scores");
  out << "selftest: all checks passed\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> tokens;
  for (int i = 1; i < argc; ++i) tokens.emplace_back(argv[i]);
  Parsed p;
  try {
    p = parse_layered(tokens);
  } catch (const CLI::CallForHelp&) {
    Args a;
    out << build(a)->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    Args a;
    out << build(a)->help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    Args a;
    err << "exreg: " << e.what() << "\n\n" << build(a)->help();
    return kExitUser;
  } catch (const std::invalid_argument& e) {
    err << "exreg: " << e.what() << '\n';
    return kExitUser;
  }

  const std::string cmd = p.sub->get_name();
  try {
    if (cmd == "make-dataset") return cmd_make_dataset(p.args, out);
    if (cmd == "train") return cmd_train(p.args, out);
    if (cmd == "correct") return cmd_correct(p.args, out);
    if (cmd == "generate") return cmd_generate(p.args, out);
    if (cmd == "evaluate") return cmd_evaluate(p.args, out);
    if (cmd == "gradcheck") return cmd_gradcheck(p.args, out);
    if (cmd == "selftest") return cmd_selftest(out);
    err << "exreg: unhandled subcommand " << cmd << '\n';
    return kExitInternal;
  } catch (const CheckFailed& e) {
    err << "exreg " << cmd << ": " << e.what() << '\n';
    return kExitInternal;
  } catch (const std::invalid_argument& e) {
    err << "exreg " << cmd << ": " << e.what() << '\n';
    return kExitUser;
  } catch (const std::runtime_error& e) {
    err << "exreg " << cmd << ": " << e.what() << '\n';
    return kExitUser;
  } catch (const std::exception& e) {
    err << "exreg " << cmd << ": internal error: " << e.what() << '\n';
    return kExitInternal;
  } catch (...) {
    err << "exreg " << cmd << ": internal error\n";
    return kExitInternal;
  }
}

}  // namespace exreg::cli
