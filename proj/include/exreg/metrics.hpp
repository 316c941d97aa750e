#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exreg/dataset.hpp"
#include "exreg/image.hpp"

namespace exreg {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE) over all pixel-channels of the stored (sRGB-encoded) values; +inf when equal.
double psnr(const Image& a, const Image& b);
// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03, L 1, valid windows only,
// averaged over channels.
double ssim(const Image& a, const Image& b);

struct PsnrVarOptions {
  bool sample_variance = false;  // divide by n-1 instead of n
  bool exclude_zero_ev = false;  // drop the 0-EV entry before computing
};

struct PsnrVar {
  double mean = 0;
  double variance = 0;
};

// Mean and variance of per-EV PSNR values. Needs at least two finite values.
PsnrVar psnr_var(const std::vector<double>& psnrs, bool sample_variance = false);
// Scores each output against gt. evs pairs with outputs and is only consulted for exclude_zero_ev.
PsnrVar psnr_var(const std::vector<Image>& outputs, const Image& gt, const std::vector<double>& evs = {},
                 const PsnrVarOptions& opts = {});

// 0.5 (10 - Ma + NIQE); lower is better.
double perceptual_index(double ma, double niqe);

// Per-image no-reference scores keyed by image name, read from CSV "image,ma,niqe".
std::map<std::string, std::pair<double, double>> load_pi_scores(const std::filesystem::path& csv);

struct SceneScores {
  std::string scene_id;
  std::vector<double> evs;
  std::vector<double> psnr;
  std::vector<double> ssim;
  double psnr_var = 0;  // NaN when undefined (mixed infinite PSNRs or a single EV)
};

struct GroupSummary {
  std::size_t count = 0;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

struct EvaluationReport {
  std::vector<SceneScores> scenes;    // sorted by scene_id
  std::vector<SceneScores> baseline;  // identity corrector on the same inputs
  GroupSummary under, over, all;
  GroupSummary baseline_under, baseline_over, baseline_all;
  double mean_psnr_var = 0;
  double baseline_mean_psnr_var = 0;
  PsnrVarOptions var_options;
  std::optional<double> mean_pi;
};

// Maps an input rendition (and its relative EV) to a corrected image.
using Corrector = std::function<Image(const Image& input, double relative_ev)>;

struct EvaluateOptions {
  PsnrVarOptions var_options;
  std::size_t threads = 1;
  std::optional<std::map<std::string, std::pair<double, double>>> pi_scores;
};

// Under-exposed group: EV < 0. Over-exposed group: EV >= 0.
EvaluationReport evaluate(const std::vector<SceneRecord>& scenes, const Corrector& corrector,
                          const EvaluateOptions& opts = {});

std::string format_metric(double v);
// CSV: scene_id,ev,psnr_db,ssim
void write_report_csv(const EvaluationReport& report, std::ostream& os);
std::string format_summary(const EvaluationReport& report);

}  // namespace exreg
