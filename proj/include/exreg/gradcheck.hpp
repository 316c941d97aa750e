#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "exreg/autodiff.hpp"
#include "exreg/nn.hpp"

namespace exreg {

struct GradcheckOptions {
  double h = 1e-5;           // central-difference step
  double min_h = 1e-8;       // smallest step tried when a step straddles a ReLU/abs kink
  double tolerance = 1e-4;   // max |g_tape - g_fd| / (|g_fd| + floor)
  double floor = 1e-8;
  std::size_t max_elements = 0;  // per leaf; 0 checks every element
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // elements whose every step crossed a kink
  double max_rel_error = 0;
  double tolerance = 1e-4;
  std::string worst;  // "<leaf>[index]" of the largest error

  bool passed() const { return checked > 0 && max_rel_error < tolerance; }
};

using LossBuilder = std::function<Var(Tape&)>;

// Compares tape gradients of the scalar built by `f` against central differences for every element
// of every leaf. `f` must read the leaves through tape.parameter().
GradcheckReport gradcheck(const std::string& name, const ParamRefs& leaves, const LossBuilder& f,
                          const GradcheckOptions& opts = {});

struct OpCase {
  std::string name;
  std::function<GradcheckReport(const GradcheckOptions&)> run;
};

// One or more cases for every differentiable op.
std::vector<OpCase> registered_op_cases();

// Whole-network checks on the micro profile: MEGNet on 8x8 inputs, RegNet on 16x16 stacks (the
// smallest size its four stride-2 layers allow).
GradcheckReport gradcheck_megnet_micro(const GradcheckOptions& opts = {});
GradcheckReport gradcheck_regnet_micro(const GradcheckOptions& opts = {});

// Every registered op plus both networks. Empty in 32-bit builds, where finite differences are not
// meaningful.
std::vector<GradcheckReport> run_gradcheck_suite(const GradcheckOptions& opts = {});

// sum(y * R) for a fixed pseudo-random R of y's shape; turns any op output into a scalar whose
// gradient exercises every output element.
Var random_projection(Tape& tape, const Var& y, std::uint64_t seed);

}  // namespace exreg
