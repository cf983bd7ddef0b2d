#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "invdriver/tensor.hpp"

namespace invd::ad {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  double max_rel_error() const;
  bool passed() const { return max_rel_error() <= tolerance; }
};

struct GradCheckOptions {
  // 0 checks every element; otherwise a seeded random subset of this size per parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t sample_seed = 0;
};

// Compares backward() gradients of a scalar-valued `loss_fn` against central
// finite differences, element by element. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8). Throws DeterminismError if two evaluations
// of `loss_fn` at the same point disagree.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Parameter> params, double step,
                           double tolerance, const GradCheckOptions& options = {});

}  // namespace invd::ad
