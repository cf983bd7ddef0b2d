#include "invdriver/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "invdriver/errors.hpp"

namespace invd::ad {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Parameter> params, double step,
                           double tolerance, const GradCheckOptions& options) {
  if (!(step > 0.0 && step <= 1e-2)) throw ValidationError("grad_check step must lie in (0, 1e-2]");

  for (auto& p : params) p.tensor.zero_grad();
  const Tensor loss = loss_fn();
  loss.backward();

  auto eval = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };
  const double f0 = eval();
  const double f1 = eval();
  if (std::memcmp(&f0, &f1, sizeof f0) != 0 || std::memcmp(&f0, &loss.values()[0], sizeof f0) != 0)
    throw DeterminismError("loss function is not deterministic: repeated evaluation gave different values");

  GradCheckReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(options.sample_seed);
  for (auto& p : params) {
    GradCheckEntry entry{p.name, 0.0, 0};
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    std::vector<std::size_t> idx(p.tensor.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_elements_per_param && idx.size() > options.max_elements_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_elements_per_param);
      std::sort(idx.begin(), idx.end());
    }
    auto values = p.tensor.mutable_values();
    for (std::size_t i : idx) {
      const double v0 = values[i];
      values[i] = v0 + step;
      const double fp = eval();
      values[i] = v0 - step;
      const double fm = eval();
      values[i] = v0;
      const double numeric = (fp - fm) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++entry.checked;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace invd::ad
