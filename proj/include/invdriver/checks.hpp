#pragma once

// Finite-difference gradient checks over the substrate operations, one decoder
// layer and the full model loss. Shared by the CLI and the acceptance suite.

#include <cstdint>
#include <string>
#include <vector>

#include "invdriver/grad_check.hpp"
#include "invdriver/model_config.hpp"

namespace invd::checks {

inline constexpr double kGradStep = 1e-5;

struct NamedReport {
  std::string name;
  ad::GradCheckReport report;
};

// One isolated check per differentiable operation.
std::vector<NamedReport> op_gradient_checks(double tolerance, std::uint64_t seed = 0);

// A perception decoder layer (cross-attention, masked self-attention, FFN)
// with respect to its parameters and both inputs.
ad::GradCheckReport decoder_layer_gradient_check(double tolerance, std::uint64_t seed = 0);

// d_model 16, 2 heads, 1 layer, M_I 3, M_P 4, N_O 2, N_I 2, N_P 3, K_I 2, K_P 3
// over an 8 x 8 BEV raster.
ModelConfig toy_gradient_config();

// Total training loss of the toy model on a synthetic 8 x 8 BEV input with
// hand-built targets, with respect to every model parameter.
ad::GradCheckReport full_model_gradient_check(double tolerance, std::uint64_t seed = 0);

}  // namespace invd::checks
