#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "invdriver/mask.hpp"
#include "invdriver/model_config.hpp"
#include "invdriver/tensor.hpp"

namespace invd::query {

// Learned embedding tables of one decoder. Point embeddings are a single table
// shared by every instance.
struct QueryBank {
  ad::Tensor instance;  // [count, d]
  ad::Tensor point;     // [points_per_instance, d]
  ad::Tensor mode;      // [modes, d]; undefined when the decoder has no mode axis

  static constexpr double kInitStd = 0.02;
  static QueryBank create(ad::ParameterRegistry& reg, const std::string& prefix, std::size_t count,
                          std::size_t points, std::size_t modes, std::size_t d, std::mt19937_64& rng);
};

// [n, d] + [p, d] -> [n*p, d], row i*p + j = instance[i] + point[j].
ad::Tensor compose_queries(const ad::Tensor& instance, const ad::Tensor& point);

// [N_O, d], [N_I, d], [N_P, d] -> [N_O*N_I*N_P, d], row (o*N_I + m)*N_P + t = agent[o] + mode[m] + point[t].
ad::Tensor compose_motion_queries(const ad::Tensor& agent, const ad::Tensor& mode, const ad::Tensor& point);

// Block-diagonal mask: i and j may attend iff i / block_size == j / block_size.
IntraInstanceMask build_intra_instance_mask(std::size_t n_instances, std::size_t block_size);

IntraInstanceMask mask_for_perception(const ModelConfig& cfg);
// One block per (agent, mode) trajectory of N_P points.
IntraInstanceMask mask_for_prediction(const ModelConfig& cfg, std::size_t n_agents);
// One block per ego mode of K_P points.
IntraInstanceMask mask_for_planning(const ModelConfig& cfg);

}  // namespace invd::query
