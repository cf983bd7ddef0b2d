#pragma once

#include <cstddef>

namespace invd {

// Query counts follow the instance/point decomposition of each decoder:
// perception M_I instances x M_P points, prediction N_O agents x N_I modes x N_P
// points, planning K_I modes x K_P points.
struct ModelConfig {
  std::size_t M_I = 100;
  std::size_t M_P = 20;
  std::size_t N_O = 8;
  std::size_t N_I = 5;
  std::size_t N_P = 6;
  std::size_t K_I = 3;
  std::size_t K_P = 6;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t map_classes = 2;
  // BEV cells per side of one encoder token.
  std::size_t bev_patch = 15;
  // Meters per unit of head output: map coordinates and per-step trajectory offsets.
  double map_scale = 15.0;
  double step_scale = 5.0;

  // Ablation switches. A disabled module skips its query-initialization pass and
  // runs unmasked self-attention; masked_self_attention = false keeps every added
  // layer but replaces all masks with all-allowed ones.
  bool perception_intra = true;
  bool prediction_intra = true;
  bool planning_intra = true;
  bool masked_self_attention = true;

  void validate() const;

  std::size_t map_queries() const { return M_I * M_P; }
  std::size_t motion_queries() const { return N_O * N_I * N_P; }
  std::size_t ego_queries() const { return K_I * K_P; }
  std::size_t head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace invd
