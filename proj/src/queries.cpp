#include "invdriver/queries.hpp"

#include "invdriver/errors.hpp"
#include "invdriver/ops.hpp"

namespace invd {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("ModelConfig: " + m); };
  if (!M_I || !M_P || !N_O || !N_I || !N_P || !K_I || !K_P) fail("query counts must be >= 1");
  if (!d_model || !n_heads || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
  if (d_model % 4 != 0) fail("d_model must be divisible by 4 (2-D positional encoding)");
  if (!n_layers) fail("n_layers must be >= 1");
  if (!map_classes) fail("map_classes must be >= 1");
  if (!bev_patch) fail("bev_patch must be >= 1");
  if (!(map_scale > 0 && step_scale > 0)) fail("output scales must be positive");
  if (N_P < 2 || K_P < 2 || M_P < 2) fail("polylines need at least 2 points");
}

}  // namespace invd

namespace invd::query {

QueryBank QueryBank::create(ad::ParameterRegistry& reg, const std::string& prefix, std::size_t count,
                            std::size_t points, std::size_t modes, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, kInitStd);
  auto table = [&](const std::string& name, std::size_t rows) {
    auto t = reg.add(prefix + "." + name, {rows, d});
    for (auto& v : t.mutable_values()) v = gauss(rng);
    return t;
  };
  QueryBank bank;
  bank.instance = table("instance_embed", count);
  bank.point = table("point_embed", points);
  if (modes) bank.mode = table("mode_embed", modes);
  return bank;
}

ad::Tensor compose_queries(const ad::Tensor& instance, const ad::Tensor& point) {
  if (instance.rank() != 2 || point.rank() != 2 || instance.dim(1) != point.dim(1))
    throw DimensionError("compose_queries width mismatch: instance " + ad::shape_str(instance.shape()) + ", point " +
                         ad::shape_str(point.shape()));
  return ad::pairwise_add(instance, point);
}

ad::Tensor compose_motion_queries(const ad::Tensor& agent, const ad::Tensor& mode, const ad::Tensor& point) {
  if (agent.rank() != 2 || mode.rank() != 2 || point.rank() != 2 || agent.dim(1) != mode.dim(1) ||
      agent.dim(1) != point.dim(1))
    throw DimensionError("compose_motion_queries width mismatch: agent " + ad::shape_str(agent.shape()) + ", mode " +
                         ad::shape_str(mode.shape()) + ", point " + ad::shape_str(point.shape()));
  return ad::pairwise_add(ad::pairwise_add(agent, mode), point);
}

IntraInstanceMask build_intra_instance_mask(std::size_t n_instances, std::size_t block_size) {
  if (!n_instances || !block_size) throw InputError("mask needs n_instances >= 1 and block_size >= 1");
  const std::size_t q = n_instances * block_size;
  IntraInstanceMask m(q, q, false);
  for (std::size_t b = 0; b < n_instances; ++b)
    for (std::size_t i = b * block_size; i < (b + 1) * block_size; ++i)
      for (std::size_t j = b * block_size; j < (b + 1) * block_size; ++j) m.set(i, j, true);
  return m;
}

IntraInstanceMask mask_for_perception(const ModelConfig& cfg) { return build_intra_instance_mask(cfg.M_I, cfg.M_P); }

IntraInstanceMask mask_for_prediction(const ModelConfig& cfg, std::size_t n_agents) {
  if (!n_agents) throw InputError("mask_for_prediction needs n_agents >= 1");
  return build_intra_instance_mask(n_agents * cfg.N_I, cfg.N_P);
}

IntraInstanceMask mask_for_planning(const ModelConfig& cfg) { return build_intra_instance_mask(cfg.K_I, cfg.K_P); }

}  // namespace invd::query
