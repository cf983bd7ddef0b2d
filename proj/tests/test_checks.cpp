#include "doctest.h"
#include "invdriver/checks.hpp"

using namespace invd;

TEST_CASE("every operation passes its gradient check over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (const auto& r : checks::op_gradient_checks(1e-4, seed)) {
      INFO(r.name << " seed " << seed);
      CHECK(r.report.passed());
      for (const auto& e : r.report.entries) CHECK(e.checked > 0);
    }
}

TEST_CASE("decoder layer gradient check") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = checks::decoder_layer_gradient_check(1e-4, seed);
    INFO("seed " << seed << " max " << r.max_rel_error());
    CHECK(r.passed());
    // Parameters of the layer plus x and ctx.
    CHECK(r.entries.size() > 10);
  }
}

TEST_CASE("toy model loss gradient check") {
  const auto cfg = checks::toy_gradient_config();
  CHECK_NOTHROW(cfg.validate());
  const auto r = checks::full_model_gradient_check(1e-3, 0);
  INFO("max " << r.max_rel_error());
  CHECK(r.passed());
}
