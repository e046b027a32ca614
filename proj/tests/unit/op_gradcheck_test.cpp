#include <gtest/gtest.h>

#include "tamseg/gradcheck.hpp"
#include "tamseg/ops.hpp"

namespace tamseg {
namespace {

TEST(OpGradcheckTest, EveryOpMatchesFiniteDifferencesOnTwentySeeds) {
  const auto results = check_op_suite(20);
  EXPECT_GE(results.size(), 20u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " worst " << r.max_rel_error << " at " << r.worst;
    EXPECT_GT(r.checked, 0u) << r.name;
  }
}

TEST(OpGradcheckTest, DetectsAWrongGradient) {
  // At the relu kink the central difference sees slope 0.5, the tape 0 or 1.
  Tensor x = Tensor::from_values({1}, {0.0}, DType::kFloat64);
  auto r = check_gradients("kink", [&] { return sum(relu(x)); }, {x});
  EXPECT_FALSE(r.passed);
}

}  // namespace
}  // namespace tamseg
