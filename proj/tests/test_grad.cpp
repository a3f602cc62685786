#include <gtest/gtest.h>

#include "grad_cases.hpp"

namespace s2kg::testing {
void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }
}  // namespace s2kg::testing

using s2kg::testing::GradCase;

class Grad : public ::testing::TestWithParam<GradCase> {};

TEST_P(Grad, MatchesCentralDifferences) {
  for (const auto& r : GetParam().run()) {
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(Blocks, Grad, ::testing::ValuesIn(s2kg::testing::gradient_cases()),
                         [](const ::testing::TestParamInfo<GradCase>& info) { return info.param.name; });
