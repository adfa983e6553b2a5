// Checks that the causal adjacency recovered from the mixing Jacobian of a
// random linear SCM x = A x + s equals A.

#include <cstdio>
#include <random>

#include "caustream/graph/jacobian.hpp"
#include "caustream/scm/oracle.hpp"

using namespace caustream;

int main() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = 2 + trial % 5;
    Matrix a = Matrix::Zero(d, d);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < i; ++j) a(i, j) = z(rng);
    const auto oracle = scm::linear_scm_oracle(a);
    const Matrix jg = graph::causal_jacobians({oracle.mixing}).front();
    worst = std::max(worst, (jg - a).cwiseAbs().maxCoeff());
  }
  std::printf("max |J_g - A| over 100 linear SCMs: %.3e\n", worst);
  return worst < 1e-8 ? 0 : 1;
}
