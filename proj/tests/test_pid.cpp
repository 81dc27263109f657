// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "dnr/pid.hpp"
#include "dnr/rng.hpp"

using namespace dnr;

namespace {

// Y = f(A, B) with A, B uniform independent bits.
JointDist gate(int (*f)(int, int), std::size_t ny = 2) {
  std::vector<double> p(ny * 4, 0.0);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) p[(static_cast<std::size_t>(f(a, b)) * 2 + a) * 2 + b] += 0.25;
  return JointDist(ny, 2, 2, p);
}

JointDist xor_gate() { return gate([](int a, int b) { return a ^ b; }); }
JointDist and_gate() { return gate([](int a, int b) { return a & b; }); }

JointDist copy_copy() {
  std::vector<double> p(8, 0.0);
  p[0] = p[7] = 0.5;  // y = a = b
  return JointDist(2, 2, 2, p);
}

JointDist random_joint(RngStream& rng, std::size_t ny, std::size_t na, std::size_t nb) {
  std::vector<double> p(ny * na * nb);
  for (double& v : p) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
  p[0] += 1e-3;
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= z;
  // renormalise once more so rounding stays inside the mass tolerance
  const double z2 = std::accumulate(p.begin(), p.end(), 0.0);
  p[0] += 1.0 - z2;
  return JointDist(ny, na, nb, p);
}

constexpr double kIAnd = 0.31127812445913294;     // H(1/4) - 1/2
constexpr double kIAndJoint = 0.8112781244591329;  // H(1/4)

}  // namespace

TEST(JointDist, RejectsInvalidTables) {
  EXPECT_THROW(JointDist(2, 2, 2, std::vector<double>(8, 0.1)), contract_violation);
  EXPECT_THROW(JointDist(2, 2, 2, std::vector<double>(7, 1.0 / 7)), contract_violation);
  std::vector<double> neg(8, 0.25);
  neg[0] = -0.5;
  neg[1] = 0.0;
  neg[2] = 0.0;
  neg[3] = 0.0;
  EXPECT_THROW(JointDist(2, 2, 2, neg), contract_violation);
  EXPECT_THROW(JointDist(65, 1, 1, std::vector<double>(65, 1.0 / 65)), contract_violation);
}

TEST(JointDist, FromSamplesCountsFrequencies) {
  const std::vector<int> y{0, 1, 1, 0}, a{0, 1, 0, 1}, b{0, 0, 1, 1};
  const JointDist j = JointDist::from_samples(y, a, b);
  EXPECT_EQ(j.ny(), 2u);
  EXPECT_DOUBLE_EQ(j(1, 0, 1), 0.25);
  EXPECT_DOUBLE_EQ(j(0, 1, 0), 0.0);
  EXPECT_EQ(format_atoms(pid_decompose(j)), "0.000000,0.000000,0.000000,1.000000");
}

TEST(MutualInfo, Examples) {
  std::vector<double> indep(8, 0.125);
  EXPECT_NEAR(mutual_info(JointDist(2, 2, 2, indep), Source::AB), 0.0, 1e-15);
  EXPECT_NEAR(mutual_info(copy_copy(), Source::A), 1.0, 1e-15);
  EXPECT_NEAR(mutual_info(and_gate(), Source::A), kIAnd, 1e-12);
  EXPECT_NEAR(mutual_info(and_gate(), Source::B), kIAnd, 1e-12);
  EXPECT_NEAR(mutual_info(and_gate(), Source::AB), kIAndJoint, 1e-12);
}

TEST(SpecificInfo, Examples) {
  EXPECT_NEAR(specific_info(xor_gate(), 0, Source::A), 0.0, 1e-15);
  EXPECT_NEAR(specific_info(copy_copy(), 0, Source::A), 1.0, 1e-15);
  EXPECT_NEAR(specific_info(and_gate(), 1, Source::A), 1.0, 1e-15);
  EXPECT_THROW(specific_info(and_gate(), 0, Source::AB), contract_violation);
}

TEST(SpecificInfo, ZeroProbabilityOutcomeRejected) {
  const JointDist j = gate([](int a, int b) { return a ^ b; }, 3);
  EXPECT_THROW(specific_info(j, 2, Source::A), contract_violation);
  EXPECT_NO_THROW(pid_decompose(j));
}

TEST(Pid, CanonicalGates) {
  const PIDAtoms x = pid_decompose(xor_gate());
  EXPECT_EQ(x.u1, 0.0);
  EXPECT_EQ(x.u2, 0.0);
  EXPECT_EQ(x.r, 0.0);
  EXPECT_NEAR(x.s, 1.0, 1e-15);

  const PIDAtoms c = pid_decompose(copy_copy());
  EXPECT_EQ(c.u1, 0.0);
  EXPECT_EQ(c.u2, 0.0);
  EXPECT_NEAR(c.r, 1.0, 1e-15);
  EXPECT_NEAR(c.s, 0.0, 1e-15);

  const PIDAtoms a = pid_decompose(and_gate());
  EXPECT_NEAR(a.u1, 0.0, 1e-12);
  EXPECT_NEAR(a.u2, 0.0, 1e-12);
  EXPECT_NEAR(a.r, kIAnd, 1e-12);
  EXPECT_NEAR(a.s, 0.5, 1e-12);
}

TEST(Pid, UniqueChannel) {
  // Y = A, B independent noise
  std::vector<double> p(8, 0.0);
  for (int y = 0; y < 2; ++y)
    for (int b = 0; b < 2; ++b) p[(static_cast<std::size_t>(y) * 2 + y) * 2 + b] = 0.25;
  const PIDAtoms u = pid_decompose(JointDist(2, 2, 2, p));
  EXPECT_NEAR(u.u1, 1.0, 1e-15);
  EXPECT_EQ(u.u2, 0.0);
  EXPECT_EQ(u.r, 0.0);
  EXPECT_NEAR(u.s, 0.0, 1e-15);
}

TEST(Pid, IdentityAndBoundsOnRandomJoints) {
  RngStream rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ny = 2 + rng.below(3), na = 2 + rng.below(3), nb = 2 + rng.below(3);
    const JointDist j = random_joint(rng, ny, na, nb);
    const PIDAtoms at = pid_decompose(j);
    const double iab = mutual_info(j, Source::AB), ia = mutual_info(j, Source::A), ib = mutual_info(j, Source::B);
    EXPECT_NEAR(at.u1 + at.u2 + at.r + at.s, iab, 1e-9);
    EXPECT_LE(at.r, std::min(ia, ib) + 1e-9);
    for (double v : {at.u1, at.u2, at.r, at.s}) EXPECT_GE(v, 0.0);
    EXPECT_GE(iab + 1e-12, std::max(ia, ib));
  }
}

TEST(Pid, InvariantToRelabellingA) {
  RngStream rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ny = 3, na = 4, nb = 3;
    const JointDist j = random_joint(rng, ny, na, nb);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<double> p(ny * na * nb);
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t a = 0; a < na; ++a)
        for (std::size_t b = 0; b < nb; ++b) p[(y * na + perm[a]) * nb + b] = j(y, a, b);
    const PIDAtoms x = pid_decompose(j), z = pid_decompose(JointDist(ny, na, nb, p));
    EXPECT_NEAR(x.u1, z.u1, 1e-12);
    EXPECT_NEAR(x.u2, z.u2, 1e-12);
    EXPECT_NEAR(x.r, z.r, 1e-12);
    EXPECT_NEAR(x.s, z.s, 1e-12);
  }
}

TEST(Pid, FromCsvWithHeader) {
  const auto path = std::filesystem::temp_directory_path() / "dnr_test_and.csv";
  {
    std::ofstream f(path);
    f << "y,a,b,p\n0,0,0,0.25\n0,0,1,0.25\n0,1,0,0.25\n1,1,1,0.25\n";
  }
  const PIDAtoms a = pid_decompose(JointDist::from_csv(path));
  EXPECT_NEAR(a.r, kIAnd, 1e-12);
  EXPECT_EQ(format_atoms(a), "0.000000,0.000000,0.311278,0.500000");
  {
    std::ofstream f(path);
    f << "y,a,b,p\n0,0,0,0.5\n1,x,1,0.5\n";
  }
  EXPECT_THROW(JointDist::from_csv(path), contract_violation);
  std::filesystem::remove(path);
  EXPECT_THROW(JointDist::from_csv(path), contract_violation);
}

TEST(KlSimplex, Examples) {
  const std::vector<double> p{1.0, 0.0}, q{0.0, 1.0};
  EXPECT_NEAR(kl_simplex(p, q), 0.46211715726000974, 1e-15);
  EXPECT_EQ(kl_simplex(p, p), 0.0);
  const std::vector<double> shifted{11.0, 10.0};
  EXPECT_NEAR(kl_simplex(p, shifted), 0.0, 1e-15);
}

TEST(KlSimplex, RejectsBadInput) {
  const std::vector<double> one{1.0}, two{1.0, 2.0}, three{1.0, 2.0, 3.0};
  const std::vector<double> bad{1.0, std::nan("")};
  EXPECT_THROW(kl_simplex(one, one), contract_violation);
  EXPECT_THROW(kl_simplex(two, three), contract_violation);
  EXPECT_THROW(kl_simplex(two, bad), contract_violation);
}
