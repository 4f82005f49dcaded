#include <gtest/gtest.h>

#include <cmath>

#include "gasda/geometry.hpp"
#include "gasda/gradcheck.hpp"
#include "gasda/ops.hpp"
#include "test_util.hpp"

using namespace gasda;
using geometry::CameraRig;
using gasda::testing::random_tensor;
using TW = Tensor<Wide>;

namespace {

TW ramp_x(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  std::vector<Wide> v(n * c * h * w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Wide>(i % w);
  return TW::from({n, c, h, w}, std::move(v));
}

}  // namespace

TEST(DepthToDisparity, ClosedForms) {
  const TW z = TW::full({1, 1, 2, 3}, 54.0);
  const TW d = geometry::depth_to_disparity(z, CameraRig{100.0, 0.54, 3});
  for (const double v : d.values()) EXPECT_NEAR(v, 1.0, 1e-15);
  const TW d2 = geometry::depth_to_disparity(TW::full({1, 1, 1, 1}, 5.0), CameraRig{10.0, 0.5, 1});
  EXPECT_DOUBLE_EQ(d2.item(), 1.0);
}

TEST(DepthToDisparity, MatchesScalarOracleAtEveryPixel) {
  const CameraRig rig{56.0, 0.54, 96};
  const TW z = random_tensor({2, 1, 5, 7}, 21, 1.0, 80.0);
  const TW d = geometry::depth_to_disparity(z, rig);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_NEAR(d[i], 56.0 * 0.54 / z[i], 1e-12 * d[i]);
}

TEST(DepthToDisparity, RoundTripThroughDisparity) {
  const CameraRig rig{};
  const TW z = random_tensor({1, 1, 8, 8}, 22, 1.0, 80.0);
  const TW back = geometry::disparity_to_depth(geometry::depth_to_disparity(z, rig), rig);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_LE(std::abs(back[i] - z[i]) / z[i], 1e-10);
}

TEST(DepthToDisparity, RejectsNonpositiveDepthAndBadRig) {
  EXPECT_THROW(geometry::depth_to_disparity(TW::from({1, 1, 1, 2}, {1.0, 0.0}), CameraRig{}), NumericError);
  EXPECT_THROW(geometry::depth_to_disparity(TW::full({1, 1, 1, 1}, 2.0), CameraRig{0.0, 0.5, 4}), ConfigError);
  EXPECT_THROW(geometry::depth_to_disparity(TW::full({1, 2, 1, 1}, 2.0), CameraRig{}), ShapeError);
}

TEST(InverseWarp, ZeroDisparityIsIdentity) {
  const TW right = random_tensor({2, 3, 5, 9}, 23, 0, 1);
  const TW out = geometry::inverse_warp(right, TW::zeros({2, 1, 5, 9}));
  for (std::size_t i = 0; i < right.numel(); ++i) EXPECT_EQ(out[i], right[i]);
}

TEST(InverseWarp, RampWithIntegerAndHalfDisparity) {
  const std::size_t w = 8;
  const TW img = ramp_x(1, 1, 3, w);
  for (const double disp : {1.0, 0.5}) {
    const TW out = geometry::inverse_warp(img, TW::full({1, 1, 3, w}, disp));
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 1; x < w; ++x) EXPECT_NEAR(out.at(0, 0, y, x), static_cast<double>(x) - disp, 1e-12);
  }
}

TEST(InverseWarp, BorderClampsOutOfRangeSamples) {
  const TW img = ramp_x(1, 1, 1, 5);
  const TW out = geometry::inverse_warp(img, TW::full({1, 1, 1, 5}, 3.0));
  EXPECT_EQ(out.at(0, 0, 0, 0), 0.0);
  EXPECT_EQ(out.at(0, 0, 0, 1), 0.0);
  EXPECT_EQ(out.at(0, 0, 0, 4), 1.0);
}

TEST(InverseWarp, ShapeMismatch) {
  EXPECT_THROW(geometry::inverse_warp(TW::zeros({1, 3, 4, 4}), TW::zeros({1, 1, 4, 5})), ShapeError);
  EXPECT_THROW(geometry::inverse_warp(TW::zeros({1, 3, 4, 4}), TW::zeros({1, 2, 4, 4})), ShapeError);
}

TEST(InverseWarp, DisparityGradientAtNonIntegerCoordinates) {
  const TW right = random_tensor({1, 2, 3, 8}, 24, 0, 1);
  std::vector<Wide> d(24);
  Rng rng(25);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.5 * static_cast<double>(i % 8) + rng.uniform(0.1, 0.4);
  const TW disp = TW::from({1, 1, 3, 8}, d);
  const TW weights = random_tensor({1, 2, 3, 8}, 26);
  const auto r = grad_check([&](const TW& x) { return ops::mean(ops::mul(geometry::inverse_warp(right, x), weights)); }, disp);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_GT(r.checked, 20u);
}

TEST(Ssim, IdenticalInputsGiveOne) {
  const TW x = random_tensor({2, 3, 6, 7}, 27, 0, 1);
  for (const double v : geometry::ssim(x, x).values()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Ssim, ConstantPatchesClosedForm) {
  const double p = 0.3, q = 0.7, c1 = 1e-4;
  const TW m = geometry::ssim(TW::full({1, 1, 4, 5}, p), TW::full({1, 1, 4, 5}, q));
  const double want = (2 * p * q + c1) / (p * p + q * q + c1);
  for (const double v : m.values()) EXPECT_NEAR(v, want, 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TW a = random_tensor({1, 3, 5, 6}, 100 + seed, 0, 1), b = random_tensor({1, 3, 5, 6}, 200 + seed, 0, 1);
    const TW ab = geometry::ssim(a, b), ba = geometry::ssim(b, a);
    for (std::size_t i = 0; i < ab.numel(); ++i) {
      EXPECT_DOUBLE_EQ(ab[i], ba[i]);
      EXPECT_GE(ab[i], -1.0);
      EXPECT_LE(ab[i], 1.0);
    }
  }
}

TEST(Ssim, RejectsOutOfRangeAndMismatchedInputs) {
  const TW ok = TW::full({1, 1, 3, 3}, 0.5);
  EXPECT_THROW(geometry::ssim(ok, TW::full({1, 1, 3, 3}, 1.5)), NumericError);
  EXPECT_THROW(geometry::ssim(TW::full({1, 1, 3, 3}, -0.1), ok), NumericError);
  EXPECT_THROW(geometry::ssim(ok, TW::full({1, 1, 3, 4}, 0.5)), ShapeError);
}

TEST(SpatialGradients, ConstantImageIsFlat) {
  const auto [dx, dy] = geometry::spatial_gradients(TW::full({1, 3, 4, 5}, 0.4));
  for (const double v : dx.values()) EXPECT_EQ(v, 0.0);
  for (const double v : dy.values()) EXPECT_EQ(v, 0.0);
}

TEST(SpatialGradients, RampAlongX) {
  const auto [dx, dy] = geometry::spatial_gradients(ramp_x(1, 1, 4, 5));
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(dx.at(0, 0, y, x), 1.0);
    EXPECT_EQ(dx.at(0, 0, y, 4), 0.0);
  }
  for (const double v : dy.values()) EXPECT_EQ(v, 0.0);
}

TEST(SpatialGradients, HandComputedThreeByThree) {
  const TW img = TW::from({1, 1, 3, 3}, {1, 4, 2, 0, 5, 9, 3, 3, 7});
  const auto [dx, dy] = geometry::spatial_gradients(img);
  gasda::testing::expect_all_near(dx, {3, -2, 0, 5, 4, 0, 0, 4, 0}, 0.0);
  gasda::testing::expect_all_near(dy, {-1, 1, 7, 3, -2, -2, 0, 0, 0}, 0.0);
}

TEST(SpatialGradients, DegenerateDims) {
  EXPECT_THROW(geometry::spatial_gradients(TW::zeros({1, 1, 1, 4})), ShapeError);
  EXPECT_THROW(geometry::spatial_gradients(TW::zeros({1, 1, 4, 1})), ShapeError);
}

TEST(CameraRig, ScaledKeepsBaseline) {
  const CameraRig r = CameraRig{}.scaled(0.5);
  EXPECT_DOUBLE_EQ(r.focal_px, 28.0);
  EXPECT_DOUBLE_EQ(r.baseline_m, 0.54);
  EXPECT_EQ(r.width_px, 48u);
}
