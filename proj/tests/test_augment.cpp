#include <gtest/gtest.h>

#include <opencv2/imgproc.hpp>

#include "deepwound/augment.hpp"
#include "deepwound/error.hpp"
#include "support.hpp"

using namespace deepwound;
using namespace deepwound::augment;
using imaging::RawImage;
using testing_support::asymmetric_pattern;

namespace {

LabelVector some_labels() { return {true, false, true, false, false, true, false, false, true}; }

}  // namespace

TEST(Sample, ZeroRangesGiveIdentity) {
  Rng rng(1);
  const auto p = sample_params({0, 0, 0, 0, 0}, rng);
  EXPECT_TRUE(p.is_identity());
}

TEST(Sample, SeededDeterminism) {
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_params({}, a), sample_params({}, b));
}

TEST(Sample, RangesAndFlipRate) {
  Rng rng(5);
  const AugmentConfig cfg;
  int flips_h = 0, flips_v = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_params(cfg, rng);
    ASSERT_GE(p.angle, 0.0);
    ASSERT_LT(p.angle, 360.0);
    ASSERT_LE(std::abs(p.dx), 10.0);
    ASSERT_LE(std::abs(p.dy), 10.0);
    ASSERT_GE(p.zoom, 0.7);
    ASSERT_LE(p.zoom, 1.3);
    ASSERT_LE(std::abs(p.shear), 0.2);
    flips_h += p.flip_h;
    flips_v += p.flip_v;
  }
  EXPECT_NEAR(flips_h / double(n), 0.5, 0.02);
  EXPECT_NEAR(flips_v / double(n), 0.5, 0.02);
}

TEST(Sample, InvalidConfig) {
  Rng rng(0);
  AugmentConfig bad;
  bad.flip_probability = 1.5;
  EXPECT_THROW(sample_params(bad, rng), Error);
  bad = {};
  bad.shift_limit = -1;
  EXPECT_THROW(sample_params(bad, rng), Error);
}

TEST(Transform, IdentityIsExact) {
  const auto img = asymmetric_pattern(224, 224);
  const auto [out, labels] = apply_transform(img, some_labels(), TransformParams{});
  EXPECT_EQ(out, img);
  EXPECT_EQ(labels, some_labels());
}

TEST(Transform, FlipHorizontalReversesRows) {
  const auto img = asymmetric_pattern(224, 224);
  TransformParams p;
  p.flip_h = true;
  const auto out = apply_transform(img, {}, p).first;
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(x, y, c), img.at(223 - x, y, c));
}

TEST(Transform, FlipVerticalReversesColumns) {
  const auto img = asymmetric_pattern(224, 224);
  TransformParams p;
  p.flip_v = true;
  const auto out = apply_transform(img, {}, p).first;
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) ASSERT_EQ(out.at(x, y, 0), img.at(x, 223 - y, 0));
}

TEST(Transform, DoubleFlipRestores) {
  const auto img = asymmetric_pattern(224, 224);
  for (auto [h, v] : {std::pair{true, false}, {false, true}, {true, true}}) {
    TransformParams p;
    p.flip_h = h;
    p.flip_v = v;
    const auto once = apply_transform(img, {}, p).first;
    EXPECT_NE(once, img);
    EXPECT_EQ(apply_transform(once, {}, p).first, img);
  }
}

TEST(Transform, Rotate90MatchesIndexOracle) {
  const auto img = asymmetric_pattern(224, 224);
  TransformParams p;
  p.angle = 90;
  const auto out = apply_transform(img, {}, p).first;
  // Counter-clockwise on screen: the right edge moves to the top.
  int worst = 0;
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(int(out.at(x, y, c)) - int(img.at(223 - y, x, c))));
  EXPECT_LE(worst, 1);
}

TEST(Transform, GeneralWarpMatchesOpenCv) {
  const auto img = testing_support::wound_image(224, 224, 2);
  TransformParams p;
  p.angle = 33;
  p.dx = 4.5;
  p.dy = -7;
  p.zoom = 1.15;
  p.shear = 0.12;
  const auto out = apply_transform(img, {}, p).first;

  // Forward matrix of the documented composition: A = R * Shear * zoom about
  // the center, then translation.
  const double t = p.angle * CV_PI / 180, c = std::cos(t), s = std::sin(t);
  const cv::Matx22d R(c, s, -s, c), S(1, p.shear, 0, 1);
  const cv::Matx22d A = R * S * p.zoom;
  const cv::Vec2d ctr(111.5, 111.5);
  const cv::Vec2d off = ctr + cv::Vec2d(p.dx, p.dy) - A * ctr;
  const cv::Mat M = (cv::Mat_<double>(2, 3) << A(0, 0), A(0, 1), off[0], A(1, 0), A(1, 1), off[1]);

  cv::Mat src(224, 224, CV_8UC3, const_cast<std::uint8_t*>(img.pixels.data())), ref;
  cv::warpAffine(src, ref, M, src.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  int worst = 0;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) worst = std::max(worst, std::abs(int(out.pixels[i]) - int(ref.data[i])));
  EXPECT_LE(worst, 2);
}

TEST(Transform, LabelsAndShapeInvariant) {
  Rng rng(11);
  const auto img = asymmetric_pattern(64, 48);
  std::mt19937 lab(2);
  for (int i = 0; i < 100; ++i) {
    LabelVector l;
    for (auto& b : l) b = lab() & 1;
    const auto [out, labels] = apply_transform(img, l, sample_params({}, rng));
    ASSERT_EQ(labels, l);
    ASSERT_EQ(out.width, 64);
    ASSERT_EQ(out.height, 48);
    ASSERT_EQ(out.channels, 3);
  }
}

TEST(Transform, SeededPipelineIsDeterministic) {
  const auto img = testing_support::wound_image(96, 96);
  Rng a(3), b(3);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(apply_transform(img, {}, sample_params({}, a)).first,
              apply_transform(img, {}, sample_params({}, b)).first);
  }
}

TEST(Transform, ShapeMismatch) {
  EXPECT_THROW(apply_transform(RawImage(10, 10, 1), {}, {}), Error);
  EXPECT_THROW(apply_transform(RawImage(), {}, {}), Error);
}
