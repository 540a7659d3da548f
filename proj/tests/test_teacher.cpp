#include "test_util.hpp"

using namespace titok;
using titok::testing::synthetic_images;

TEST(Teacher, CodesHaveGridShapeAndRange) {
  const auto imgs = synthetic_images(16);
  const BuiltinPatchTeacher t(TeacherConfig{}, 32, 8, imgs);
  EXPECT_EQ(t.vocab_size(), 64);
  EXPECT_EQ(t.grid_side(), 4);
  for (const auto& img : imgs) {
    const auto codes = t.encode_codes(img);
    ASSERT_EQ(codes.size(), 16u);
    for (int c : codes) {
      EXPECT_GE(c, 0);
      EXPECT_LT(c, 64);
    }
  }
}

TEST(Teacher, DeterministicInSeedAndData) {
  const auto imgs = synthetic_images(16);
  const BuiltinPatchTeacher a(TeacherConfig{}, 32, 8, imgs), b(TeacherConfig{}, 32, 8, imgs);
  EXPECT_EQ(a.centroids(), b.centroids());
  EXPECT_EQ(a.mean_patches(), b.mean_patches());
  TeacherConfig other;
  other.seed = 1;
  EXPECT_NE(BuiltinPatchTeacher(other, 32, 8, imgs).projection(), a.projection());
}

TEST(Teacher, DecodeApproximatesCalibrationImages) {
  const auto imgs = synthetic_images(32);
  const BuiltinPatchTeacher t(TeacherConfig{}, 32, 8, imgs);
  std::vector<Image> rec;
  for (const auto& img : imgs) rec.push_back(t.decode_codes(t.encode_codes(img)));
  std::vector<Image> flat;
  for (const auto& img : imgs) {
    Image m(32, 32);
    double mean = 0;
    for (double p : img.pixels) mean += p / static_cast<double>(img.pixels.size());
    std::fill(m.pixels.begin(), m.pixels.end(), mean);
    flat.push_back(m);
  }
  EXPECT_LT(mean_mse(rec, imgs), mean_mse(flat, imgs));
}

TEST(Teacher, RebuildFromTablesIsIdentical) {
  const auto imgs = synthetic_images(16);
  const BuiltinPatchTeacher t(TeacherConfig{}, 32, 8, imgs);
  const BuiltinPatchTeacher r(TeacherConfig{}, 32, 8, t.projection(), t.centroids(), t.mean_patches());
  for (const auto& img : imgs) EXPECT_EQ(r.encode_codes(img), t.encode_codes(img));
  auto bad = t.centroids();
  bad.pop_back();
  EXPECT_THROW(BuiltinPatchTeacher(TeacherConfig{}, 32, 8, t.projection(), bad, t.mean_patches()), FormatError);
}

TEST(Teacher, Errors) {
  const auto imgs = synthetic_images(4);
  EXPECT_THROW(BuiltinPatchTeacher(TeacherConfig{}, 32, 8, std::vector<Image>{}), ConfigError);
  EXPECT_THROW(BuiltinPatchTeacher(TeacherConfig{}, 32, 7, imgs), ConfigError);
  const BuiltinPatchTeacher t(TeacherConfig{}, 32, 8, imgs);
  EXPECT_THROW(t.encode_codes(Image(16, 16)), ConfigError);
  EXPECT_THROW(t.decode_codes(std::vector<int>(15, 0)), DimensionError);
  EXPECT_THROW(t.decode_codes(std::vector<int>(16, 64)), DataError);
}
