#include "pmp/motion_data.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace pmp;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("pmp_test_" + name)).string();
}

MotionClip ramp_clip(int T, int dims = 4, double rate = 50.0) {
  MotionClip c{"ramp", rate, {}};
  for (int k = 0; k < T; ++k) c.frames.push_back(Vec::Constant(dims, 0.001 * k));
  return c;
}

}  // namespace

TEST(Robot, DefaultModelMatchesShippedFile) {
  const auto shipped = load_robot(std::string(PMP_SOURCE_DIR) + "/models/planar_h1.json");
  nlohmann::json a = shipped, b = default_robot();
  EXPECT_EQ(a, b);
  EXPECT_EQ(shipped.n_lower, 6);
  EXPECT_EQ(shipped.n_upper, 4);
}

TEST(Robot, RejectsBadKeypoint) {
  auto r = default_robot();
  r.keypoint_joints.push_back(42);
  EXPECT_THROW(r.validate(), SchemaError);
}

TEST(Dataset, LoadsDocumentedSchema) {
  const auto robot = default_robot();
  nlohmann::json j = {{"name", "one"}, {"frame_rate_hz", 50}, {"joint_names", robot.upper_joint_names()}};
  nlohmann::json frames = nlohmann::json::array();
  for (int k = 0; k < 120; ++k) frames.push_back({0.0, 0.3, 0.01 * k, 0.4});
  j["clips"] = {{{"id", "c0"}, {"frames", frames}}};
  const auto path = temp_path("one.json");
  json_util::write_file(path, j.dump());
  const auto load = load_dataset(path, robot);
  ASSERT_EQ(load.dataset.clips.size(), 1u);
  EXPECT_EQ(load.dataset.clips[0].length(), 120);
  EXPECT_DOUBLE_EQ(load.dataset.clips[0].frame_rate_hz, 50.0);
  EXPECT_EQ(load.clamped_values, 0u);
}

TEST(Dataset, FrameWidthMismatchIsSchemaError) {
  const auto robot = default_robot();
  nlohmann::json j = {{"name", "bad"}, {"frame_rate_hz", 50}, {"joint_names", robot.upper_joint_names()}};
  j["clips"] = {{{"id", "c0"}, {"frames", {{0.0, 0.3, 0.0, 0.3}, {0.0, 0.3, 0.0}}}}};
  try {
    dataset_from_json(j, robot);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("clips[0].frames[1]"), std::string::npos) << e.what();
  }
}

TEST(Dataset, MalformedJsonReportsLine) {
  const auto path = temp_path("broken.json");
  json_util::write_file(path, "{\n  \"name\": \"x\",\n  \"clips\": [,]\n}\n");
  try {
    load_dataset(path, default_robot());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

TEST(Dataset, OutOfLimitValuesAreClampedAndReported) {
  const auto robot = default_robot();
  nlohmann::json j = {{"name", "c"}, {"frame_rate_hz", 50}, {"joint_names", robot.upper_joint_names()}};
  j["clips"] = {{{"id", "c0"}, {"frames", {{9.0, 0.3, 0.0, 0.3}}}}};
  const auto load = dataset_from_json(j, robot);
  EXPECT_EQ(load.clamped_values, 1u);
  EXPECT_DOUBLE_EQ(load.dataset.clips[0].frames[0][0], robot.joints[6].limit_hi);
}

TEST(Dataset, DuplicateClipIdRejected) {
  const auto robot = default_robot();
  nlohmann::json j = {{"name", "d"}, {"frame_rate_hz", 50}, {"joint_names", robot.upper_joint_names()}};
  j["clips"] = {{{"id", "a"}, {"frames", {{0.0, 0.3, 0.0, 0.3}}}}, {{"id", "a"}, {"frames", {{0.0, 0.3, 0.0, 0.3}}}}};
  EXPECT_THROW(dataset_from_json(j, robot), SchemaError);
}

// save -> load preserves every value bitwise, for random valid datasets.
TEST(Dataset, SaveLoadRoundTripIsBitwise) {
  const auto robot = default_robot();
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SyntheticSpec spec;
    spec.n_clips = 4;
    spec.frames_per_clip = 37;
    const auto ds = generate_synthetic_dataset(spec, seed, robot);
    const auto path = temp_path("rt.json");
    save_dataset(ds, path);
    const auto back = load_dataset(path, robot).dataset;
    ASSERT_EQ(back.clips.size(), ds.clips.size());
    for (std::size_t c = 0; c < ds.clips.size(); ++c) {
      EXPECT_EQ(back.clips[c].id, ds.clips[c].id);
      EXPECT_EQ(back.clips[c].frame_rate_hz, ds.clips[c].frame_rate_hz);
      for (std::size_t k = 0; k < ds.clips[c].frames.size(); ++k)
        for (int i = 0; i < robot.n_upper; ++i)
          ASSERT_EQ(back.clips[c].frames[k][i], ds.clips[c].frames[k][i]);
    }
  }
}

TEST(Retarget, IdentityMappingIsIdentity) {
  const auto robot = default_robot();
  MotionClip src{"s", 30.0, {(Vec(4) << 0.1, 0.5, -0.2, 1.0).finished()}};
  std::vector<RetargetEntry> map{{0, 0, 1, 0}, {1, 1, 1, 0}, {2, 2, 1, 0}, {3, 3, 1, 0}};
  const auto out = retarget_clip(src, map, robot);
  EXPECT_EQ(out.frames[0], src.frames[0]);
  EXPECT_DOUBLE_EQ(out.frame_rate_hz, 30.0);
}

TEST(Retarget, ClampsToUpperLimit) {
  const auto robot = default_robot();
  MotionClip src{"s", 50.0, {(Vec(4) << 5.0, 0.5, 0.0, 0.3).finished()}};
  std::vector<RetargetEntry> map{{0, 0, 1, 0}, {1, 1, 1, 0}, {2, 2, 1, 0}, {3, 3, 1, 0}};
  EXPECT_DOUBLE_EQ(retarget_clip(src, map, robot).frames[0][0], robot.joints[6].limit_hi);
}

TEST(Retarget, AffineMapWithPermutation) {
  const auto robot = default_robot();
  MotionClip src{"s", 50.0, {(Vec(5) << 0.4, 0.8, -0.6, 1.2, 7.0).finished()}};
  std::vector<RetargetEntry> map{{3, 0, 0.5, 0.1}, {1, 1, 0.5, 0.1}, {2, 2, 0.5, 0.1}, {0, 3, 0.5, 0.1}};
  const auto f = retarget_clip(src, map, robot).frames[0];
  EXPECT_DOUBLE_EQ(f[0], 0.5 * 1.2 + 0.1);
  EXPECT_DOUBLE_EQ(f[1], 0.5 * 0.8 + 0.1);
  EXPECT_DOUBLE_EQ(f[2], 0.5 * -0.6 + 0.1);
  EXPECT_DOUBLE_EQ(f[3], 0.5 * 0.4 + 0.1);
}

TEST(Retarget, MappingErrors) {
  const auto robot = default_robot();
  MotionClip src{"s", 50.0, {Vec::Zero(4)}};
  std::vector<RetargetEntry> dup{{0, 0, 1, 0}, {1, 0, 1, 0}, {2, 2, 1, 0}, {3, 3, 1, 0}};
  EXPECT_THROW(retarget_clip(src, dup, robot), MappingError);
  std::vector<RetargetEntry> bad_src{{0, 0, 1, 0}, {1, 1, 1, 0}, {2, 2, 1, 0}, {9, 3, 1, 0}};
  EXPECT_THROW(retarget_clip(src, bad_src, robot), MappingError);
  std::vector<RetargetEntry> missing{{0, 0, 1, 0}, {1, 1, 1, 0}, {2, 2, 1, 0}};
  EXPECT_THROW(retarget_clip(src, missing, robot), MappingError);
}

TEST(Windows, SpecExamples) {
  EXPECT_EQ(window_pairs(ramp_clip(100), 50, 1).size(), 1u);
  EXPECT_TRUE(window_pairs(ramp_clip(99), 50, 1).empty());
  const auto p = window_pairs(ramp_clip(120), 50, 10);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[0].t_index - 50, 0);
  EXPECT_EQ(p[1].t_index - 50, 10);
  EXPECT_EQ(p[2].t_index - 50, 20);
}

TEST(Windows, PairsAreConsecutive) {
  const auto clip = ramp_clip(40);
  for (const auto& p : window_pairs(clip, 7, 3)) {
    ASSERT_EQ(p.m0.size(), 7u);
    ASSERT_EQ(p.m1.size(), 7u);
    EXPECT_EQ(p.m0.back(), clip.frames[p.t_index - 1]);
    EXPECT_EQ(p.m1.front(), clip.frames[p.t_index]);
    EXPECT_EQ(p.source_clip, "ramp");
  }
}

TEST(Windows, CountFormulaExhaustive) {
  for (int T = 1; T <= 200; ++T) {
    const auto clip = ramp_clip(T, 1);
    for (int W = 1; W <= 60; ++W)
      for (int stride = 1; stride <= 20; ++stride) {
        // Enumerate every admissible split point independently of window_pairs.
        std::size_t expected = 0;
        for (int t = W; t <= T - W; t += stride) ++expected;
        const std::size_t formula = T >= 2 * W ? static_cast<std::size_t>((T - 2 * W) / stride + 1) : 0;
        ASSERT_EQ(expected, formula);
        ASSERT_EQ(window_pairs(clip, W, stride).size(), expected) << T << " " << W << " " << stride;
      }
  }
}

TEST(Windows, BadArguments) {
  EXPECT_THROW(window_pairs(ramp_clip(10), 0, 1), ArgumentError);
  EXPECT_THROW(window_pairs(ramp_clip(10), 2, 0), ArgumentError);
}

TEST(Resample, RateHeaderOnly) {
  const auto clip = ramp_clip(10);
  const auto same = resample_clip(clip, 1.0);
  EXPECT_DOUBLE_EQ(same.frame_rate_hz, 50.0);
  EXPECT_EQ(same.frames, clip.frames);
  EXPECT_DOUBLE_EQ(resample_clip(clip, 2.0).frame_rate_hz, 100.0);
  EXPECT_DOUBLE_EQ(resample_clip(clip, 0.5).frame_rate_hz, 25.0);
  EXPECT_EQ(resample_clip(clip, 2.0).frames, clip.frames);
  EXPECT_THROW(resample_clip(clip, 0.0), ArgumentError);
  EXPECT_THROW(resample_clip(clip, -1.0), ArgumentError);
}

TEST(UpperTarget, InterpolationAndClamp) {
  MotionClip c{"c", 50.0, {Vec::Constant(2, 0.0), Vec::Constant(2, 0.2), Vec::Constant(2, 0.4)}};
  EXPECT_EQ(upper_target_at(c, 0.02, 1.0), c.frames[1]);
  EXPECT_NEAR(upper_target_at(c, 0.03, 1.0)[0], 0.3, 1e-12);
  EXPECT_EQ(upper_target_at(c, 10.0, 1.0), c.frames[2]);
  // Double speed reaches frame 2 at half the time.
  EXPECT_EQ(upper_target_at(c, 0.02, 2.0), c.frames[2]);
}

TEST(UpperTarget, LipschitzContinuity) {
  const auto robot = default_robot();
  const auto ds = generate_synthetic_dataset(SyntheticSpec{}, 3, robot);
  for (const auto& clip : ds.clips) {
    double max_delta = 0.0;
    for (int k = 1; k < clip.length(); ++k)
      max_delta = std::max(max_delta, (clip.frames[k] - clip.frames[k - 1]).cwiseAbs().maxCoeff());
    const double period = 1.0 / clip.frame_rate_hz;
    for (double t = 0.0; t < clip.duration(); t += 0.0137) {
      const double eps = 0.37 * period;
      const double d = (upper_target_at(clip, t + eps) - upper_target_at(clip, t)).cwiseAbs().maxCoeff();
      ASSERT_LE(d, max_delta * eps * clip.frame_rate_hz + 1e-12);
    }
  }
}

TEST(Synthetic, DeterministicAndShaped) {
  const auto robot = default_robot();
  SyntheticSpec spec;
  const auto a = generate_synthetic_dataset(spec, 11, robot);
  const auto b = generate_synthetic_dataset(spec, 11, robot);
  ASSERT_EQ(a.clips.size(), 25u);
  for (std::size_t c = 0; c < a.clips.size(); ++c) {
    EXPECT_EQ(a.clips[c].length(), 300);
    EXPECT_EQ(a.clips[c].frames, b.clips[c].frames);
  }
  const auto other = generate_synthetic_dataset(spec, 12, robot);
  EXPECT_NE(a.clips[0].frames, other.clips[0].frames);
}

TEST(Synthetic, FamiliesPresent) {
  const auto ds = generate_synthetic_dataset(SyntheticSpec{}, 0, default_robot());
  int wave = 0, reach = 0, carry = 0;
  for (const auto& c : ds.clips) {
    wave += c.id.rfind("wave", 0) == 0;
    reach += c.id.rfind("reach", 0) == 0;
    carry += c.id.rfind("carry", 0) == 0;
  }
  EXPECT_GT(wave, 0);
  EXPECT_GT(reach, 0);
  EXPECT_GT(carry, 0);
  // Carry clips end static with one arm clearly forward.
  for (const auto& c : ds.clips)
    if (c.id.rfind("carry", 0) == 0) {
      EXPECT_EQ(c.frames[c.length() - 1], c.frames[c.length() - 2]);
      EXPECT_GT(std::max(c.frames.back()[0], c.frames.back()[2]), 0.8);
    }
}

// Property: generated frames respect joint limits for any seed and amplitude.
TEST(Synthetic, FramesWithinLimits) {
  const auto robot = default_robot();
  const Vec lo = robot.upper_lo(), hi = robot.upper_hi();
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (double scale : {0.5, 1.0, 10.0}) {
      SyntheticSpec spec;
      spec.n_clips = 6;
      spec.frames_per_clip = 120;
      spec.amplitude_scale = scale;
      for (const auto& c : generate_synthetic_dataset(spec, seed, robot).clips)
        for (const auto& f : c.frames)
          for (int i = 0; i < robot.n_upper; ++i) {
            ASSERT_GE(f[i], lo[i]);
            ASSERT_LE(f[i], hi[i]);
          }
    }
}
