#pragma once

#include "pmp/common.hpp"
#include "pmp/json_util.hpp"
#include "pmp/robot.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace pmp {

// Upper-body joint targets for one frame (radians, length n_upper).
using MotionFrame = Vec;

struct MotionClip {
  std::string id;
  double frame_rate_hz = 50.0;
  std::vector<MotionFrame> frames;

  int length() const { return static_cast<int>(frames.size()); }
  int dims() const { return frames.empty() ? 0 : static_cast<int>(frames.front().size()); }
  double duration() const { return frames.empty() ? 0.0 : (length() - 1) / frame_rate_hz; }
};

struct MotionDataset {
  std::string name;
  std::vector<std::string> joint_names;
  std::vector<MotionClip> clips;

  const MotionClip& clip(const std::string& id) const {
    for (const auto& c : clips)
      if (c.id == id) return c;
    throw ArgumentError("no clip with id '" + id + "'");
  }
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& c : clips) out.push_back(c.id);
    return out;
  }
};

// Consecutive past/future windows: m0 = frames[t-W, t), m1 = frames[t, t+W).
struct MotionWindowPair {
  std::vector<MotionFrame> m0;
  std::vector<MotionFrame> m1;
  std::string source_clip;
  int t_index = 0;
};

inline Vec flatten(const std::vector<MotionFrame>& frames) {
  if (frames.empty()) return Vec();
  const Eigen::Index d = frames.front().size();
  Vec out(d * static_cast<Eigen::Index>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) out.segment(static_cast<Eigen::Index>(i) * d, d) = frames[i];
  return out;
}

inline void validate_dataset(const MotionDataset& ds) {
  std::set<std::string> seen;
  const auto n = static_cast<Eigen::Index>(ds.joint_names.size());
  for (const auto& c : ds.clips) {
    if (!seen.insert(c.id).second) throw SchemaError("dataset: duplicate clip id '" + c.id + "'");
    if (c.frames.empty()) throw SchemaError("dataset: clip '" + c.id + "' has no frames");
    if (!(c.frame_rate_hz > 0.0)) throw SchemaError("dataset: clip '" + c.id + "' needs a positive frame rate");
    for (std::size_t k = 0; k < c.frames.size(); ++k)
      if (c.frames[k].size() != n)
        throw SchemaError("dataset: clip '" + c.id + "' frame " + std::to_string(k) + " has " +
                          std::to_string(c.frames[k].size()) + " values, expected " + std::to_string(n));
  }
}

struct DatasetLoad {
  MotionDataset dataset;
  std::size_t clamped_values = 0;  // values pulled back inside joint limits
};

inline DatasetLoad dataset_from_json(const nlohmann::json& j, const RobotModel& robot) {
  using namespace json_util;
  DatasetLoad out;
  auto& ds = out.dataset;
  ds.name = get<std::string>(j, "name", "dataset");
  const double rate = get<double>(j, "frame_rate_hz", "dataset");
  ds.joint_names = get<std::vector<std::string>>(j, "joint_names", "dataset");
  if (static_cast<int>(ds.joint_names.size()) != robot.n_upper)
    throw SchemaError("dataset: " + std::to_string(ds.joint_names.size()) + " joint names but robot has " +
                      std::to_string(robot.n_upper) + " upper-body joints");
  const Vec lo = robot.upper_lo(), hi = robot.upper_hi();
  const auto& clips = field(j, "clips", "dataset");
  if (!clips.is_array()) throw SchemaError("dataset.clips: expected an array");
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const auto ctx = "clips[" + std::to_string(ci) + "]";
    MotionClip clip;
    clip.id = get<std::string>(clips[ci], "id", ctx);
    clip.frame_rate_hz = clips[ci].contains("frame_rate_hz") ? get<double>(clips[ci], "frame_rate_hz", ctx) : rate;
    const auto& frames = field(clips[ci], "frames", ctx);
    if (!frames.is_array()) throw SchemaError(ctx + ".frames: expected an array");
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const auto fctx = ctx + ".frames[" + std::to_string(k) + "]";
      Vec f = as_vec(frames[k], fctx);
      if (f.size() != robot.n_upper)
        throw SchemaError(fctx + ": " + std::to_string(f.size()) + " values, expected " + std::to_string(robot.n_upper));
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        const double c = std::clamp(f[i], lo[i], hi[i]);
        if (c != f[i]) ++out.clamped_values;
        f[i] = c;
      }
      clip.frames.push_back(std::move(f));
    }
    ds.clips.push_back(std::move(clip));
  }
  validate_dataset(ds);
  return out;
}

inline DatasetLoad load_dataset(const std::string& path, const RobotModel& robot) {
  return dataset_from_json(json_util::parse_file(path), robot);
}

inline nlohmann::json dataset_to_json(const MotionDataset& ds) {
  using nlohmann::json;
  const double rate = ds.clips.empty() ? 50.0 : ds.clips.front().frame_rate_hz;
  json clips = json::array();
  for (const auto& c : ds.clips) {
    json frames = json::array();
    for (const auto& f : c.frames) frames.push_back(json_util::to_array(f));
    json jc = {{"id", c.id}, {"frames", std::move(frames)}};
    if (c.frame_rate_hz != rate) jc["frame_rate_hz"] = c.frame_rate_hz;
    clips.push_back(std::move(jc));
  }
  return json{{"name", ds.name}, {"frame_rate_hz", rate}, {"joint_names", ds.joint_names}, {"clips", std::move(clips)}};
}

inline void save_dataset(const MotionDataset& ds, const std::string& path) {
  json_util::write_file(path, dataset_to_json(ds).dump() + "\n");
}

struct RetargetEntry {
  int src = 0;
  int dst = 0;
  double scale = 1.0;
  double offset = 0.0;
};

inline std::vector<RetargetEntry> load_retarget_mapping(const std::string& path) {
  const auto j = json_util::parse_file(path);
  if (!j.is_array()) throw SchemaError(path + ": mapping must be a JSON list");
  std::vector<RetargetEntry> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto ctx = "mapping[" + std::to_string(i) + "]";
    out.push_back({json_util::get<int>(j[i], "src", ctx), json_util::get<int>(j[i], "dst", ctx),
                   json_util::get<double>(j[i], "scale", ctx), json_util::get<double>(j[i], "offset", ctx)});
  }
  return out;
}

// Per-joint affine map from source skeleton channels onto the robot's upper
// body, clamped to joint limits.
inline MotionClip retarget_clip(const MotionClip& source, const std::vector<RetargetEntry>& mapping,
                                const RobotModel& robot) {
  const int n = robot.n_upper;
  const int src_dims = source.dims();
  std::vector<int> covered(n, 0);
  for (const auto& m : mapping) {
    if (m.dst < 0 || m.dst >= n) throw MappingError("mapping dst " + std::to_string(m.dst) + " out of range");
    if (m.src < 0 || m.src >= src_dims) throw MappingError("mapping src " + std::to_string(m.src) + " out of range");
    if (covered[m.dst]++) throw MappingError("mapping dst " + std::to_string(m.dst) + " appears more than once");
  }
  for (int i = 0; i < n; ++i)
    if (!covered[i]) throw MappingError("mapping leaves upper joint " + std::to_string(i) + " unassigned");

  const Vec lo = robot.upper_lo(), hi = robot.upper_hi();
  MotionClip out{source.id, source.frame_rate_hz, {}};
  out.frames.reserve(source.frames.size());
  for (const auto& f : source.frames) {
    Vec g(n);
    for (const auto& m : mapping) g[m.dst] = std::clamp(m.scale * f[m.src] + m.offset, lo[m.dst], hi[m.dst]);
    out.frames.push_back(std::move(g));
  }
  return out;
}

inline std::vector<MotionWindowPair> window_pairs(const MotionClip& clip, int W, int stride) {
  if (W < 1) throw ArgumentError("window length must be >= 1");
  if (stride < 1) throw ArgumentError("stride must be >= 1");
  std::vector<MotionWindowPair> out;
  const int T = clip.length();
  for (int t = W; t + W <= T; t += stride) {
    MotionWindowPair p;
    p.m0.assign(clip.frames.begin() + (t - W), clip.frames.begin() + t);
    p.m1.assign(clip.frames.begin() + t, clip.frames.begin() + (t + W));
    p.source_clip = clip.id;
    p.t_index = t;
    out.push_back(std::move(p));
  }
  return out;
}

// Speeds playback up or down by rewriting the rate header; frames are untouched.
inline MotionClip resample_clip(const MotionClip& clip, double speed_factor) {
  if (!(speed_factor > 0.0) || !std::isfinite(speed_factor))
    throw ArgumentError("speed factor must be positive, got " + std::to_string(speed_factor));
  MotionClip out = clip;
  out.frame_rate_hz = clip.frame_rate_hz * speed_factor;
  return out;
}

// Linear interpolation of the clip at sim_time; holds the last frame afterwards.
inline MotionFrame upper_target_at(const MotionClip& clip, double sim_time, double speed_factor = 1.0) {
  const double pos = std::max(0.0, sim_time) * speed_factor * clip.frame_rate_hz;
  const int last = clip.length() - 1;
  if (pos >= last) return clip.frames[last];
  const int k = static_cast<int>(std::floor(pos));
  const double frac = pos - k;
  if (frac == 0.0) return clip.frames[k];
  return (1.0 - frac) * clip.frames[k] + frac * clip.frames[k + 1];
}

enum class MotionFamily { wave, reach, carry };

inline const char* family_name(MotionFamily f) {
  switch (f) {
    case MotionFamily::wave: return "wave";
    case MotionFamily::reach: return "reach";
    case MotionFamily::carry: return "carry";
  }
  return "?";
}

inline MotionFamily family_from_name(const std::string& s) {
  if (s == "wave") return MotionFamily::wave;
  if (s == "reach") return MotionFamily::reach;
  if (s == "carry") return MotionFamily::carry;
  throw ArgumentError("unknown motion family '" + s + "'");
}

struct SyntheticSpec {
  int n_clips = 25;
  int frames_per_clip = 300;
  double frame_rate_hz = 50.0;
  std::vector<MotionFamily> families{MotionFamily::wave, MotionFamily::reach, MotionFamily::carry};
  double amplitude_scale = 1.0;  // multiplies sampled amplitudes; output is always clamped
  double min_frequency_hz = 0.2;
  double max_frequency_hz = 0.8;
};

namespace detail {

inline double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

inline Vec random_pose(std::mt19937_64& rng, const RobotModel& robot, double scale) {
  const Vec q0 = robot.default_upper(), lo = robot.upper_lo(), hi = robot.upper_hi();
  Vec out(robot.n_upper);
  for (int i = 0; i < robot.n_upper; ++i) {
    std::uniform_real_distribution<double> u(lo[i], hi[i]);
    // Shrink toward the default pose so typical targets stay well inside the range.
    out[i] = q0[i] + scale * 0.6 * (u(rng) - q0[i]);
  }
  return out;
}

}  // namespace detail

// Procedural stand-in for a retargeted motion corpus. Families cycle by clip
// index; every returned value lies inside the robot's joint limits.
inline MotionDataset generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed,
                                                const RobotModel& robot) {
  if (spec.n_clips < 1) throw ArgumentError("n_clips must be >= 1");
  if (spec.frames_per_clip < 1) throw ArgumentError("frames_per_clip must be >= 1");
  if (spec.families.empty()) throw ArgumentError("at least one motion family is required");
  if (!(spec.frame_rate_hz > 0.0)) throw ArgumentError("frame rate must be positive");

  std::mt19937_64 rng(seed);
  const int n = robot.n_upper;
  const Vec q0 = robot.default_upper(), lo = robot.upper_lo(), hi = robot.upper_hi();
  const double dt = 1.0 / spec.frame_rate_hz;
  const double s = spec.amplitude_scale;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  MotionDataset ds;
  ds.name = "synthetic";
  ds.joint_names = robot.upper_joint_names();
  for (int c = 0; c < spec.n_clips; ++c) {
    const MotionFamily fam = spec.families[static_cast<std::size_t>(c) % spec.families.size()];
    MotionClip clip;
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%03d", family_name(fam), c);
    clip.id = id;
    clip.frame_rate_hz = spec.frame_rate_hz;
    std::vector<Vec> frames(static_cast<std::size_t>(spec.frames_per_clip), q0);

    if (fam == MotionFamily::wave) {
      Vec amp(n), freq(n), phase(n);
      for (int i = 0; i < n; ++i) {
        amp[i] = s * (0.1 + 0.5 * unit(rng)) * 0.5 * (hi[i] - lo[i]) * 0.5;
        freq[i] = spec.min_frequency_hz + (spec.max_frequency_hz - spec.min_frequency_hz) * unit(rng);
        phase[i] = 2.0 * kPi * unit(rng);
      }
      for (int k = 0; k < spec.frames_per_clip; ++k) {
        const double t = k * dt;
        // Fade in over the first second so clips start from the rest pose.
        const double fade = detail::smoothstep(t / 1.0);
        for (int i = 0; i < n; ++i)
          frames[k][i] = q0[i] + fade * amp[i] * (std::sin(2.0 * kPi * freq[i] * t + phase[i]) - std::sin(phase[i]));
      }
    } else if (fam == MotionFamily::reach) {
      Vec from = q0;
      int k = 0;
      while (k < spec.frames_per_clip) {
        const Vec to = detail::random_pose(rng, robot, s);
        const double seg = 1.0 + 1.5 * unit(rng);
        const double ramp = 0.4 * seg;
        const int seg_frames = std::max(1, static_cast<int>(seg / dt));
        for (int m = 0; m < seg_frames && k < spec.frames_per_clip; ++m, ++k)
          frames[k] = from + detail::smoothstep(m * dt / ramp) * (to - from);
        from = to;
      }
    } else {
      const int side = unit(rng) < 0.5 ? 0 : 1;
      Vec pose = q0;
      // Arm forward with the forearm flexed, as if holding an object.
      pose[2 * side] = q0[2 * side] + s * (0.9 + 0.4 * unit(rng));
      pose[2 * side + 1] = q0[2 * side + 1] + s * (0.8 + 0.5 * unit(rng));
      const double ramp = 1.0;
      for (int k = 0; k < spec.frames_per_clip; ++k) frames[k] = q0 + detail::smoothstep(k * dt / ramp) * (pose - q0);
    }

    for (auto& f : frames)
      for (int i = 0; i < n; ++i) f[i] = std::clamp(f[i], lo[i], hi[i]);
    clip.frames = std::move(frames);
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

}  // namespace pmp
