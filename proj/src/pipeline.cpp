#include "flowstab/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

namespace fs = std::filesystem;

namespace flowstab {

namespace {

constexpr double kPlaneDepth = 2.0;  // meters, first-frame plane offset
constexpr double kDepthMin = 0.05;
constexpr double kDepthMax = 13.0;   // stays encodable at the default scale

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string frame_path(const std::string& dir, const char* prefix, int index,
                       const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%06d.", index);
  return dir + "/" + prefix + buf + ext;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& token, const std::string& context) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    throw std::runtime_error(context + ": bad number '" + token + "'");
  }
  if (used != token.size()) {
    throw std::runtime_error(context + ": bad number '" + token + "'");
  }
  return v;
}

int parse_int(const std::string& token, const std::string& context) {
  const double v = parse_double(token, context);
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v) {
    throw std::runtime_error(context + ": expected an integer, got '" + token +
                             "'");
  }
  return i;
}

// Plane-anchored procedural texture; smooth but feature-rich so warps can be
// compared by PSNR.
double plane_texture(double a, double b) {
  const double v = 0.55 + 0.18 * std::sin(2.0 * M_PI * a / 0.41) +
                   0.14 * std::sin(2.0 * M_PI * b / 0.33) +
                   0.09 * std::sin(2.0 * M_PI * (a + b) / 0.19) +
                   0.04 * std::sin(2.0 * M_PI * (a - 2.0 * b) / 0.11);
  return std::clamp(v, 0.0, 1.0);
}

Intrinsics dataset_intrinsics(const PipelineConfig& cfg,
                              const std::string& data_dir) {
  const std::string path = data_dir + "/intrinsics.txt";
  if (fs::exists(path)) return load_intrinsics(path);
  validate_intrinsics(cfg.K);
  return cfg.K;
}

void write_intrinsics(const std::string& path, const Intrinsics& K) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "fx " << fmt_double(K.fx) << "\n"
      << "fy " << fmt_double(K.fy) << "\n"
      << "cx " << fmt_double(K.cx) << "\n"
      << "cy " << fmt_double(K.cy) << "\n"
      << "width " << K.width << "\n"
      << "height " << K.height << "\n"
      << "depth_scale " << fmt_double(K.depth_scale) << "\n";
}

int count_frames(const std::string& dir, const char* prefix, const char* ext) {
  int n = 0;
  while (fs::exists(frame_path(dir, prefix, n, ext))) ++n;
  return n;
}

ImageF to_imagef(const ImageU8& img) {
  ImageF out = ImageF::zero(img.width, img.height);
  for (int i = 0; i < img.width * img.height; ++i) {
    out.pixels[i] = static_cast<float>(img.pixels[i] / 255.0);
  }
  return out;
}

ImageU8 to_u8(const ImageF& img) {
  ImageU8 out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.resize(img.size());
  for (int i = 0; i < img.size(); ++i) {
    const double v = std::clamp(static_cast<double>(img.pixels[i]), 0.0, 1.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

// Twist coordinates of a stored group element in the decoupled chart.
Twist twist_from_transform(const AffineTransform& g) {
  const int n = group_dim(g.tag);
  TwistVec coords(n);
  coords.head<3>() = g.translation();
  coords.tail(n - 3) = sigma_inverse(g.linear(), g.tag);
  return Twist(g.tag, coords);
}

}  // namespace

GroupTag parse_group_tag(const std::string& name) {
  if (name == "se3") return GroupTag::SE3;
  if (name == "sim3") return GroupTag::SIM3;
  if (name == "sa3") return GroupTag::SA3;
  if (name == "ga3") return GroupTag::GA3;
  throw std::invalid_argument("unknown group '" + name +
                              "' (expected se3|sim3|sa3|ga3)");
}

std::string group_tag_name(GroupTag tag) {
  switch (tag) {
    case GroupTag::SE3: return "se3";
    case GroupTag::SIM3: return "sim3";
    case GroupTag::SA3: return "sa3";
    case GroupTag::GA3: return "ga3";
  }
  throw std::invalid_argument("unknown group tag");
}

void validate_config(const PipelineConfig& cfg) {
  if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) {
    throw std::invalid_argument("alpha must be positive");
  }
  if (cfg.stride < 1) throw std::invalid_argument("stride must be >= 1");
  if (cfg.keyframe_interval < 1) {
    throw std::invalid_argument("keyframe_interval must be >= 1");
  }
  if (!(cfg.keyframe_angle > 0.0)) {
    throw std::invalid_argument("keyframe_angle must be positive");
  }
  if (cfg.keyframe_v_floor < 0.0) {
    throw std::invalid_argument("keyframe_v_floor must be nonnegative");
  }
  if (!(cfg.shoot.tolerance > 0.0) || cfg.shoot.max_iterations < 1 ||
      !(cfg.shoot.fd_epsilon > 0.0) || !(cfg.shoot.lambda0 > 0.0) ||
      cfg.shoot.waypoints < 1 || cfg.shoot.substeps < 1) {
    throw std::invalid_argument("invalid shooting options");
  }
  validate_policy(cfg.policy);
  if (cfg.out_dir.empty()) throw std::invalid_argument("out directory is empty");
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  PipelineConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    for (char& c : line) {
      if (c == '=') c = ' ';
    }
    std::istringstream ss(line);
    std::string key, value, extra;
    if (!(ss >> key)) continue;
    if (!(ss >> value) || (ss >> extra)) {
      throw std::runtime_error("config " + path + " line " +
                               std::to_string(line_no) +
                               ": expected 'key value'");
    }
    const std::string ctx = "config " + path + " line " + std::to_string(line_no);
    if (key == "group") cfg.group = parse_group_tag(value);
    else if (key == "fx") cfg.K.fx = parse_double(value, ctx);
    else if (key == "fy") cfg.K.fy = parse_double(value, ctx);
    else if (key == "cx") cfg.K.cx = parse_double(value, ctx);
    else if (key == "cy") cfg.K.cy = parse_double(value, ctx);
    else if (key == "width") cfg.K.width = parse_int(value, ctx);
    else if (key == "height") cfg.K.height = parse_int(value, ctx);
    else if (key == "depth_scale") cfg.K.depth_scale = parse_double(value, ctx);
    else if (key == "z_min") cfg.policy.z_min = parse_double(value, ctx);
    else if (key == "z_max") cfg.policy.z_max = parse_double(value, ctx);
    else if (key == "v_abs_max") cfg.policy.v_abs_max = parse_double(value, ctx);
    else if (key == "mad_kappa") cfg.policy.mad_kappa = parse_double(value, ctx);
    else if (key == "d_min") cfg.policy.d_min = parse_int(value, ctx);
    else if (key == "recenter") {
      if (value == "1" || value == "true") cfg.recenter = true;
      else if (value == "0" || value == "false") cfg.recenter = false;
      else throw std::runtime_error(ctx + ": recenter must be 0|1|true|false");
    } else if (key == "keyframe_interval") {
      cfg.keyframe_interval = parse_int(value, ctx);
    } else if (key == "keyframe_angle") {
      cfg.keyframe_angle = parse_double(value, ctx);
    } else if (key == "keyframe_v_floor") {
      cfg.keyframe_v_floor = parse_double(value, ctx);
    } else if (key == "shoot_tolerance") {
      cfg.shoot.tolerance = parse_double(value, ctx);
    } else if (key == "shoot_max_iterations") {
      cfg.shoot.max_iterations = parse_int(value, ctx);
    } else if (key == "shoot_fd_epsilon") {
      cfg.shoot.fd_epsilon = parse_double(value, ctx);
    } else if (key == "shoot_lambda0") {
      cfg.shoot.lambda0 = parse_double(value, ctx);
    } else if (key == "shoot_waypoints") {
      cfg.shoot.waypoints = parse_int(value, ctx);
    } else if (key == "shoot_substeps") {
      cfg.shoot.substeps = parse_int(value, ctx);
    } else if (key == "alpha") {
      cfg.alpha = parse_double(value, ctx);
    } else if (key == "stride") {
      cfg.stride = parse_int(value, ctx);
    } else if (key == "out") {
      cfg.out_dir = value;
    } else {
      throw std::runtime_error(ctx + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

void write_transforms_csv(const std::string& path,
                          const std::vector<AffineTransform>& transforms,
                          int first_index) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# frame,m00,m01,m02,m03,m10,m11,m12,m13,m20,m21,m22,m23,m30,m31,m32,"
         "m33,group\n";
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    out << (first_index + static_cast<int>(i));
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        out << ',' << fmt_double(transforms[i].matrix(r, c));
      }
    }
    out << ',' << group_tag_name(transforms[i].tag) << "\n";
  }
}

std::vector<AffineTransform> read_transforms_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open transforms csv " + path);
  std::vector<AffineTransform> transforms;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv(line);
    const std::string ctx = path + " line " + std::to_string(line_no);
    if (fields.size() != 18) {
      throw std::runtime_error(ctx + ": expected 18 fields, got " +
                               std::to_string(fields.size()));
    }
    const int index = parse_int(fields[0], ctx);
    if (index != static_cast<int>(transforms.size())) {
      throw std::runtime_error(ctx + ": expected frame " +
                               std::to_string(transforms.size()) + ", got " +
                               std::to_string(index));
    }
    AffineTransform g;
    g.tag = parse_group_tag(fields[17]);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        g.matrix(r, c) = parse_double(fields[1 + 4 * r + c], ctx);
      }
    }
    if (!g.matrix.allFinite()) {
      throw std::runtime_error(ctx + ": non-finite matrix");
    }
    if ((g.matrix.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() >
        1e-9) {
      throw std::runtime_error(ctx + ": bottom row must be 0 0 0 1");
    }
    g.matrix.row(3) = Eigen::RowVector4d(0, 0, 0, 1);
    if (!transforms.empty() && transforms.front().tag != g.tag) {
      throw std::runtime_error(ctx + ": mixed group tags in one file");
    }
    transforms.push_back(g);
  }
  if (transforms.empty()) {
    throw std::runtime_error(path + ": no transform rows");
  }
  return transforms;
}

void write_twists_csv(const std::string& path, const std::vector<Twist>& twists,
                      const std::vector<std::uint8_t>& low_confidence) {
  if (!low_confidence.empty() && low_confidence.size() != twists.size()) {
    throw std::invalid_argument("twist and flag counts differ");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# frame,coords...,group,low_confidence\n";
  for (std::size_t i = 0; i < twists.size(); ++i) {
    out << i;
    for (int k = 0; k < twists[i].coords.size(); ++k) {
      out << ',' << fmt_double(twists[i].coords[k]);
    }
    out << ',' << group_tag_name(twists[i].tag) << ','
        << (low_confidence.empty() ? 0 : int(low_confidence[i])) << "\n";
  }
}

std::vector<Twist> read_twists_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open twists csv " + path);
  std::vector<Twist> twists;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv(line);
    const std::string ctx = path + " line " + std::to_string(line_no);
    if (fields.size() < 3) throw std::runtime_error(ctx + ": too few fields");
    const GroupTag tag = parse_group_tag(fields[fields.size() - 2]);
    const int n = group_dim(tag);
    if (static_cast<int>(fields.size()) != n + 3) {
      throw std::runtime_error(ctx + ": expected " + std::to_string(n + 3) +
                               " fields for " + group_tag_name(tag));
    }
    const int index = parse_int(fields[0], ctx);
    if (index != static_cast<int>(twists.size())) {
      throw std::runtime_error(ctx + ": expected frame " +
                               std::to_string(twists.size()));
    }
    TwistVec coords(n);
    for (int k = 0; k < n; ++k) coords[k] = parse_double(fields[1 + k], ctx);
    twists.emplace_back(tag, coords);
  }
  if (twists.empty()) throw std::runtime_error(path + ": no twist rows");
  return twists;
}

std::vector<Twist> make_trajectory(GroupTag tag, const TrajectorySpec& spec) {
  const int n = group_dim(tag);
  if (spec.kind == "file") {
    std::ifstream in(spec.twists_path);
    if (!in) {
      throw std::runtime_error("cannot open twists file " + spec.twists_path);
    }
    std::vector<Twist> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::istringstream ss(line);
      std::vector<double> vals;
      double v;
      while (ss >> v) vals.push_back(v);
      if (vals.empty()) continue;
      if (static_cast<int>(vals.size()) != n) {
        throw std::runtime_error(spec.twists_path + " line " +
                                 std::to_string(line_no) + ": expected " +
                                 std::to_string(n) + " coordinates");
      }
      TwistVec coords(n);
      for (int k = 0; k < n; ++k) coords[k] = vals[k];
      out.emplace_back(tag, coords);
    }
    if (out.empty()) {
      throw std::runtime_error(spec.twists_path + ": no twist rows");
    }
    return out;
  }
  if (spec.frames < 1) throw std::invalid_argument("frames must be >= 1");
  std::vector<Twist> out;
  out.reserve(spec.frames);
  if (spec.kind == "static") {
    out.assign(spec.frames, zero_twist(tag));
    return out;
  }
  std::mt19937 rng(spec.seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> amp(0.3, 1.0);
  const bool jitter = spec.kind == "jitter";
  if (!jitter && spec.kind != "random-smooth") {
    throw std::invalid_argument("unknown trajectory kind '" + spec.kind +
                                "' (static|random-smooth|jitter|file)");
  }
  const double base_scale = jitter ? 0.008 : 0.01;
  std::vector<double> p1(n), p2(n), a1(n), a2(n);
  for (int k = 0; k < n; ++k) {
    p1[k] = phase(rng);
    p2[k] = phase(rng);
    a1[k] = amp(rng);
    a2[k] = amp(rng);
  }
  std::normal_distribution<double> noise(0.0, 0.003);
  for (int i = 0; i < spec.frames; ++i) {
    TwistVec coords(n);
    for (int k = 0; k < n; ++k) {
      coords[k] = base_scale *
                  (a1[k] * std::sin(2.0 * M_PI * i / spec.frames + p1[k]) +
                   0.5 * a2[k] * std::sin(4.0 * M_PI * i / spec.frames + p2[k]));
      if (jitter) coords[k] += noise(rng);
    }
    out.emplace_back(tag, coords);
  }
  return out;
}

void cmd_synth(const PipelineConfig& cfg, const TrajectorySpec& spec) {
  validate_config(cfg);
  validate_intrinsics(cfg.K);
  const Intrinsics& K = cfg.K;
  fs::create_directories(cfg.out_dir);

  const std::vector<Twist> twists = make_trajectory(cfg.group, spec);
  const int intervals = static_cast<int>(twists.size());
  std::vector<AffineTransform> steps;
  steps.reserve(intervals);
  for (const Twist& xi : twists) steps.push_back(group_from_twist(xi));

  write_intrinsics(cfg.out_dir + "/intrinsics.txt", K);
  write_transforms_csv(cfg.out_dir + "/truth_transforms.csv", steps);
  write_twists_csv(cfg.out_dir + "/truth_twists.csv", twists, {});

  // Scene points accumulate x_{i+1} = g_i x_i; the plane n0.x = d0 maps to
  // n_i = L^-T n0, d_i = d0 + n_i.t under the cumulative transform.
  Eigen::Matrix4d cumulative = Eigen::Matrix4d::Identity();
  for (int frame = 0; frame <= intervals; ++frame) {
    const Eigen::Matrix3d L = cumulative.topLeftCorner<3, 3>();
    const Eigen::Vector3d t = cumulative.topRightCorner<3, 1>();
    const Eigen::Vector3d n =
        L.transpose().partialPivLu().solve(Eigen::Vector3d(0, 0, 1));
    const double d = kPlaneDepth + n.dot(t);

    ImageU16 depth_png;
    depth_png.width = K.width;
    depth_png.height = K.height;
    depth_png.pixels.assign(static_cast<std::size_t>(K.width) * K.height, 0);
    DepthMap depth;
    depth.width = K.width;
    depth.height = K.height;
    depth.depth.assign(depth_png.pixels.size(), 0.0);
    depth.valid.assign(depth_png.pixels.size(), 0);
    ImageU8 intensity;
    intensity.width = K.width;
    intensity.height = K.height;
    intensity.pixels.assign(depth_png.pixels.size(), 0);

    const Eigen::Matrix4d inv_cumulative = cumulative.inverse();
    for (int j = 0; j < K.height; ++j) {
      for (int i = 0; i < K.width; ++i) {
        const Eigen::Vector3d ray((i - K.cx) / K.fx, (j - K.cy) / K.fy, 1.0);
        const double denom = n.dot(ray);
        if (denom <= 1e-9) continue;
        const double z = d / denom;
        if (z < kDepthMin || z > kDepthMax) continue;
        const long raw = std::lround(z * K.depth_scale);
        if (raw < 1 || raw > 65535) continue;
        const std::size_t idx = static_cast<std::size_t>(j) * K.width + i;
        depth_png.pixels[idx] = static_cast<std::uint16_t>(raw);
        // The stored (quantized) depth is the dataset's ground truth; flow
        // is synthesized from the same values so the two stay consistent.
        const double zq = raw / K.depth_scale;
        depth.depth[idx] = zq;
        depth.valid[idx] = 1;
        const Eigen::Vector3d x = zq * ray;
        const Eigen::Vector3d x0 =
            inv_cumulative.topLeftCorner<3, 3>() * x +
            inv_cumulative.topRightCorner<3, 1>();
        intensity.pixels[idx] = static_cast<std::uint8_t>(
            std::lround(plane_texture(x0.x(), x0.y()) * 255.0));
      }
    }
    write_png_gray16(frame_path(cfg.out_dir, "depth", frame, "png"), depth_png);
    write_png_gray8(frame_path(cfg.out_dir, "intensity", frame, "png"),
                    intensity);

    if (frame < intervals) {
      const PointGrid points = backproject(depth, K, 1);
      const PointFlowField field = synth_flow(points, steps[frame]);
      FlowGrid flow;
      flow.width = K.width;
      flow.height = K.height;
      flow.velocities.assign(field.velocities.begin(), field.velocities.end());
      flow.valid.assign(field.valid.begin(), field.valid.end());
      write_flow(frame_path(cfg.out_dir, "flow", frame, "qsf"), flow);
      cumulative = steps[frame].matrix * cumulative;
    }
  }
}

EstimateSummary cmd_estimate(const PipelineConfig& cfg,
                             const std::string& data_dir) {
  validate_config(cfg);
  const Intrinsics K = dataset_intrinsics(cfg, data_dir);
  fs::create_directories(cfg.out_dir);

  const int frames = count_frames(data_dir, "depth", "png");
  if (frames < 2) {
    throw std::runtime_error("estimation needs at least two depth frames in " +
                             data_dir);
  }
  std::vector<AffineTransform> transforms;
  std::vector<Twist> twists;
  std::vector<std::uint8_t> flags;
  EstimateSummary summary;
  summary.intervals = frames - 1;
  for (int i = 0; i + 1 < frames; ++i) {
    const std::string flow_path = frame_path(data_dir, "flow", i, "qsf");
    if (!fs::exists(flow_path)) {
      throw std::runtime_error("missing flow for frame " + std::to_string(i) +
                               ": " + flow_path);
    }
    const DepthMap depth =
        load_depth(frame_path(data_dir, "depth", i, "png"), K);
    const FlowGrid flow = read_flow(flow_path);
    const PointFlowField field = assemble_field(depth, flow, K, cfg.stride);
    const MotionEstimate est =
        motion_between_frames(cfg.group, field, cfg.policy, cfg.recenter);
    transforms.push_back(est.transform);
    twists.push_back(est.twist);
    flags.push_back(est.low_confidence ? 1 : 0);
    if (est.low_confidence) ++summary.low_confidence;
  }
  write_transforms_csv(cfg.out_dir + "/transforms.csv", transforms);
  write_twists_csv(cfg.out_dir + "/twists.csv", twists, flags);
  return summary;
}

StabilizeSummary cmd_stabilize(const PipelineConfig& cfg,
                               const std::string& transforms_csv,
                               const std::string& constraints_path) {
  validate_config(cfg);
  fs::create_directories(cfg.out_dir);

  const std::vector<AffineTransform> steps = read_transforms_csv(transforms_csv);
  const GroupTag tag = steps.front().tag;
  std::vector<Twist> twists;
  twists.reserve(steps.size());
  for (const AffineTransform& g : steps) twists.push_back(twist_from_transform(g));
  const CameraPath path = integrate_path(tag, twists);

  std::map<int, Eigen::Matrix4d> constraints;
  if (!constraints_path.empty()) {
    constraints = load_keyframe_constraints(constraints_path);
    for (const auto& [frame, matrix] : constraints) {
      if (frame > path.last()) {
        throw std::runtime_error("constraint frame " + std::to_string(frame) +
                                 " is beyond the last frame " +
                                 std::to_string(path.last()));
      }
      if (!matrix.allFinite()) {
        throw std::runtime_error("constraint at frame " +
                                 std::to_string(frame) + " is not finite");
      }
    }
  }

  std::vector<int> keys =
      select_keyframes(path, cfg.keyframe_interval, cfg.keyframe_angle,
                       cfg.keyframe_v_floor);
  for (const auto& [frame, matrix] : constraints) keys.push_back(frame);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  const auto constraint_at = [&](int frame) {
    const auto it = constraints.find(frame);
    if (it == constraints.end()) return identity_transform(tag);
    return AffineTransform{tag, it->second};
  };

  std::vector<PathSegment> segments;
  std::vector<StabilizationResult> results;
  for (std::size_t j = 0; j + 1 < keys.size(); ++j) {
    segments.push_back(make_segment(path, keys[j], keys[j + 1],
                                    constraint_at(keys[j]),
                                    constraint_at(keys[j + 1])));
    results.push_back(shoot_segment(segments.back(), cfg.shoot));
  }
  const StabilizationResult global = stabilized_path(path, segments, results);

  write_transforms_csv(cfg.out_dir + "/stabilized.csv", global.stabilized_poses);
  write_transforms_csv(cfg.out_dir + "/render.csv", global.render_transforms);

  nlohmann::json diag;
  diag["group"] = group_tag_name(tag);
  diag["frames"] = path.frames();
  diag["keyframes"] = keys;
  diag["segments"] = nlohmann::json::array();
  for (std::size_t j = 0; j < segments.size(); ++j) {
    diag["segments"].push_back({{"start", segments[j].t0},
                                {"end", segments[j].tf},
                                {"cost", results[j].cost},
                                {"iterations", results[j].iterations},
                                {"residual", results[j].residual},
                                {"converged", results[j].converged}});
  }
  diag["total_cost"] = global.cost;
  diag["max_residual"] = global.residual;
  diag["converged"] = global.converged;
  std::ofstream out(cfg.out_dir + "/diagnostics.json");
  if (!out) throw std::runtime_error("cannot write diagnostics.json");
  out << diag.dump(2) << "\n";

  StabilizeSummary summary;
  summary.keyframes = keys;
  summary.converged = global.converged;
  summary.total_cost = global.cost;
  return summary;
}

void cmd_warp(const PipelineConfig& cfg, const std::string& data_dir,
              const std::string& render_csv) {
  validate_config(cfg);
  const Intrinsics K = dataset_intrinsics(cfg, data_dir);
  fs::create_directories(cfg.out_dir);

  const std::vector<AffineTransform> renders = read_transforms_csv(render_csv);
  const int frames = static_cast<int>(renders.size());
  for (int i = 0; i < frames; ++i) {
    if (!fs::exists(frame_path(data_dir, "intensity", i, "png"))) {
      throw std::runtime_error("missing intensity frame " + std::to_string(i) +
                               ": " + frame_path(data_dir, "intensity", i, "png"));
    }
    if (!fs::exists(frame_path(data_dir, "depth", i, "png"))) {
      throw std::runtime_error("missing depth frame " + std::to_string(i) + ": " +
                               frame_path(data_dir, "depth", i, "png"));
    }
  }
  const int have = count_frames(data_dir, "intensity", "png");
  if (have != frames) {
    throw std::runtime_error("render transform count " + std::to_string(frames) +
                             " does not match intensity frame count " +
                             std::to_string(have));
  }

  for (int i = 0; i < frames; ++i) {
    const ImageF img =
        to_imagef(read_png_gray8(frame_path(data_dir, "intensity", i, "png")));
    if (img.width != K.width || img.height != K.height) {
      throw std::runtime_error("intensity frame " + std::to_string(i) +
                               " does not match the intrinsics raster size");
    }
    const DepthMap depth =
        load_depth(frame_path(data_dir, "depth", i, "png"), K);
    const PointGrid points = backproject(depth, K, cfg.stride);
    const auto pairs = reproject_control_points(points, renders[i], K, 2000);
    const WarpGrid grid = cpw_solve(K.width, K.height, pairs, cfg.alpha);
    const WarpResult res = warp_frame(img, grid);
    write_png_gray8(frame_path(cfg.out_dir, "warped", i, "png"), to_u8(res.image));
    ImageU8 mask;
    mask.width = img.width;
    mask.height = img.height;
    mask.pixels.resize(res.mask.size());
    for (std::size_t k = 0; k < res.mask.size(); ++k) {
      mask.pixels[k] = res.mask[k] ? 255 : 0;
    }
    write_png_gray8(frame_path(cfg.out_dir, "mask", i, "png"), mask);
  }
}

MetricsReport cmd_metrics(const PipelineConfig& cfg,
                          const std::string& stabilized_csv,
                          const std::string& render_csv,
                          const std::string& data_dir) {
  validate_config(cfg);
  const Intrinsics K = dataset_intrinsics(cfg, data_dir);
  fs::create_directories(cfg.out_dir);

  const std::vector<AffineTransform> poses = read_transforms_csv(stabilized_csv);
  const std::vector<AffineTransform> renders = read_transforms_csv(render_csv);
  if (poses.size() != renders.size()) {
    throw std::runtime_error("stabilized and render row counts differ");
  }
  std::vector<double> depths;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    const std::string path =
        frame_path(data_dir, "depth", static_cast<int>(i), "png");
    if (!fs::exists(path)) {
      throw std::runtime_error("missing depth frame " + std::to_string(i) +
                               ": " + path);
    }
    depths.push_back(median_depth(backproject(load_depth(path, K), K, cfg.stride)));
  }

  const MetricsReport report = compute_metrics(poses, renders, depths, K);

  nlohmann::json j;
  j["cropping"] = report.cropping;
  j["distortion"] = report.distortion;
  j["stability"] = report.stability;
  j["failed"] = report.failed;
  j["per_frame"]["median_depth"] = depths;
  j["per_frame"]["cropping"] = nlohmann::json::array();
  j["per_frame"]["distortion"] = nlohmann::json::array();
  for (std::size_t i = 0; i < renders.size(); ++i) {
    const std::vector<AffineTransform> one{renders[i]};
    const std::vector<double> one_depth{depths[i]};
    j["per_frame"]["cropping"].push_back(metric_cropping(one, one_depth, K));
    j["per_frame"]["distortion"].push_back(metric_distortion(one, one_depth, K));
  }
  std::ofstream out(cfg.out_dir + "/metrics.json");
  if (!out) throw std::runtime_error("cannot write metrics.json");
  out << j.dump(2) << "\n";
  return report;
}

}  // namespace flowstab
