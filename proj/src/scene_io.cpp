#include "flowstab/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace flowstab {
namespace {

constexpr char kFlowMagic[4] = {'Q', 'S', 'F', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void validate_intrinsics(const Intrinsics& K) {
  if (!(K.fx > 0.0) || !(K.fy > 0.0)) {
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
  if (K.width <= 0 || K.height <= 0) {
    throw std::invalid_argument("intrinsics: image dimensions must be positive");
  }
  if (!(K.depth_scale > 0.0)) {
    throw std::invalid_argument("intrinsics: depth_scale must be positive");
  }
}

Intrinsics load_intrinsics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open intrinsics config: " + path);

  std::map<std::string, double> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), '=', ' ');
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    double value = 0.0;
    std::string extra;
    if (!(ss >> value) || (ss >> extra)) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": expected 'key value'");
    }
    values[key] = value;
  }

  auto require = [&](const char* key) {
    const auto it = values.find(key);
    if (it == values.end()) {
      throw std::runtime_error(path + ": missing intrinsics key '" + key + "'");
    }
    return it->second;
  };

  Intrinsics K;
  K.fx = require("fx");
  K.fy = require("fy");
  K.cx = require("cx");
  K.cy = require("cy");
  K.width = static_cast<int>(require("width"));
  K.height = static_cast<int>(require("height"));
  if (values.count("depth_scale")) K.depth_scale = values.at("depth_scale");
  validate_intrinsics(K);
  return K;
}

DepthMap load_depth(const std::string& path, const Intrinsics& K) {
  validate_intrinsics(K);
  const ImageU16 raw = read_png_gray16(path);
  if (raw.width != K.width || raw.height != K.height) {
    throw std::runtime_error("depth raster " + path + " is " +
                             std::to_string(raw.width) + "x" + std::to_string(raw.height) +
                             " but intrinsics expect " + std::to_string(K.width) + "x" +
                             std::to_string(K.height));
  }
  DepthMap d;
  d.width = raw.width;
  d.height = raw.height;
  d.depth.resize(raw.pixels.size());
  d.valid.resize(raw.pixels.size());
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    d.depth[i] = raw.pixels[i] / K.depth_scale;
    d.valid[i] = raw.pixels[i] != 0;
  }
  return d;
}

PointGrid backproject(const DepthMap& depth, const Intrinsics& K, int stride) {
  validate_intrinsics(K);
  if (stride < 1) throw std::invalid_argument("backproject: stride must be >= 1");
  if (depth.width != K.width || depth.height != K.height) {
    throw std::invalid_argument("backproject: depth map is " +
                                std::to_string(depth.width) + "x" +
                                std::to_string(depth.height) + " but intrinsics expect " +
                                std::to_string(K.width) + "x" + std::to_string(K.height));
  }

  PointGrid grid;
  grid.stride = stride;
  grid.width = (depth.width + stride - 1) / stride;
  grid.height = (depth.height + stride - 1) / stride;
  grid.points.assign(static_cast<std::size_t>(grid.size()), Eigen::Vector3d::Zero());
  grid.valid.assign(static_cast<std::size_t>(grid.size()), 0);
  for (int r = 0; r < grid.height; ++r) {
    const int j = r * stride;
    for (int c = 0; c < grid.width; ++c) {
      const int i = c * stride;
      const std::size_t src = static_cast<std::size_t>(j) * depth.width + i;
      const std::size_t dst = static_cast<std::size_t>(r) * grid.width + c;
      const double z = depth.depth[src];
      if (!depth.valid[src] || !std::isfinite(z) || z <= 0.0) continue;
      grid.points[dst] = Eigen::Vector3d((i - K.cx) * z / K.fx, (j - K.cy) * z / K.fy, z);
      grid.valid[dst] = 1;
    }
  }
  return grid;
}

Eigen::Vector2d project(const Eigen::Vector3d& x, const Intrinsics& K) {
  return {K.fx * x.x() / x.z() + K.cx, K.fy * x.y() / x.z() + K.cy};
}

FlowGrid read_flow(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open flow file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12) throw std::runtime_error("flow file too short for header: " + path);
  if (!std::equal(kFlowMagic, kFlowMagic + 4, bytes.data())) {
    throw std::runtime_error("flow file " + path + " has unsupported magic '" +
                             bytes.substr(0, 4) + "', expected 'QSF1'");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t w = get_u32(p + 4);
  const std::uint32_t h = get_u32(p + 8);
  const std::size_t expected = 12 + 12ull * w * h;
  if (bytes.size() < expected) {
    throw std::runtime_error("flow file " + path + " payload truncated: " +
                             std::to_string(bytes.size() - 12) + " bytes, expected " +
                             std::to_string(expected - 12));
  }
  if (bytes.size() > expected) {
    throw std::runtime_error("flow file " + path + " has trailing bytes: " +
                             std::to_string(bytes.size() - expected));
  }

  FlowGrid flow;
  flow.width = static_cast<int>(w);
  flow.height = static_cast<int>(h);
  flow.velocities.resize(static_cast<std::size_t>(w) * h);
  flow.valid.resize(flow.velocities.size());
  const unsigned char* q = p + 12;
  for (std::size_t i = 0; i < flow.velocities.size(); ++i, q += 12) {
    float v[3];
    for (int k = 0; k < 3; ++k) v[k] = std::bit_cast<float>(get_u32(q + 4 * k));
    flow.velocities[i] = Eigen::Vector3d(v[0], v[1], v[2]);
    flow.valid[i] = !(std::isnan(v[0]) && std::isnan(v[1]) && std::isnan(v[2]));
  }
  return flow;
}

void write_flow(const std::string& path, const FlowGrid& flow) {
  const std::size_t n = static_cast<std::size_t>(flow.width) * flow.height;
  if (flow.width < 0 || flow.height < 0 || flow.velocities.size() != n ||
      flow.valid.size() != n) {
    throw std::invalid_argument("write_flow: inconsistent flow grid");
  }

  std::string bytes;
  bytes.reserve(12 + 12 * n);
  bytes.append(kFlowMagic, 4);
  put_u32(bytes, static_cast<std::uint32_t>(flow.width));
  put_u32(bytes, static_cast<std::uint32_t>(flow.height));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      const float v = flow.valid[i] ? static_cast<float>(flow.velocities[i][k]) : nan;
      put_u32(bytes, std::bit_cast<std::uint32_t>(v));
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot create flow file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to flow file: " + path);
}

PointFlowField synth_flow(const PointGrid& points, const AffineTransform& g_true) {
  // (L - I) x + t equals L x + t - x without the cancellation of the large
  // x terms, and is exact for identity and pure-translation motions.
  const Eigen::Matrix3d Lm1 = g_true.linear() - Eigen::Matrix3d::Identity();
  const Eigen::Vector3d t = g_true.translation();
  PointFlowField f = make_field(points.width, points.height);
  for (int i = 0; i < points.size(); ++i) {
    f.points[i] = points.points[i];
    f.valid[i] = points.valid[i];
    if (f.valid[i]) f.velocities[i] = Lm1 * points.points[i] + t;
  }
  return f;
}

PointFlowField synth_flow(const PointGrid& points, const Twist& xi_true) {
  const Eigen::Matrix3d V = linear_from_coords(xi_true.tag, xi_true.linear_coords());
  const Eigen::Vector3d v0 = xi_true.translation();
  PointFlowField f = make_field(points.width, points.height);
  for (int i = 0; i < points.size(); ++i) {
    f.points[i] = points.points[i];
    f.valid[i] = points.valid[i];
    if (f.valid[i]) f.velocities[i] = v0 + V * points.points[i];
  }
  return f;
}

PointFlowField assemble_field(const DepthMap& depth, const FlowGrid& flow,
                              const Intrinsics& K, int stride) {
  if (flow.width != depth.width || flow.height != depth.height) {
    throw std::invalid_argument("assemble_field: flow grid is " +
                                std::to_string(flow.width) + "x" +
                                std::to_string(flow.height) + " but depth is " +
                                std::to_string(depth.width) + "x" +
                                std::to_string(depth.height));
  }
  const PointGrid grid = backproject(depth, K, stride);
  PointFlowField f = make_field(grid.width, grid.height);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const std::size_t dst = static_cast<std::size_t>(r) * grid.width + c;
      const std::size_t src =
          static_cast<std::size_t>(r) * stride * depth.width + c * stride;
      f.points[dst] = grid.points[dst];
      f.valid[dst] = grid.valid[dst] && flow.valid[src];
      if (f.valid[dst]) f.velocities[dst] = flow.velocities[src];
    }
  }
  return f;
}

std::vector<TumFrame> load_tum_sequence(const std::string& dir,
                                        const std::string& association_file,
                                        const Intrinsics& K) {
  std::ifstream in(association_file);
  if (!in) throw std::runtime_error("cannot open association file: " + association_file);

  std::vector<TumFrame> frames;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string first;
    if (!(ss >> first)) continue;

    TumFrame frame;
    double ts_rgb = 0.0;
    std::string extra;
    try {
      std::size_t used = 0;
      ts_rgb = std::stod(first, &used);
      if (used != first.size()) throw std::invalid_argument(first);
    } catch (const std::exception&) {
      throw std::runtime_error(association_file + ": line " + std::to_string(line_no) +
                               ": bad rgb timestamp '" + first + "'");
    }
    std::string ts_depth_text;
    if (!(ss >> frame.rgb_path >> ts_depth_text >> frame.depth_path) || (ss >> extra)) {
      throw std::runtime_error(association_file + ": line " + std::to_string(line_no) +
                               ": expected 'ts_rgb rgb_path ts_depth depth_path'");
    }
    try {
      std::size_t used = 0;
      frame.timestamp = std::stod(ts_depth_text, &used);
      if (used != ts_depth_text.size()) throw std::invalid_argument(ts_depth_text);
    } catch (const std::exception&) {
      throw std::runtime_error(association_file + ": line " + std::to_string(line_no) +
                               ": bad depth timestamp '" + ts_depth_text + "'");
    }
    (void)ts_rgb;

    frame.rgb_path = (std::filesystem::path(dir) / frame.rgb_path).string();
    frame.depth_path = (std::filesystem::path(dir) / frame.depth_path).string();
    frame.depth = load_depth(frame.depth_path, K);
    frames.push_back(std::move(frame));
  }

  std::stable_sort(frames.begin(), frames.end(),
                   [](const TumFrame& a, const TumFrame& b) {
                     return a.timestamp < b.timestamp;
                   });
  return frames;
}

}  // namespace flowstab
