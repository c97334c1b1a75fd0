#include "flowstab/pipeline.hpp"

#include <doctest.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "test_util.hpp"

using namespace flowstab;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir() {
  static std::atomic<int> counter{0};
  const fs::path dir = fs::temp_directory_path() /
                       ("flowstab_pl_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

PipelineConfig small_config(const fs::path& out) {
  PipelineConfig cfg;
  cfg.K.fx = 120.0;
  cfg.K.fy = 120.0;
  cfg.K.cx = 47.5;
  cfg.K.cy = 35.5;
  cfg.K.width = 96;
  cfg.K.height = 72;
  cfg.out_dir = out.string();
  return cfg;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string frame_name(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%06d.%s", prefix, index, ext);
  return buf;
}

std::vector<AffineTransform> identity_rows(GroupTag tag, int count) {
  return std::vector<AffineTransform>(count, identity_transform(tag));
}

}  // namespace

TEST_CASE("pipeline config files") {
  const fs::path dir = make_temp_dir();
  const fs::path file = dir / "pipeline.cfg";

  SUBCASE("round trip of every key") {
    std::ofstream(file) << "# pipeline settings\n"
                        << "group sim3\n"
                        << "fx 100\nfy = 110\ncx 50\ncy 40\n"
                        << "width 120\nheight 90\ndepth_scale 1000\n"
                        << "z_min 0.2\nz_max 8\nv_abs_max 0.5\nmad_kappa 4\n"
                        << "d_min 50\nrecenter true\n"
                        << "keyframe_interval 20\nkeyframe_angle 0.8\n"
                        << "keyframe_v_floor 0.004\n"
                        << "shoot_tolerance 1e-7\nshoot_max_iterations 120\n"
                        << "shoot_fd_epsilon 1e-5\nshoot_lambda0 1e-4\n"
                        << "shoot_waypoints 6\nshoot_substeps 2\n"
                        << "alpha 0.25\nstride 2\nout /tmp/somewhere\n";
    const PipelineConfig cfg = load_pipeline_config(file.string());
    CHECK(cfg.group == GroupTag::SIM3);
    CHECK(cfg.K.fy == 110.0);
    CHECK(cfg.K.depth_scale == 1000.0);
    CHECK(cfg.policy.d_min == 50);
    CHECK(cfg.recenter);
    CHECK(cfg.keyframe_interval == 20);
    CHECK(cfg.shoot.max_iterations == 120);
    CHECK(cfg.shoot.waypoints == 6);
    CHECK(cfg.alpha == 0.25);
    CHECK(cfg.stride == 2);
    CHECK(cfg.out_dir == "/tmp/somewhere");
    validate_config(cfg);
  }

  SUBCASE("unknown keys are rejected with the line number") {
    std::ofstream(file) << "alpha 0.1\nbogus_key 3\n";
    CHECK_THROWS_WITH_AS((void)load_pipeline_config(file.string()),
                         doctest::Contains("line 2"), std::runtime_error);
  }

  SUBCASE("alpha must stay positive") {
    PipelineConfig cfg = small_config(dir);
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(validate_config(cfg), std::invalid_argument);
  }

  fs::remove_all(dir);
}

TEST_CASE("transform and twist csv round trips") {
  const fs::path dir = make_temp_dir();
  std::mt19937 rng(91);

  SUBCASE("transforms survive a write and read bit-exactly") {
    std::vector<AffineTransform> rows;
    for (int i = 0; i < 5; ++i) {
      rows.push_back(group_from_twist(
          Twist(GroupTag::SIM3,
                testutil::random_twist_coords(GroupTag::SIM3, rng, 0.3))));
    }
    const fs::path file = dir / "transforms.csv";
    write_transforms_csv(file.string(), rows);
    const auto back = read_transforms_csv(file.string());
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(back[i].tag == GroupTag::SIM3);
      CHECK((back[i].matrix - rows[i].matrix).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("non-contiguous frame indices are rejected") {
    const fs::path file = dir / "gap.csv";
    std::ofstream(file) << "0,1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1,se3\n"
                        << "2,1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1,se3\n";
    CHECK_THROWS_WITH_AS((void)read_transforms_csv(file.string()),
                         doctest::Contains("expected frame 1"),
                         std::runtime_error);
  }

  SUBCASE("mixed group tags are rejected") {
    const fs::path file = dir / "mixed.csv";
    std::ofstream(file) << "0,1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1,se3\n"
                        << "1,1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1,sim3\n";
    CHECK_THROWS_WITH_AS((void)read_transforms_csv(file.string()),
                         doctest::Contains("mixed"), std::runtime_error);
  }

  SUBCASE("twists survive a round trip with flags") {
    std::vector<Twist> twists;
    for (int i = 0; i < 4; ++i) {
      twists.emplace_back(GroupTag::GA3,
                          testutil::random_twist_coords(GroupTag::GA3, rng, 0.2));
    }
    const fs::path file = dir / "twists.csv";
    write_twists_csv(file.string(), twists, {0, 1, 0, 0});
    const auto back = read_twists_csv(file.string());
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK((back[i].coords - twists[i].coords).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  fs::remove_all(dir);
}

TEST_CASE("make_trajectory") {
  SUBCASE("static is all zeros") {
    TrajectorySpec spec;
    spec.kind = "static";
    spec.frames = 7;
    const auto twists = make_trajectory(GroupTag::SE3, spec);
    REQUIRE(twists.size() == 7);
    for (const auto& xi : twists) CHECK(xi.coords.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("same seed reproduces, different seed varies") {
    TrajectorySpec spec;
    spec.kind = "random-smooth";
    spec.frames = 20;
    spec.seed = 42;
    const auto a = make_trajectory(GroupTag::SE3, spec);
    const auto b = make_trajectory(GroupTag::SE3, spec);
    spec.seed = 43;
    const auto c = make_trajectory(GroupTag::SE3, spec);
    double same = 0.0, other = 0.0;
    for (int i = 0; i < 20; ++i) {
      same = std::max(same, (a[i].coords - b[i].coords).cwiseAbs().maxCoeff());
      other = std::max(other, (a[i].coords - c[i].coords).cwiseAbs().maxCoeff());
    }
    CHECK(same == 0.0);
    CHECK(other > 1e-6);
  }

  SUBCASE("twists file rows are parsed and validated") {
    const fs::path dir = make_temp_dir();
    const fs::path file = dir / "twists.txt";
    std::ofstream(file) << "# one row per interval\n"
                        << "0.001 0 0 0 0 0\n"
                        << "0 0.002 0 0 0 0\n";
    TrajectorySpec spec;
    spec.kind = "file";
    spec.twists_path = file.string();
    const auto twists = make_trajectory(GroupTag::SE3, spec);
    REQUIRE(twists.size() == 2);
    CHECK(twists[1].coords[1] == 0.002);

    std::ofstream(file) << "0.001 0 0\n";
    CHECK_THROWS_WITH_AS((void)make_trajectory(GroupTag::SE3, spec),
                         doctest::Contains("expected 6"), std::runtime_error);
    fs::remove_all(dir);
  }
}

TEST_CASE("cmd_synth") {
  SUBCASE("static trajectory writes zero flows") {
    const fs::path dir = make_temp_dir();
    const PipelineConfig cfg = small_config(dir);
    TrajectorySpec spec;
    spec.kind = "static";
    spec.frames = 10;
    cmd_synth(cfg, spec);
    for (int i = 0; i <= 10; ++i) {
      CHECK(fs::exists(dir / frame_name("depth", i, "png")));
      CHECK(fs::exists(dir / frame_name("intensity", i, "png")));
    }
    CHECK_FALSE(fs::exists(dir / frame_name("flow", 10, "qsf")));
    for (int i = 0; i < 10; ++i) {
      const FlowGrid flow = read_flow((dir / frame_name("flow", i, "qsf")).string());
      REQUIRE(flow.width == 96);
      int valid = 0;
      for (int k = 0; k < flow.size(); ++k) {
        if (!flow.valid[k]) continue;
        ++valid;
        CHECK(flow.velocities[k].cwiseAbs().maxCoeff() == 0.0);
      }
      CHECK(valid == flow.size());
    }
    fs::remove_all(dir);
  }

  SUBCASE("constant translation gives a constant flow field") {
    const fs::path dir = make_temp_dir();
    const fs::path twists = dir / "truth.txt";
    const Eigen::Vector3d t(0.002, -0.001, 0.003);
    std::ofstream(twists) << t.x() << ' ' << t.y() << ' ' << t.z()
                          << " 0 0 0\n"
                          << t.x() << ' ' << t.y() << ' ' << t.z() << " 0 0 0\n";
    const PipelineConfig cfg = small_config(dir);
    TrajectorySpec spec;
    spec.kind = "file";
    spec.twists_path = twists.string();
    cmd_synth(cfg, spec);
    for (int i = 0; i < 2; ++i) {
      const FlowGrid flow = read_flow((dir / frame_name("flow", i, "qsf")).string());
      for (int k = 0; k < flow.size(); ++k) {
        if (!flow.valid[k]) continue;
        // Pure translation flow is the translation itself, stored in single
        // precision.
        CHECK((flow.velocities[k] - t).cwiseAbs().maxCoeff() < 1e-9);
      }
    }
    fs::remove_all(dir);
  }

  SUBCASE("fixed seeds reproduce byte-identical datasets") {
    const fs::path dir_a = make_temp_dir();
    const fs::path dir_b = make_temp_dir();
    TrajectorySpec spec;
    spec.kind = "random-smooth";
    spec.frames = 6;
    spec.seed = 42;
    cmd_synth(small_config(dir_a), spec);
    cmd_synth(small_config(dir_b), spec);
    int files = 0;
    for (const auto& entry : fs::directory_iterator(dir_a)) {
      const fs::path other = dir_b / entry.path().filename();
      REQUIRE(fs::exists(other));
      CHECK(slurp(entry.path()) == slurp(other));
      ++files;
    }
    CHECK(files == 3 * 7 + 2);  // depth/intensity per frame, flows, csvs, intrinsics
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
  }
}

TEST_CASE("cmd_estimate") {
  SUBCASE("zero flows give identity rows") {
    const fs::path data = make_temp_dir();
    const fs::path out = make_temp_dir();
    TrajectorySpec spec;
    spec.kind = "static";
    spec.frames = 4;
    cmd_synth(small_config(data), spec);
    PipelineConfig cfg = small_config(out);
    const EstimateSummary summary = cmd_estimate(cfg, data.string());
    CHECK(summary.intervals == 4);
    CHECK(summary.low_confidence == 0);
    const auto rows = read_transforms_csv((out / "transforms.csv").string());
    REQUIRE(rows.size() == 4);
    for (const auto& g : rows) {
      CHECK((g.matrix - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() == 0.0);
    }
    fs::remove_all(data);
    fs::remove_all(out);
  }

  SUBCASE("pure translation is recovered through the files") {
    const fs::path data = make_temp_dir();
    const fs::path out = make_temp_dir();
    const Eigen::Vector3d t(0.002, -0.001, 0.003);
    const fs::path twists = data / "truth.txt";
    fs::create_directories(data);
    std::ofstream(twists) << t.x() << ' ' << t.y() << ' ' << t.z() << " 0 0 0\n";
    TrajectorySpec spec;
    spec.kind = "file";
    spec.twists_path = twists.string();
    cmd_synth(small_config(data), spec);
    const EstimateSummary summary =
        cmd_estimate(small_config(out), data.string());
    CHECK(summary.low_confidence == 0);
    const auto rows = read_transforms_csv((out / "transforms.csv").string());
    REQUIRE(rows.size() == 1);
    CHECK((rows[0].translation() - t).cwiseAbs().maxCoeff() < 1e-6);
    fs::remove_all(data);
    fs::remove_all(out);
  }

  SUBCASE("a missing flow frame is reported by index") {
    const fs::path data = make_temp_dir();
    TrajectorySpec spec;
    spec.kind = "static";
    spec.frames = 5;
    cmd_synth(small_config(data), spec);
    fs::remove(data / frame_name("flow", 2, "qsf"));
    CHECK_THROWS_WITH_AS((void)cmd_estimate(small_config(make_temp_dir()),
                                            data.string()),
                         doctest::Contains("frame 2"), std::runtime_error);
    fs::remove_all(data);
  }
}

TEST_CASE("cmd_stabilize") {
  SUBCASE("identity input path returns identity outputs with zero cost") {
    const fs::path dir = make_temp_dir();
    const fs::path csv = dir / "transforms.csv";
    write_transforms_csv(csv.string(), identity_rows(GroupTag::SE3, 20));
    PipelineConfig cfg = small_config(dir);
    const StabilizeSummary summary = cmd_stabilize(cfg, csv.string());
    CHECK(summary.converged);
    CHECK(summary.total_cost == 0.0);
    const auto stab = read_transforms_csv((dir / "stabilized.csv").string());
    const auto render = read_transforms_csv((dir / "render.csv").string());
    REQUIRE(stab.size() == 21);
    REQUIRE(render.size() == 21);
    for (int i = 0; i <= 20; ++i) {
      CHECK((stab[i].matrix - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <
            1e-12);
      CHECK((render[i].matrix - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() <
            1e-12);
    }
    const nlohmann::json diag =
        nlohmann::json::parse(slurp(dir / "diagnostics.json"));
    for (const auto& seg : diag["segments"]) {
      CHECK(seg["cost"].get<double>() == 0.0);
      CHECK(seg["converged"].get<bool>());
    }
    fs::remove_all(dir);
  }

  SUBCASE("a 90-frame path splits into the three standard segments") {
    const fs::path dir = make_temp_dir();
    const fs::path csv = dir / "transforms.csv";
    const AffineTransform step = make_transform(
        GroupTag::SE3, Eigen::Matrix3d::Identity(), {0.0, 0.0, 0.004});
    write_transforms_csv(csv.string(),
                         std::vector<AffineTransform>(89, step));
    const StabilizeSummary summary =
        cmd_stabilize(small_config(dir), csv.string());
    CHECK(summary.keyframes == std::vector<int>{0, 30, 60, 89});
    const nlohmann::json diag =
        nlohmann::json::parse(slurp(dir / "diagnostics.json"));
    REQUIRE(diag["segments"].size() == 3);
    CHECK(diag["segments"][0]["start"] == 0);
    CHECK(diag["segments"][0]["end"] == 30);
    CHECK(diag["segments"][1]["start"] == 30);
    CHECK(diag["segments"][1]["end"] == 60);
    CHECK(diag["segments"][2]["start"] == 60);
    CHECK(diag["segments"][2]["end"] == 89);
    CHECK(summary.converged);
    fs::remove_all(dir);
  }

  SUBCASE("pure-noise input collapses to a near-straight path") {
    const fs::path dir = make_temp_dir();
    const fs::path csv = dir / "transforms.csv";
    std::mt19937 rng(92);
    // Noise stays below the keyframe speed floor so only the interval
    // keyframes remain and the solved path is a single smooth segment.
    std::normal_distribution<double> noise(0.0, 0.001);
    std::vector<Twist> twists;
    std::vector<AffineTransform> steps;
    for (int i = 0; i < 30; ++i) {
      TwistVec c = TwistVec::Zero(6);
      for (int k = 0; k < 3; ++k) c[k] = noise(rng);
      twists.emplace_back(GroupTag::SE3, c);
      steps.push_back(group_from_twist(twists.back()));
    }
    write_transforms_csv(csv.string(), steps);
    const StabilizeSummary summary =
        cmd_stabilize(small_config(dir), csv.string());
    CHECK(summary.converged);
    CHECK(summary.keyframes == std::vector<int>{0, 30});
    // With both segment ends pinned to the input path, the optimal corrected
    // path is the constant-rate chord between them; the input random walk
    // strays several times farther from that chord than the solution does.
    const CameraPath input = integrate_path(GroupTag::SE3, twists);
    const auto stab = read_transforms_csv((dir / "stabilized.csv").string());
    const Eigen::Vector3d t_end = stab.back().translation();
    double dev_stab = 0.0, dev_in = 0.0;
    for (int k = 0; k <= 30; ++k) {
      const double s = k / 30.0;
      dev_stab = std::max(dev_stab,
                          (stab[k].translation() - s * t_end).cwiseAbs().maxCoeff());
      dev_in = std::max(
          dev_in, (input.poses[k].translation() - s * input.poses[30].translation())
                      .cwiseAbs()
                      .maxCoeff());
      // The group coupling lets the optimum trade a little rotation against
      // translation cost, so the linear part is close to, not exactly, the
      // identity.
      CHECK((stab[k].linear() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <
            1e-4);
    }
    CHECK(dev_stab < 0.002);
    CHECK(dev_stab < dev_in / 3.0);
    fs::remove_all(dir);
  }

  SUBCASE("constraint frames become keyframes and are honored") {
    const fs::path dir = make_temp_dir();
    const fs::path csv = dir / "transforms.csv";
    const AffineTransform step = make_transform(
        GroupTag::SE3, Eigen::Matrix3d::Identity(), {0.006, 0.0, 0.0});
    write_transforms_csv(csv.string(),
                         std::vector<AffineTransform>(40, step));
    const fs::path constraints = dir / "constraints.txt";
    std::ofstream(constraints)
        << "15 1 0 0 0.01 0 1 0 0 0 0 1 0 0 0 0 1\n";
    const StabilizeSummary summary =
        cmd_stabilize(small_config(dir), csv.string(), constraints.string());
    CHECK(std::count(summary.keyframes.begin(), summary.keyframes.end(), 15) == 1);
    const auto stab = read_transforms_csv((dir / "stabilized.csv").string());
    const CameraPath input = integrate_path(
        GroupTag::SE3, std::vector<Twist>(40, Twist(GroupTag::SE3,
                                                    (TwistVec(6) << 0.006, 0, 0,
                                                     0, 0, 0)
                                                        .finished())));
    Eigen::Matrix4d expected = input.poses[15].matrix;
    expected(0, 3) += 0.01;  // constrained correction is a +x offset
    CHECK((stab[15].matrix - expected).cwiseAbs().maxCoeff() < 1e-7);
    fs::remove_all(dir);
  }
}

TEST_CASE("cmd_warp") {
  SUBCASE("identity renders keep the intensity content") {
    const fs::path data = make_temp_dir();
    const fs::path out = make_temp_dir();
    TrajectorySpec spec;
    spec.kind = "static";
    spec.frames = 2;
    cmd_synth(small_config(data), spec);
    const fs::path render = data / "render.csv";
    write_transforms_csv(render.string(), identity_rows(GroupTag::SE3, 3));
    cmd_warp(small_config(out), data.string(), render.string());
    for (int i = 0; i < 3; ++i) {
      const ImageU8 src =
          read_png_gray8((data / frame_name("intensity", i, "png")).string());
      const ImageU8 got =
          read_png_gray8((out / frame_name("warped", i, "png")).string());
      CHECK(src.pixels == got.pixels);
      const ImageU8 mask =
          read_png_gray8((out / frame_name("mask", i, "png")).string());
      for (const auto v : mask.pixels) CHECK(v == 255);
    }
    fs::remove_all(data);
    fs::remove_all(out);
  }

  SUBCASE("similarity render matches a directly applied similarity") {
    const fs::path data = make_temp_dir();
    const fs::path out = make_temp_dir();
    TrajectorySpec spec;
    spec.kind = "static";
    spec.frames = 1;
    const PipelineConfig cfg = small_config(data);
    cmd_synth(cfg, spec);
    // An optical-axis rotation plus in-plane shift acts on the z = 2 plane
    // as an exact pixel-space similarity (fx == fy here).
    const double angle = 0.04;
    const Eigen::Vector3d t3(0.01, -0.005, 0.0);
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    R.topLeftCorner<2, 2>() << std::cos(angle), -std::sin(angle),
        std::sin(angle), std::cos(angle);
    std::vector<AffineTransform> renders(
        2, make_transform(GroupTag::SE3, R, t3));
    renders[1] = identity_transform(GroupTag::SE3);
    const fs::path render_csv = data / "render.csv";
    write_transforms_csv(render_csv.string(), renders);
    cmd_warp(small_config(out), data.string(), render_csv.string());

    const ImageU8 src =
        read_png_gray8((data / frame_name("intensity", 0, "png")).string());
    const ImageU8 warped =
        read_png_gray8((out / frame_name("warped", 0, "png")).string());
    const ImageU8 mask =
        read_png_gray8((out / frame_name("mask", 0, "png")).string());
    const Eigen::Vector2d pp(cfg.K.cx, cfg.K.cy);
    const Eigen::Vector2d t_px(cfg.K.fx * t3.x() / 2.0, cfg.K.fy * t3.y() / 2.0);
    double se = 0.0;
    int count = 0;
    for (int y = 8; y < cfg.K.height - 8; ++y) {
      for (int x = 8; x < cfg.K.width - 8; ++x) {
        if (!mask.pixels[y * cfg.K.width + x]) continue;
        // Invert the pixel-space similarity to find the source sample.
        const Eigen::Vector2d q(x, y);
        const Eigen::Vector2d rel = q - pp - t_px;
        const Eigen::Vector2d srcpos =
            pp + Eigen::Vector2d(std::cos(angle) * rel.x() + std::sin(angle) * rel.y(),
                                 -std::sin(angle) * rel.x() + std::cos(angle) * rel.y());
        const int x0 = static_cast<int>(std::floor(srcpos.x()));
        const int y0 = static_cast<int>(std::floor(srcpos.y()));
        if (x0 < 0 || y0 < 0 || x0 + 1 >= cfg.K.width || y0 + 1 >= cfg.K.height) {
          continue;
        }
        const double fx = srcpos.x() - x0;
        const double fy = srcpos.y() - y0;
        const auto at = [&](int xx, int yy) {
          return static_cast<double>(src.pixels[yy * cfg.K.width + xx]) / 255.0;
        };
        const double expect = (1 - fx) * (1 - fy) * at(x0, y0) +
                              fx * (1 - fy) * at(x0 + 1, y0) +
                              (1 - fx) * fy * at(x0, y0 + 1) +
                              fx * fy * at(x0 + 1, y0 + 1);
        const double got = warped.pixels[y * cfg.K.width + x] / 255.0;
        se += (got - expect) * (got - expect);
        ++count;
      }
    }
    REQUIRE(count > 1000);
    const double psnr = 10.0 * std::log10(1.0 / (se / count));
    CHECK(psnr > 35.0);
    fs::remove_all(data);
    fs::remove_all(out);
  }

  SUBCASE("missing frames and count mismatches are reported") {
    const fs::path data = make_temp_dir();
    TrajectorySpec spec;
    spec.kind = "static";
    spec.frames = 3;
    cmd_synth(small_config(data), spec);
    const fs::path render = data / "render.csv";
    write_transforms_csv(render.string(), identity_rows(GroupTag::SE3, 4));
    fs::remove(data / frame_name("intensity", 3, "png"));
    CHECK_THROWS_WITH_AS(
        cmd_warp(small_config(make_temp_dir()), data.string(), render.string()),
        doctest::Contains("frame 3"), std::runtime_error);

    // After the deletion above the dataset holds intensity frames 0..2, so a
    // two-row render list leaves one dataset frame unaccounted for.
    write_transforms_csv(render.string(), identity_rows(GroupTag::SE3, 2));
    CHECK_THROWS_WITH_AS(
        cmd_warp(small_config(make_temp_dir()), data.string(), render.string()),
        doctest::Contains("does not match"), std::runtime_error);
    fs::remove_all(data);
  }
}

TEST_CASE("cmd_metrics") {
  const fs::path data = make_temp_dir();
  TrajectorySpec spec;
  spec.kind = "static";
  spec.frames = 9;
  cmd_synth(small_config(data), spec);
  const fs::path stab_csv = data / "stab.csv";
  const fs::path render_csv = data / "render.csv";

  SUBCASE("identity inputs score perfect") {
    write_transforms_csv(stab_csv.string(), identity_rows(GroupTag::SE3, 10));
    write_transforms_csv(render_csv.string(), identity_rows(GroupTag::SE3, 10));
    const fs::path out = make_temp_dir();
    const MetricsReport rep = cmd_metrics(small_config(out), stab_csv.string(),
                                          render_csv.string(), data.string());
    CHECK_FALSE(rep.failed);
    CHECK(rep.cropping == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep.distortion == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep.stability == 1.0);
    const nlohmann::json j = nlohmann::json::parse(slurp(out / "metrics.json"));
    CHECK(j["failed"].get<bool>() == false);
    CHECK(j["per_frame"]["cropping"].size() == 10);
    CHECK(j["per_frame"]["median_depth"][0].get<double>() ==
          doctest::Approx(2.0).epsilon(1e-9));
    fs::remove_all(out);
  }

  SUBCASE("an out-of-view frame zeroes the report") {
    write_transforms_csv(stab_csv.string(), identity_rows(GroupTag::SE3, 10));
    std::vector<AffineTransform> renders = identity_rows(GroupTag::SE3, 10);
    renders[5] = make_transform(GroupTag::SE3, Eigen::Matrix3d::Identity(),
                                {500.0, 0.0, 0.0});
    write_transforms_csv(render_csv.string(), renders);
    const fs::path out = make_temp_dir();
    const MetricsReport rep = cmd_metrics(small_config(out), stab_csv.string(),
                                          render_csv.string(), data.string());
    CHECK(rep.failed);
    CHECK(rep.cropping == 0.0);
    CHECK(rep.distortion == 0.0);
    CHECK(rep.stability == 0.0);
    fs::remove_all(out);
  }

  SUBCASE("metrics are deterministic across runs") {
    write_transforms_csv(stab_csv.string(), identity_rows(GroupTag::SE3, 10));
    write_transforms_csv(render_csv.string(), identity_rows(GroupTag::SE3, 10));
    const fs::path out_a = make_temp_dir();
    const fs::path out_b = make_temp_dir();
    (void)cmd_metrics(small_config(out_a), stab_csv.string(),
                      render_csv.string(), data.string());
    (void)cmd_metrics(small_config(out_b), stab_csv.string(),
                      render_csv.string(), data.string());
    CHECK(slurp(out_a / "metrics.json") == slurp(out_b / "metrics.json"));
    fs::remove_all(out_a);
    fs::remove_all(out_b);
  }

  fs::remove_all(data);
}

TEST_CASE("pipeline composes end to end") {
  const fs::path data = make_temp_dir();
  const fs::path est = make_temp_dir();
  const fs::path stab = make_temp_dir();
  const fs::path met = make_temp_dir();

  PipelineConfig cfg = small_config(data);
  TrajectorySpec spec;
  spec.kind = "jitter";
  spec.frames = 40;
  spec.seed = 7;
  cmd_synth(cfg, spec);

  cfg.out_dir = est.string();
  const EstimateSummary es = cmd_estimate(cfg, data.string());
  CHECK(es.intervals == 40);

  cfg.out_dir = stab.string();
  const StabilizeSummary ss =
      cmd_stabilize(cfg, (est / "transforms.csv").string());
  CHECK(ss.converged);

  cfg.out_dir = met.string();
  const MetricsReport rep =
      cmd_metrics(cfg, (stab / "stabilized.csv").string(),
                  (stab / "render.csv").string(), data.string());
  CHECK_FALSE(rep.failed);
  CHECK(rep.cropping > 0.8);

  // The solved path must beat the estimated input path on the stability
  // metric.
  const auto input_steps = read_transforms_csv((est / "transforms.csv").string());
  std::vector<Twist> input_twists;
  for (const auto& g : input_steps) {
    TwistVec c(6);
    c.head<3>() = g.translation();
    c.tail<3>() = sigma_inverse(g.linear(), GroupTag::SE3);
    input_twists.emplace_back(GroupTag::SE3, c);
  }
  const CameraPath input = integrate_path(GroupTag::SE3, input_twists);
  const auto stab_rows = read_transforms_csv((stab / "stabilized.csv").string());
  CHECK(rep.stability > metric_stability(input.poses));

  fs::remove_all(data);
  fs::remove_all(est);
  fs::remove_all(stab);
  fs::remove_all(met);
}

TEST_CASE("command line binary") {
  const fs::path dir = make_temp_dir();
  const std::string tool = FLOWSTAB_TOOL;

  SUBCASE("synth then estimate succeeds") {
    const fs::path cfg_file = dir / "cam.cfg";
    std::ofstream(cfg_file) << "fx 120\nfy 120\ncx 47.5\ncy 35.5\n"
                            << "width 96\nheight 72\n";
    const std::string synth_cmd =
        tool + " --config " + cfg_file.string() + " --out " +
        (dir / "data").string() + " --seed 5 synth --trajectory static --frames 3";
    CHECK(std::system(synth_cmd.c_str()) == 0);
    const std::string est_cmd = tool + " --config " + cfg_file.string() +
                                " --out " + (dir / "est").string() +
                                " estimate " + (dir / "data").string();
    CHECK(std::system(est_cmd.c_str()) == 0);
    CHECK(fs::exists(dir / "est" / "transforms.csv"));
  }

  SUBCASE("bad arguments fail with a nonzero status") {
    CHECK(std::system((tool + " stabilize 2>/dev/null").c_str()) != 0);
    CHECK(std::system((tool + " --group nope synth 2>/dev/null").c_str()) != 0);
  }

  fs::remove_all(dir);
}
