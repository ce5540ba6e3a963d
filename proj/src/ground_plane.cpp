#include <skyloc/ground_plane.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace skyloc {

double PitchFromNormal(const Vec3& n) { return std::atan2(-n.z(), n.y()); }

GroundPlane GroundPlane::FromNormal(const Vec3& n, double h_cam) {
  Require(n.norm() > 0.0 && n.allFinite(), ErrorKind::kInvalidArgument, "ground normal must be non-zero");
  Require(h_cam > 0.0, ErrorKind::kInvalidArgument, "camera height must be positive");
  GroundPlane plane;
  plane.n = n.normalized();
  plane.h_cam = h_cam;
  plane.theta = PitchFromNormal(plane.n);
  return plane;
}

GroundPlane GroundPlane::FromPitch(double pitch, double h_cam) {
  return FromNormal(Vec3(0.0, std::cos(pitch), std::sin(pitch)), h_cam);
}

std::vector<GroundSample> PatchSamples(const Box& box, const DenseDepthMap& depth, const CameraIntrinsics& camera,
                                       const PatchOptions& options) {
  Require(box.w > 0.0 && box.h > 0.0, ErrorKind::kInvalidArgument, "box must have positive size");
  Require(options.block_size >= 1 && options.height_fraction > 0.0, ErrorKind::kInvalidArgument,
          "invalid patch options");
  const Vec2 foot = box.BottomCenter();
  const double half_h = 0.5 * options.height_fraction * box.h;
  // Pixel centers inside [x0, x1) x [y0, y1).
  const int u0 = std::max(0, static_cast<int>(std::ceil(foot.x() - 0.5 * box.w)));
  const int u1 = std::min(depth.width, static_cast<int>(std::ceil(foot.x() + 0.5 * box.w)));
  const int v0 = std::max(0, static_cast<int>(std::ceil(foot.y() - half_h)));
  const int v1 = std::min(depth.height, static_cast<int>(std::ceil(foot.y() + half_h)));

  std::vector<GroundSample> samples;
  const int b = options.block_size;
  for (int by = v0; by < v1; by += b) {
    for (int bx = u0; bx < u1; bx += b) {
      double sum_inv = 0.0, su = 0.0, sv = 0.0;
      int count = 0;
      for (int v = by; v < std::min(by + b, v1); ++v) {
        for (int u = bx; u < std::min(bx + b, u1); ++u) {
          const double d = depth.depth[depth.Index(u, v)];
          if (!(d > 0.0)) continue;
          sum_inv += 1.0 / d;
          su += u;
          sv += v;
          ++count;
        }
      }
      if (count == 0) continue;
      // Inverse depth is affine in the pixel on a plane, so its block mean is
      // its value at the centroid pixel.
      const double z_bar = count / sum_inv;
      const Vec3 p = camera.Ray(Vec2(su / count, sv / count)) * z_bar;
      samples.push_back({p.x(), p.y(), z_bar});
    }
  }
  Require(!samples.empty(), ErrorKind::kNoSupport, "no known depth beneath the object");
  return samples;
}

Vec3 FitPlaneCramer(std::span<const GroundSample> samples) {
  Require(samples.size() >= 3, ErrorKind::kDegenerateSamples, "plane fit needs at least three samples");
  Vec3 mean = Vec3::Zero();
  for (const auto& s : samples) mean += s.Point();
  mean /= static_cast<double>(samples.size());
  Mat3 s = Mat3::Zero();
  for (const auto& sample : samples) {
    const Vec3 d = sample.Point() - mean;
    s += d * d.transpose();
  }

  // For dependent axis c and regressors (a, b):
  //   n_a = S_bc S_ab - S_ac S_bb, n_b = S_ab S_ac - S_aa S_bc, n_c = S_aa S_bb - S_ab^2
  // which for c = z is the textbook formula.
  Vec3 best = Vec3::Zero();
  double best_score = 0.0;
  const int order[3][3] = {{0, 1, 2}, {2, 0, 1}, {1, 2, 0}};
  for (const auto& o : order) {
    const int a = o[0], b = o[1], c = o[2];
    const double det = s(a, a) * s(b, b) - s(a, b) * s(a, b);
    const double trace = s(a, a) + s(b, b);
    if (!(trace > 0.0)) continue;
    const double score = det / (trace * trace);
    if (score <= best_score) continue;
    Vec3 n;
    n(a) = s(b, c) * s(a, b) - s(a, c) * s(b, b);
    n(b) = s(a, b) * s(a, c) - s(a, a) * s(b, c);
    n(c) = det;
    best = n;
    best_score = score;
  }
  Require(best_score > 1e-12 && best.norm() > 0.0, ErrorKind::kDegenerateSamples,
          "plane samples are collinear or coincident");
  best.normalize();
  if (best.dot(mean) < 0.0) best = -best;
  return best;
}

GroundEstimate EstimateGround(std::span<const Detection> detections, const DenseDepthMap& depth,
                              const CameraIntrinsics& camera, std::optional<double> h_ref,
                              const PatchOptions& options) {
  std::vector<GroundSample> pooled;
  for (const auto& det : detections) {
    try {
      const auto samples = PatchSamples(det.box, depth, camera, options);
      pooled.insert(pooled.end(), samples.begin(), samples.end());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNoSupport) throw;
    }
  }
  Require(!pooled.empty(), ErrorKind::kNoSupport, "no detection has depth support beneath it");
  const Vec3 n = FitPlaneCramer(pooled);
  double h = 0.0;
  for (const auto& s : pooled) h += n.dot(s.Point());
  h /= static_cast<double>(pooled.size());
  Require(h > 0.0, ErrorKind::kDegenerateSamples, "fitted plane passes through the camera");

  GroundEstimate estimate;
  estimate.sample_count = static_cast<int>(pooled.size());
  if (h_ref) {
    Require(*h_ref > 0.0, ErrorKind::kInvalidArgument, "reference height must be positive");
    estimate.scale = *h_ref / h;
    h = *h_ref;
  }
  estimate.plane = GroundPlane::FromNormal(n, h);
  return estimate;
}

Vec3 BackprojectFootpoint(const Vec2& pixel, const GroundPlane& plane, const CameraIntrinsics& camera) {
  const Vec3 ray = camera.Ray(pixel);
  const double denom = plane.n.dot(ray);
  Require(denom > 0.0, ErrorKind::kHorizonOrAbove, "footpoint ray does not meet the ground in front of the camera");
  return plane.h_cam * ray / denom;
}

void WriteLocalization(std::ostream& out, const std::vector<LocalizationRecord>& records) {
  out << "frame,track_id,x,y,z,distance_m\n" << std::fixed << std::setprecision(6);
  for (const auto& r : records) {
    out << r.frame << ',' << r.track_id << ',' << r.position.x() << ',' << r.position.y() << ','
        << r.position.z() << ',' << ObjectDistance(r.position) << '\n';
  }
}

void WriteLocalizationFile(const std::string& path, const std::vector<LocalizationRecord>& records) {
  std::ofstream out(path);
  Require(out.good(), ErrorKind::kIo, "cannot write localization file " + path);
  WriteLocalization(out, records);
}

std::vector<LocalizationRecord> ReadLocalizationFile(const std::string& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorKind::kIo, "cannot open localization file " + path);
  std::vector<LocalizationRecord> out;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line.rfind("frame", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    LocalizationRecord r;
    double distance = 0.0;
    fields >> r.frame >> r.track_id >> r.position.x() >> r.position.y() >> r.position.z() >> distance;
    Require(!fields.fail(), ErrorKind::kData, path + ":" + std::to_string(line_number) + ": malformed row");
    out.push_back(r);
  }
  return out;
}

}  // namespace skyloc
