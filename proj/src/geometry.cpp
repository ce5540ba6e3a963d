#include <skyloc/geometry.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace skyloc {

Mat3 CameraIntrinsics::Matrix() const {
  Mat3 k;
  k << f, 0, cx, 0, f, cy, 0, 0, 1;
  return k;
}

Mat3 CameraIntrinsics::InverseMatrix() const {
  Mat3 k;
  k << 1.0 / f, 0, -cx / f, 0, 1.0 / f, -cy / f, 0, 0, 1;
  return k;
}

bool CameraIntrinsics::Contains(const Vec2& pixel, double margin) const {
  return pixel.x() >= margin && pixel.y() >= margin && pixel.x() <= width - 1 - margin &&
         pixel.y() <= height - 1 - margin;
}

CameraIntrinsics ApproximateIntrinsics(int width, int height, double hfov_deg, FocalModel model) {
  Require(width > 0 && height > 0, ErrorKind::kInvalidArgument, "image dimensions must be positive");
  Require(hfov_deg > 0.0 && hfov_deg < 180.0, ErrorKind::kInvalidArgument,
          "horizontal field of view must lie in (0, 180) degrees");
  CameraIntrinsics camera;
  camera.width = width;
  camera.height = height;
  camera.cx = width / 2.0;
  camera.cy = height / 2.0;
  const double half_width = width / 2.0;
  if (model == FocalModel::kTangent) {
    camera.f = half_width / std::tan(hfov_deg * std::numbers::pi / 360.0);
  } else {
    camera.f = half_width * std::atan((hfov_deg / 180.0) * (std::numbers::pi / 2.0));
  }
  return camera;
}

Mat3 ExpSO3(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) {
    // Second-order expansion keeps the result orthonormal to rounding.
    Mat3 w;
    w << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    Mat3 r = Mat3::Identity() + w + 0.5 * w * w;
    return Eigen::Quaterniond(r).normalized().toRotationMatrix();
  }
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

Vec3 LogSO3(const Mat3& rotation) {
  Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

PoseSE3::PoseSE3(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  const double orthogonality = (rotation.transpose() * rotation - Mat3::Identity()).norm();
  Require(orthogonality < 1e-9 && rotation.determinant() > 0.0, ErrorKind::kInvalidArgument,
          "pose rotation is not a proper rotation matrix");
  Require(translation.allFinite(), ErrorKind::kInvalidArgument, "pose translation is not finite");
}

PoseSE3 PoseSE3::FromAxisAngle(const Vec3& omega, const Vec3& t) { return PoseSE3(ExpSO3(omega), t); }

PoseSE3 PoseSE3::Inverse() const {
  PoseSE3 out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

PoseSE3 PoseSE3::operator*(const PoseSE3& rhs) const {
  PoseSE3 out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

PoseSE3 PoseSE3::LeftPerturb(const Vec6& delta) const {
  const Mat3 r = ExpSO3(delta.head<3>());
  PoseSE3 out;
  // Re-project onto SO(3); repeated updates otherwise drift off it.
  out.rotation_ = Eigen::Quaterniond(r * rotation_).normalized().toRotationMatrix();
  out.translation_ = r * translation_ + delta.tail<3>();
  return out;
}

double PoseSE3::RotationAngle() const {
  const double c = std::clamp((rotation_.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Vec2 Project(const CameraIntrinsics& camera, const PoseSE3& camera_pose, const Vec3& world_point) {
  const Vec3 p = camera_pose.Inverse() * world_point;
  Require(p.z() > 0.0, ErrorKind::kBehindCamera, "point is behind the camera");
  return camera.ProjectCameraPoint(p);
}

Vec2 Warp(const Vec2& pixel, double inverse_depth, const PoseSE3& xi, const CameraIntrinsics& camera) {
  Require(inverse_depth > 0.0, ErrorKind::kInvalidArgument, "inverse depth must be positive");
  const Vec3 p = xi * (camera.Ray(pixel) / inverse_depth);
  Require(p.z() > 0.0, ErrorKind::kBehindCamera, "warped point is behind the camera");
  return camera.ProjectCameraPoint(p);
}

double HuberNorm(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

double HuberDerivative(double residual, double delta) {
  return std::abs(residual) <= delta ? residual : delta * (residual > 0 ? 1.0 : -1.0);
}

double HuberWeight(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 1.0 : delta / a;
}

double Triangulate(const PoseSE3& ref_pose, const PoseSE3& cur_pose, const Vec2& ref_pixel,
                   const Vec2& cur_pixel, const CameraIntrinsics& camera, double min_ray_angle_deg) {
  const Vec3 c0 = ref_pose.translation();
  const Vec3 c1 = cur_pose.translation();
  const Vec3 baseline = c1 - c0;
  Require(baseline.norm() > 1e-12, ErrorKind::kDegenerateGeometry, "zero baseline");

  const Vec3 r0 = ref_pose.rotation() * camera.Ray(ref_pixel);
  const Vec3 r1 = cur_pose.rotation() * camera.Ray(cur_pixel);
  const double cos_angle = std::clamp(r0.dot(r1) / (r0.norm() * r1.norm()), -1.0, 1.0);
  const double min_angle = min_ray_angle_deg * std::numbers::pi / 180.0;
  Require(std::acos(cos_angle) >= min_angle, ErrorKind::kDegenerateGeometry,
          "rays are too close to parallel");

  // Closest points c0 + s r0 and c1 + u r1.
  Eigen::Matrix2d a;
  a << r0.dot(r0), -r0.dot(r1), r0.dot(r1), -r1.dot(r1);
  const Eigen::Vector2d b(baseline.dot(r0), baseline.dot(r1));
  const Eigen::Vector2d su = a.inverse() * b;
  Require(su.x() > 0.0 && su.y() > 0.0, ErrorKind::kDegenerateGeometry,
          "rays intersect behind a camera");
  const Vec3 midpoint = 0.5 * ((c0 + su.x() * r0) + (c1 + su.y() * r1));
  return (ref_pose.Inverse() * midpoint).z();
}

double EpipolarSegment::DistanceTo(const Vec2& pixel) const {
  const Vec2 d = far_pixel - near_pixel;
  const double len2 = d.squaredNorm();
  if (len2 == 0.0) return (pixel - near_pixel).norm();
  const double s = std::clamp((pixel - near_pixel).dot(d) / len2, 0.0, 1.0);
  return (pixel - At(s)).norm();
}

EpipolarSegment EpipolarLine(const CameraIntrinsics& camera, const PoseSE3& xi, const Vec2& ref_pixel,
                             double near_depth, double far_depth) {
  Require(xi.translation().norm() > 1e-12, ErrorKind::kDegenerateGeometry, "zero baseline");
  Require(near_depth > 0.0 && far_depth >= near_depth, ErrorKind::kInvalidArgument,
          "invalid depth interval");
  const Vec3 ray = camera.Ray(ref_pixel);
  const Vec3 p_near = xi * (near_depth * ray);
  const Vec3 p_far = xi * (far_depth * ray);
  Require(p_near.z() > 0.0 && p_far.z() > 0.0, ErrorKind::kBehindCamera,
          "depth interval projects behind the current camera");
  EpipolarSegment segment;
  segment.near_pixel = camera.ProjectCameraPoint(p_near);
  segment.far_pixel = camera.ProjectCameraPoint(p_far);
  segment.near_depth = near_depth;
  segment.far_depth = far_depth;
  return segment;
}

std::vector<PoseRecord> ParsePoses(std::istream& in) {
  std::vector<PoseRecord> poses;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream fields(line);
    PoseRecord record;
    Mat3 r;
    Vec3 t;
    fields >> record.frame;
    for (int i = 0; i < 9; ++i) fields >> r(i / 3, i % 3);
    fields >> t.x() >> t.y() >> t.z();
    Require(!fields.fail(), ErrorKind::kData,
            "pose file line " + std::to_string(line_number) + ": expected 13 numeric fields");
    try {
      record.pose = PoseSE3(r, t);
    } catch (const Error& e) {
      Fail(ErrorKind::kData, "pose file line " + std::to_string(line_number) + ": " + e.what());
    }
    poses.push_back(record);
  }
  return poses;
}

std::vector<PoseRecord> ReadPoseFile(const std::string& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorKind::kIo, "cannot open pose file " + path);
  return ParsePoses(in);
}

void WritePoses(std::ostream& out, const std::vector<PoseRecord>& poses) {
  out << std::setprecision(17);
  for (const auto& record : poses) {
    const Mat3& r = record.pose.rotation();
    const Vec3& t = record.pose.translation();
    out << record.frame;
    for (int i = 0; i < 9; ++i) out << ' ' << r(i / 3, i % 3);
    out << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << '\n';
  }
}

void WritePoseFile(const std::string& path, const std::vector<PoseRecord>& poses) {
  std::ofstream out(path);
  Require(out.good(), ErrorKind::kIo, "cannot write pose file " + path);
  WritePoses(out, poses);
}

}  // namespace skyloc
