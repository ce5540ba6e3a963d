#pragma once

// Camera model and rigid-motion algebra.
//
// Frames: camera x right, y down, z forward. A "camera pose" is always the
// world-from-camera transform T_wc (maps camera coordinates into the world).
// A "relative pose" xi maps reference-camera coordinates into current-camera
// coordinates (T_cur_ref), which is what image alignment estimates.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <iosfwd>
#include <string>
#include <vector>

namespace skyloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
  double f = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Mat3 Matrix() const;
  Mat3 InverseMatrix() const;
  // K^-1 [u v 1]^T, i.e. the ray through the pixel scaled to unit z.
  Vec3 Ray(const Vec2& pixel) const { return {(pixel.x() - cx) / f, (pixel.y() - cy) / f, 1.0}; }
  // Pinhole projection of a camera-frame point; does not check z.
  Vec2 ProjectCameraPoint(const Vec3& p) const {
    return {f * p.x() / p.z() + cx, f * p.y() / p.z() + cy};
  }
  bool Contains(const Vec2& pixel, double margin = 0.0) const;
};

enum class FocalModel {
  kTangent,  // f = (w/2) / tan(hfov/2)
  kLiteral,  // f = (w/2) * atan((hfov/180) * (pi/2)), reproduction mode
};

CameraIntrinsics ApproximateIntrinsics(int width, int height, double hfov_deg,
                                       FocalModel model = FocalModel::kTangent);

class PoseSE3 {
 public:
  PoseSE3() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  // Throws kInvalidArgument unless `rotation` is a proper rotation.
  PoseSE3(const Mat3& rotation, const Vec3& translation);

  static PoseSE3 Identity() { return {}; }
  // Rotation by the axis-angle vector `omega` followed by translation `t`.
  static PoseSE3 FromAxisAngle(const Vec3& omega, const Vec3& t);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  PoseSE3 Inverse() const;
  PoseSE3 operator*(const PoseSE3& rhs) const;
  Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }

  // Left-multiplicative increment: (exp(omega) R, exp(omega) t + v) for
  // delta = [omega; v]. This is the parameterization used by the optimizers.
  PoseSE3 LeftPerturb(const Vec6& delta) const;

  double RotationAngle() const;  // radians

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

Mat3 ExpSO3(const Vec3& omega);
Vec3 LogSO3(const Mat3& rotation);

// Projects a world point into the camera with pose T_wc. Throws kBehindCamera
// when the camera-frame z is not positive.
Vec2 Project(const CameraIntrinsics& camera, const PoseSE3& camera_pose, const Vec3& world_point);

// Back-projects `pixel` to depth 1/inverse_depth in the reference camera,
// applies xi = T_cur_ref and reprojects into the current camera.
Vec2 Warp(const Vec2& pixel, double inverse_depth, const PoseSE3& xi, const CameraIntrinsics& camera);

double HuberNorm(double residual, double delta);
double HuberDerivative(double residual, double delta);
// IRLS weight psi(r)/r.
double HuberWeight(double residual, double delta);

inline constexpr double kDefaultMinRayAngleDeg = 0.5;

// Midpoint triangulation. Poses are T_wc. Returns the z-depth of the point in
// the reference camera. Throws kDegenerateGeometry for rays closer than
// `min_ray_angle_deg` to parallel or when the midpoint falls behind either
// camera.
double Triangulate(const PoseSE3& ref_pose, const PoseSE3& cur_pose, const Vec2& ref_pixel,
                   const Vec2& cur_pixel, const CameraIntrinsics& camera,
                   double min_ray_angle_deg = kDefaultMinRayAngleDeg);

// Projection of the reference ray between depths [near_depth, far_depth].
struct EpipolarSegment {
  Vec2 near_pixel;
  Vec2 far_pixel;
  double near_depth = 0.0;
  double far_depth = 0.0;

  Vec2 At(double s) const { return near_pixel + s * (far_pixel - near_pixel); }
  double Length() const { return (far_pixel - near_pixel).norm(); }
  double DistanceTo(const Vec2& pixel) const;
};

// xi = T_cur_ref. Depths are reference z-depths. Throws kDegenerateGeometry
// on a zero baseline and kBehindCamera if the interval is not in front of the
// current camera.
EpipolarSegment EpipolarLine(const CameraIntrinsics& camera, const PoseSE3& xi, const Vec2& ref_pixel,
                             double near_depth, double far_depth);

struct PoseRecord {
  int frame = 0;
  PoseSE3 pose;
};

// `frame r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz` per line.
std::vector<PoseRecord> ReadPoseFile(const std::string& path);
std::vector<PoseRecord> ParsePoses(std::istream& in);
void WritePoses(std::ostream& out, const std::vector<PoseRecord>& poses);
void WritePoseFile(const std::string& path, const std::vector<PoseRecord>& poses);

}  // namespace skyloc
