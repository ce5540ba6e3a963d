#pragma once

// Ground plane {n, h_cam} from depth beneath detected objects, and footpoint
// back-projection onto it.
//
// Camera frame is y-down, so n points from the camera toward the ground and
// every ground point p satisfies n.p = h_cam > 0. Level ground seen by an
// unpitched camera is n = (0, 1, 0).

#include <skyloc/detection.hpp>
#include <skyloc/geometry.hpp>
#include <skyloc/maps.hpp>

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace skyloc {

struct GroundPlane {
  Vec3 n = Vec3::UnitY();
  double h_cam = 1.0;  // m
  double theta = 0.0;  // rad; n = (n1, cos(theta), -sin(theta)) for n1 = 0

  // Normalizes n and derives theta. Throws kInvalidArgument on a zero normal
  // or non-positive height.
  static GroundPlane FromNormal(const Vec3& n, double h_cam);
  // Plane of a camera pitched down by `pitch` radians at height `h_cam`.
  static GroundPlane FromPitch(double pitch, double h_cam);
};

// theta = atan2(-n3, n2). A camera pitched down by p sees theta = -p.
double PitchFromNormal(const Vec3& n);

struct GroundSample {
  double x = 0.0;  // m
  double y = 0.0;  // m
  double z_bar = 0.0;  // m, average depth of the block

  Vec3 Point() const { return {x, y, z_bar}; }
};

struct PatchOptions {
  double height_fraction = 1.0 / 3.0;  // patch height as a fraction of the box height
  int block_size = 4;                  // px; one sample per block
};

// Depth samples from the a x (fraction * b) patch centered on the box's
// bottom-center. Each block's inverse depths are averaged and its centroid
// pixel is lifted at the averaged depth. Throws kNoSupport when no pixel of
// the patch has a known depth.
std::vector<GroundSample> PatchSamples(const Box& box, const DenseDepthMap& depth, const CameraIntrinsics& camera,
                                       const PatchOptions& options = {});

// Cramer's-rule least-squares normal after centroid subtraction. The
// dependent coordinate is the one with the best conditioned 2x2 system, so a
// plane seen edge-on in z (an unpitched camera) is still fitted. Oriented so
// that the mean n.p is positive. Throws kDegenerateSamples for fewer than
// three or collinear samples.
Vec3 FitPlaneCramer(std::span<const GroundSample> samples);

struct GroundEstimate {
  GroundPlane plane;
  double scale = 1.0;  // applied to depths when a reference height is given
  int sample_count = 0;
};

// One plane pooled over the patches of all detections. With `h_ref` the
// depths (and so the plane offset) are rescaled so that h_cam = h_ref.
GroundEstimate EstimateGround(std::span<const Detection> detections, const DenseDepthMap& depth,
                              const CameraIntrinsics& camera, std::optional<double> h_ref = std::nullopt,
                              const PatchOptions& options = {});

// c = h_cam K^-1 b / (n^T K^-1 b). Throws kHorizonOrAbove when the ray does
// not meet the ground in front of the camera.
Vec3 BackprojectFootpoint(const Vec2& pixel, const GroundPlane& plane, const CameraIntrinsics& camera);

inline double ObjectDistance(const Vec3& c) { return c.norm(); }

// Camera-frame position of one object in one frame.
struct LocalizationRecord {
  int frame = 0;
  int track_id = 0;
  Vec3 position = Vec3::Zero();
};

// `frame,track_id,x,y,z,distance_m` with a header line.
void WriteLocalization(std::ostream& out, const std::vector<LocalizationRecord>& records);
void WriteLocalizationFile(const std::string& path, const std::vector<LocalizationRecord>& records);
std::vector<LocalizationRecord> ReadLocalizationFile(const std::string& path);

}  // namespace skyloc
