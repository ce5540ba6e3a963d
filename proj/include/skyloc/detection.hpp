#pragma once

// Bounding boxes, detections and the MOT-style CSV layout shared by the
// tracker, ground-plane and evaluation code.

#include <skyloc/geometry.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace skyloc {

// Pixel box, top-left origin.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double Area() const { return w * h; }
  Vec2 Center() const { return {x + 0.5 * w, y + 0.5 * h}; }
  Vec2 BottomCenter() const { return {x + 0.5 * w, y + h}; }
  bool operator==(const Box&) const = default;
};

double Iou(const Box& a, const Box& b);

// Axis-aligned bounds of the four corners mapped by the homography `h`.
Box WarpBox(const Box& box, const Mat3& h);

struct Detection {
  int frame = 0;
  int id = -1;
  Box box;
  double score = 1.0;
  int label = 0;
  std::vector<double> embedding;
};

// `frame,id,x,y,w,h,score,class[,e1,...]` one per line; blank lines and lines
// starting with '#' are skipped. Throws kData naming `source` and the line.
std::vector<Detection> ParseDetections(std::istream& in, const std::string& source);
std::vector<Detection> ReadDetectionFile(const std::string& path);
void WriteDetections(std::ostream& out, const std::vector<Detection>& detections, bool with_embeddings = true);
void WriteDetectionFile(const std::string& path, const std::vector<Detection>& detections,
                        bool with_embeddings = true);

// Stable order: frame, then id, then input order.
void SortByFrame(std::vector<Detection>* detections);

}  // namespace skyloc
