#include <skyloc/detection.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace skyloc {

double Iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.Area() + b.Area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Box WarpBox(const Box& box, const Mat3& h) {
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  for (int c = 0; c < 4; ++c) {
    const Vec3 p = h * Vec3(box.x + (c & 1 ? box.w : 0.0), box.y + (c & 2 ? box.h : 0.0), 1.0);
    x0 = std::min(x0, p.x() / p.z());
    x1 = std::max(x1, p.x() / p.z());
    y0 = std::min(y0, p.y() / p.z());
    y1 = std::max(y1, p.y() / p.z());
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

std::vector<Detection> ParseDetections(std::istream& in, const std::string& source) {
  std::vector<Detection> out;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(line_number) + ": ";
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        Fail(ErrorKind::kData, where + "field '" + cell + "' is not a number");
      }
      Require(cell.find_first_not_of(" \t", used) == std::string::npos, ErrorKind::kData,
              where + "field '" + cell + "' is not a number");
      fields.push_back(v);
    }
    Require(fields.size() >= 8, ErrorKind::kData, where + "expected at least 8 comma-separated fields");
    Detection d;
    d.frame = static_cast<int>(fields[0]);
    d.id = static_cast<int>(fields[1]);
    d.box = {fields[2], fields[3], fields[4], fields[5]};
    d.score = fields[6];
    d.label = static_cast<int>(fields[7]);
    d.embedding.assign(fields.begin() + 8, fields.end());
    Require(d.frame >= 0 && fields[0] == d.frame, ErrorKind::kData, where + "frame must be a non-negative integer");
    Require(d.box.w > 0.0 && d.box.h > 0.0, ErrorKind::kData, where + "box width and height must be positive");
    Require(d.score >= 0.0 && d.score <= 1.0, ErrorKind::kData, where + "score must lie in [0, 1]");
    for (double v : fields) Require(std::isfinite(v), ErrorKind::kData, where + "non-finite value");
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> ReadDetectionFile(const std::string& path) {
  std::ifstream in(path);
  Require(in.good(), ErrorKind::kIo, "cannot open detection file " + path);
  return ParseDetections(in, path);
}

void WriteDetections(std::ostream& out, const std::vector<Detection>& detections, bool with_embeddings) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& d : detections) {
    out << d.frame << ',' << d.id << ',' << d.box.x << ',' << d.box.y << ',' << d.box.w << ',' << d.box.h << ','
        << d.score << ',' << d.label;
    if (with_embeddings) {
      for (double e : d.embedding) out << ',' << e;
    }
    out << '\n';
  }
}

void WriteDetectionFile(const std::string& path, const std::vector<Detection>& detections, bool with_embeddings) {
  std::ofstream out(path);
  Require(out.good(), ErrorKind::kIo, "cannot write detection file " + path);
  WriteDetections(out, detections, with_embeddings);
}

void SortByFrame(std::vector<Detection>* detections) {
  std::stable_sort(detections->begin(), detections->end(), [](const Detection& a, const Detection& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });
}

}  // namespace skyloc
