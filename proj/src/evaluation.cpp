#include <skyloc/evaluation.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace skyloc {

std::vector<int> SolveAssignment(const Eigen::MatrixXd& cost) {
  const int rows = static_cast<int>(cost.rows()), cols = static_cast<int>(cost.cols());
  if (rows == 0 || cols == 0) return std::vector<int>(static_cast<size_t>(rows), -1);
  if (rows > cols) {
    const std::vector<int> transposed = SolveAssignment(cost.transpose());
    std::vector<int> out(static_cast<size_t>(rows), -1);
    for (int c = 0; c < cols; ++c) {
      if (transposed[static_cast<size_t>(c)] >= 0) out[static_cast<size_t>(transposed[static_cast<size_t>(c)])] = c;
    }
    return out;
  }
  // Potentials-based O(n^2 m), 1-indexed with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(rows) + 1, 0.0), v(static_cast<size_t>(cols) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(cols) + 1, 0), way(static_cast<size_t>(cols) + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(cols) + 1, inf);
    std::vector<bool> used(static_cast<size_t>(cols) + 1, false);
    do {
      used[static_cast<size_t>(j0)] = true;
      const int i0 = p[static_cast<size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= cols; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(static_cast<size_t>(rows), -1);
  for (int j = 1; j <= cols; ++j) {
    if (p[static_cast<size_t>(j)] > 0) out[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  }
  return out;
}

namespace {

using FrameIndex = std::map<int, std::vector<const Detection*>>;

FrameIndex IndexByFrame(const std::vector<Detection>& dets) {
  FrameIndex index;
  for (const auto& d : dets) index[d.frame].push_back(&d);
  return index;
}

// Optimal IOU matching of one frame; pairs below the threshold are never
// returned. Indices refer to the input vectors.
std::vector<std::pair<int, int>> MatchFrame(const std::vector<const Detection*>& truth,
                                            const std::vector<const Detection*>& hyp, double threshold) {
  std::vector<std::pair<int, int>> pairs;
  if (truth.empty() || hyp.empty()) return pairs;
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(truth.size()), static_cast<Eigen::Index>(hyp.size()));
  for (size_t i = 0; i < truth.size(); ++i) {
    for (size_t j = 0; j < hyp.size(); ++j) {
      const double iou = Iou(truth[i]->box, hyp[j]->box);
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = iou >= threshold ? 1.0 - iou : 1e6;
    }
  }
  const auto assignment = SolveAssignment(cost);
  for (size_t i = 0; i < truth.size(); ++i) {
    const int j = assignment[i];
    if (j >= 0 && Iou(truth[i]->box, hyp[static_cast<size_t>(j)]->box) >= threshold) {
      pairs.emplace_back(static_cast<int>(i), j);
    }
  }
  return pairs;
}

}  // namespace

MotMetrics ComputeMotMetrics(const std::vector<Detection>& hypotheses, const std::vector<Detection>& truth,
                             double iou_threshold) {
  Require(!truth.empty(), ErrorKind::kUndefinedMetrics, "ground truth is empty");
  const FrameIndex truth_by_frame = IndexByFrame(truth);
  const FrameIndex hyp_by_frame = IndexByFrame(hypotheses);
  std::set<int> frames;
  for (const auto& [f, _] : truth_by_frame) frames.insert(f);
  for (const auto& [f, _] : hyp_by_frame) frames.insert(f);

  MotMetrics m;
  std::map<int, int> last_match;  // truth id -> hypothesis id
  std::map<int, int> truth_length, truth_matched;
  std::map<std::pair<int, int>, int> overlap;  // (truth id, hyp id) -> matched frames
  std::map<int, int> hyp_length;
  static const std::vector<const Detection*> kNone;
  for (int f : frames) {
    const auto t_it = truth_by_frame.find(f);
    const auto h_it = hyp_by_frame.find(f);
    const auto& gt = t_it != truth_by_frame.end() ? t_it->second : kNone;
    const auto& hy = h_it != hyp_by_frame.end() ? h_it->second : kNone;
    for (const auto* g : gt) ++truth_length[g->id];
    for (const auto* h : hy) ++hyp_length[h->id];

    // Identity-preserving pairs from earlier frames are kept first.
    std::vector<bool> gt_done(gt.size(), false), hy_done(hy.size(), false);
    int frame_matches = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
      const auto lm = last_match.find(gt[i]->id);
      if (lm == last_match.end()) continue;
      for (size_t j = 0; j < hy.size(); ++j) {
        if (hy_done[j] || hy[j]->id != lm->second || Iou(gt[i]->box, hy[j]->box) < iou_threshold) continue;
        gt_done[i] = hy_done[j] = true;
        ++frame_matches;
        ++truth_matched[gt[i]->id];
        break;
      }
    }
    std::vector<const Detection*> gt_rest, hy_rest;
    for (size_t i = 0; i < gt.size(); ++i) {
      if (!gt_done[i]) gt_rest.push_back(gt[i]);
    }
    for (size_t j = 0; j < hy.size(); ++j) {
      if (!hy_done[j]) hy_rest.push_back(hy[j]);
    }
    for (const auto& [i, j] : MatchFrame(gt_rest, hy_rest, iou_threshold)) {
      const int gid = gt_rest[static_cast<size_t>(i)]->id, hid = hy_rest[static_cast<size_t>(j)]->id;
      const auto lm = last_match.find(gid);
      if (lm != last_match.end() && lm->second != hid) ++m.id_switches;
      last_match[gid] = hid;
      ++frame_matches;
      ++truth_matched[gid];
    }
    m.matches += frame_matches;
    m.truth_boxes += static_cast<int>(gt.size());
    m.false_positives += static_cast<int>(hy.size()) - frame_matches;
    m.false_negatives += static_cast<int>(gt.size()) - frame_matches;

    // Identity overlap counts use every IOU-feasible pair, independent of the
    // per-frame assignment.
    for (const auto* g : gt) {
      for (const auto* h : hy) {
        if (Iou(g->box, h->box) >= iou_threshold) ++overlap[{g->id, h->id}];
      }
    }
  }

  m.truth_tracks = static_cast<int>(truth_length.size());
  for (const auto& [id, length] : truth_length) {
    const double ratio = static_cast<double>(truth_matched[id]) / length;
    if (ratio >= 0.8) ++m.mostly_tracked;
    if (ratio <= 0.2) ++m.mostly_lost;
  }
  m.mota = 1.0 - static_cast<double>(m.false_positives + m.false_negatives + m.id_switches) / m.truth_boxes;

  std::vector<int> truth_ids, hyp_ids;
  for (const auto& [id, _] : truth_length) truth_ids.push_back(id);
  for (const auto& [id, _] : hyp_length) hyp_ids.push_back(id);
  if (!hyp_ids.empty()) {
    Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(truth_ids.size()),
                                                 static_cast<Eigen::Index>(hyp_ids.size()));
    for (size_t i = 0; i < truth_ids.size(); ++i) {
      for (size_t j = 0; j < hyp_ids.size(); ++j) {
        const auto it = overlap.find({truth_ids[i], hyp_ids[j]});
        if (it != overlap.end()) cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = -it->second;
      }
    }
    const auto assignment = SolveAssignment(cost);
    for (size_t i = 0; i < truth_ids.size(); ++i) {
      if (assignment[i] >= 0) {
        m.id_true_positives -= static_cast<int>(cost(static_cast<Eigen::Index>(i), assignment[i]));
      }
    }
  }
  m.idf1 = 2.0 * m.id_true_positives / static_cast<double>(truth.size() + hypotheses.size());
  return m;
}

std::vector<std::tuple<int, int, int>> MatchIdentities(const std::vector<Detection>& hypotheses,
                                                       const std::vector<Detection>& truth, double iou_threshold) {
  const FrameIndex truth_by_frame = IndexByFrame(truth);
  std::vector<std::tuple<int, int, int>> out;
  for (const auto& [f, hy] : IndexByFrame(hypotheses)) {
    const auto it = truth_by_frame.find(f);
    if (it == truth_by_frame.end()) continue;
    for (const auto& [i, j] : MatchFrame(it->second, hy, iou_threshold)) {
      out.emplace_back(f, hy[static_cast<size_t>(j)]->id, it->second[static_cast<size_t>(i)]->id);
    }
  }
  return out;
}

const BucketStats* LocalizationReport::Find(const std::string& label) const {
  for (const auto& b : buckets) {
    if (b.label == label) return &b;
  }
  return nullptr;
}

namespace {

std::string FormatMeters(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace

std::vector<std::string> BucketLabels(const std::vector<double>& edges) {
  std::vector<std::string> labels;
  for (double e : edges) labels.push_back("<=" + FormatMeters(e) + "m");
  labels.push_back(edges.empty() ? "all" : ">" + FormatMeters(edges.back()) + "m");
  labels.push_back("overall");
  return labels;
}

LocalizationReport ComputeLocalizationReport(const std::vector<LocalizationRecord>& estimates,
                                             const std::vector<LocalizationRecord>& truth,
                                             const std::vector<double>& edges) {
  Require(std::is_sorted(edges.begin(), edges.end()), ErrorKind::kInvalidArgument, "bucket edges must increase");
  std::map<std::pair<int, int>, Vec3> truth_at;
  for (const auto& t : truth) truth_at[{t.frame, t.track_id}] = t.position;

  // Welford accumulators; the last one is the overall bucket.
  struct Acc {
    int n = 0;
    double mean = 0.0, m2 = 0.0;
    void Add(double x) {
      ++n;
      const double d = x - mean;
      mean += d / n;
      m2 += d * (x - mean);
    }
  };
  std::vector<Acc> acc(edges.size() + 2);
  for (const auto& e : estimates) {
    const auto it = truth_at.find({e.frame, e.track_id});
    if (it == truth_at.end()) continue;
    const double error = (e.position - it->second).norm();
    const double distance = it->second.norm();
    const size_t bucket = static_cast<size_t>(std::lower_bound(edges.begin(), edges.end(), distance) - edges.begin());
    acc[bucket].Add(error);
    acc.back().Add(error);
  }
  Require(acc.back().n > 0, ErrorKind::kEmptyReport, "no estimate matches a truth position");
  const auto labels = BucketLabels(edges);
  LocalizationReport report;
  for (size_t b = 0; b < acc.size(); ++b) {
    if (acc[b].n == 0) continue;
    report.buckets.push_back({labels[b], acc[b].n, acc[b].mean, std::sqrt(std::max(0.0, acc[b].m2 / acc[b].n))});
  }
  return report;
}

AblationResult RunAblation(const AblationInput& input) {
  Require(!input.truth_positions.empty() && !input.truth_boxes.empty(), ErrorKind::kEmptyReport,
          "ablation needs truth boxes and positions");
  Require(static_cast<bool>(input.depth), ErrorKind::kInvalidArgument, "ablation needs a depth source");

  // Raw detections carry no identity; give them per-frame ids for matching.
  std::vector<Detection> raw = input.detections;
  {
    std::map<int, int> next;
    for (auto& d : raw) d.id = next[d.frame]++;
  }
  const std::vector<Detection> tracked = FlattenTracks(input.tracks);

  using Key = std::pair<int, int>;  // (frame, truth id)
  std::map<Key, Vec3> positions[AblationResult::kModes];
  auto identities = [&](const std::vector<Detection>& dets) {
    std::map<Key, int> truth_of;  // (frame, hyp id) -> truth id
    for (const auto& [f, hid, tid] : MatchIdentities(dets, input.truth_boxes)) truth_of[{f, hid}] = tid;
    return truth_of;
  };
  const auto raw_truth = identities(raw);
  const auto trk_truth = identities(tracked);

  const GroundPlane flat = GroundPlane::FromNormal(Vec3::UnitY(), input.flat_height);
  std::map<int, std::vector<Detection>> raw_by_frame, trk_by_frame;
  for (const auto& d : raw) raw_by_frame[d.frame].push_back(d);
  for (const auto& d : tracked) trk_by_frame[d.frame].push_back(d);
  std::set<int> frames;
  for (const auto& [f, _] : raw_by_frame) frames.insert(f);
  for (const auto& [f, _] : trk_by_frame) frames.insert(f);

  auto localize = [&](const std::vector<Detection>& dets, const std::map<Key, int>& truth_of,
                      const GroundPlane& plane, std::map<Key, Vec3>* out) {
    for (const auto& d : dets) {
      const auto it = truth_of.find({d.frame, d.id});
      if (it == truth_of.end()) continue;
      try {
        (*out)[{d.frame, it->second}] = BackprojectFootpoint(d.box.BottomCenter(), plane, input.camera);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kHorizonOrAbove) throw;
      }
    }
  };
  auto estimate = [&](const std::vector<Detection>& dets, const DenseDepthMap& depth) -> std::optional<GroundPlane> {
    try {
      return EstimateGround(dets, depth, input.camera, input.height_ref, input.patch).plane;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kNoSupport || e.kind() == ErrorKind::kDegenerateSamples) return std::nullopt;
      throw;
    }
  };

  for (int f : frames) {
    const DenseDepthMap depth = input.depth(f);
    const auto r = raw_by_frame.find(f);
    if (r != raw_by_frame.end()) {
      localize(r->second, raw_truth, flat, &positions[0]);
      if (auto plane = estimate(r->second, depth)) localize(r->second, raw_truth, *plane, &positions[1]);
    }
    const auto t = trk_by_frame.find(f);
    if (t != trk_by_frame.end()) {
      if (auto plane = estimate(t->second, depth)) localize(t->second, trk_truth, *plane, &positions[2]);
    }
  }

  AblationResult result;
  for (const auto& [key, p0] : positions[0]) {
    if (!positions[1].count(key) || !positions[2].count(key)) continue;
    ++result.common_pairs;
    for (int m = 0; m < AblationResult::kModes; ++m) {
      result.estimates[m].push_back({key.first, key.second, positions[m].at(key)});
    }
  }
  for (int m = 0; m < AblationResult::kModes; ++m) {
    result.reports[m] = ComputeLocalizationReport(result.estimates[m], input.truth_positions, input.bucket_edges);
  }
  return result;
}

void WriteMotTable(std::ostream& out, const MotMetrics& m) {
  out << std::fixed << std::setprecision(1);
  out << "  MOTA   IDF1    MT    ML      FP      FN   IDsw\n";
  out << std::setw(6) << 100.0 * m.mota << ' ' << std::setw(6) << 100.0 * m.idf1 << ' ' << std::setw(5)
      << m.mostly_tracked << ' ' << std::setw(5) << m.mostly_lost << ' ' << std::setw(7) << m.false_positives << ' '
      << std::setw(7) << m.false_negatives << ' ' << std::setw(6) << m.id_switches << '\n';
  out.unsetf(std::ios::fixed);
}

void WriteLocalizationTable(std::ostream& out, const std::vector<std::string>& row_names,
                            const std::vector<LocalizationReport>& reports, const std::vector<std::string>& labels) {
  size_t name_width = 6;
  for (const auto& n : row_names) name_width = std::max(name_width, n.size());
  out << std::left << std::setw(static_cast<int>(name_width)) << "method" << std::right;
  for (const auto& l : labels) out << std::setw(16) << l;
  out << '\n';
  for (size_t r = 0; r < reports.size(); ++r) {
    out << std::left << std::setw(static_cast<int>(name_width)) << row_names[r] << std::right;
    for (const auto& l : labels) {
      const BucketStats* b = reports[r].Find(l);
      std::ostringstream cell;
      if (b == nullptr) {
        cell << "N/A";
      } else {
        cell << std::fixed << std::setprecision(2) << b->mean << " (" << b->stddev << ")";
      }
      out << std::setw(16) << cell.str();
    }
    out << '\n';
  }
}

void WriteLocalizationCsv(std::ostream& out, const std::vector<std::string>& row_names,
                          const std::vector<LocalizationReport>& reports) {
  out << "method,bucket,count,mean_m,std_m\n" << std::setprecision(9);
  for (size_t r = 0; r < reports.size(); ++r) {
    for (const auto& b : reports[r].buckets) {
      out << row_names[r] << ',' << b.label << ',' << b.count << ',' << b.mean << ',' << b.stddev << '\n';
    }
  }
}

}  // namespace skyloc
