#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eedkit/image.hpp"
#include "eedkit/image_io.hpp"

namespace eedkit {

using ClassId = std::uint8_t;

inline constexpr ClassId kIgnoreId = 255;

/// Per-pixel class ids; kIgnoreId (by default) marks unlabeled pixels.
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<ClassId> labels;
  ClassId ignore_id = kIgnoreId;

  LabelMask() = default;
  LabelMask(int h, int w, ClassId fill = 0, ClassId ignore = kIgnoreId)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill), ignore_id(ignore) {}

  ClassId& at(int row, int col) { return labels[static_cast<std::size_t>(row) * width + col]; }
  ClassId at(int row, int col) const {
    return labels[static_cast<std::size_t>(row) * width + col];
  }
  std::size_t size() const { return labels.size(); }
  bool same_shape(const LabelMask& o) const { return height == o.height && width == o.width; }

  static LabelMask from_raster(const GrayRaster& r, ClassId ignore = kIgnoreId);
  GrayRaster to_raster() const;
};

LabelMask load_mask(const std::string& path, ClassId ignore = kIgnoreId);

/// One ground-truth connected component.
struct SegmentRecord {
  int id = 0;
  ClassId class_id = 0;
  std::vector<std::int32_t> pixels;    ///< flat indices, ascending
  std::vector<std::int32_t> boundary;  ///< subset of pixels, ascending
  std::size_t area() const { return pixels.size(); }
};

/// 8-connected components of equal class id, ignore pixels excluded. A pixel
/// is on the boundary when one of its 4-neighbors is outside the segment or
/// outside the image. Segments are numbered in raster order of their first
/// pixel, starting at 1.
std::vector<SegmentRecord> connected_components(const LabelMask& mask);

/// Mean over the boundary pixels of |grad img|, where the gradient stacks the
/// central-difference x/y derivatives of every channel. Throws ParameterError
/// on an empty boundary or mismatched dimensions.
double boundary_visibility(const Image& img, const SegmentRecord& seg);

/// IoU between the segment and the prediction region of its class, where the
/// region is the union of the 8-connected predicted components of that class
/// that intersect the segment.
double s_iou(const LabelMask& pred, const SegmentRecord& seg);

/// Named class list.
struct ClassSet {
  std::vector<std::pair<ClassId, std::string>> classes;

  std::vector<ClassId> ids() const;
  std::string name_of(ClassId id) const;
  bool contains(ClassId id) const;
};

/// The 14 classes shared by Cityscapes and CARLA, ids 0..13 in the order
/// road, sidewalk, building, wall, pole, traffic light, traffic sign,
/// vegetation, terrain, sky, person, car, truck, bus.
const ClassSet& common_classes();

/// Parses "id name" lines; '#' starts a comment. Names may contain spaces.
ClassSet parse_class_set(const std::string& text);
ClassSet load_class_set(const std::string& path);

/// Dataset-level confusion counts. Pixels whose ground truth is ignore or not
/// in the class list are skipped; predictions outside the class list count
/// as false negatives of the ground-truth class. Merging is associative.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<ClassId> classes);

  void accumulate(const LabelMask& pred, const LabelMask& gt);
  void merge(const ConfusionMatrix& other);

  /// counts[gt][pred]; the last column collects predictions outside the list.
  std::uint64_t count(std::size_t gt_index, std::size_t pred_index) const;
  const std::vector<ClassId>& classes() const { return classes_; }

  std::uint64_t true_positives(std::size_t k) const;
  std::uint64_t false_positives(std::size_t k) const;
  std::uint64_t false_negatives(std::size_t k) const;

 private:
  std::vector<ClassId> classes_;
  std::vector<int> lookup_;  // class id -> index, -1 if absent
  std::vector<std::uint64_t> counts_;
};

struct ClassIou {
  ClassId class_id;
  std::string name;
  std::uint64_t tp, fp, fn;
  std::optional<double> iou;  ///< empty when the class is absent everywhere
};

/// Per-segment row of a report.
struct SegmentRow {
  std::string image;
  int segment_id;
  ClassId class_id;
  std::size_t area;
  std::vector<double> s_iou;          ///< one value per prediction source
  std::optional<double> visibility;   ///< needs the image tree
};

struct AccuracyBlock {
  double acc_cs;
  double acc_aa;
  double acc_rel;
};

struct MetricsReport {
  std::vector<ClassIou> classes;
  double miou = 0.0;
  std::vector<ClassId> undefined_classes;
  std::vector<SegmentRow> segments;
  std::optional<AccuracyBlock> accuracy;
  std::map<std::string, std::string> metadata;
};

/// IoU_k = TP / (TP + FP + FN) over the accumulated counts; mIoU averages the
/// defined classes.
MetricsReport class_iou(const ConfusionMatrix& cm, const ClassSet& names);

/// Convenience wrapper accumulating all pairs first.
MetricsReport class_iou(const std::vector<LabelMask>& preds, const std::vector<LabelMask>& gts,
                        const ClassSet& classes);

/// 0 (black) where the labels differ, 255 (white) where they agree.
GrayRaster prediction_diff(const LabelMask& a, const LabelMask& b);

/// acc_aa / acc_cs, i.e. 1 - (acc_cs - acc_aa) / acc_cs.
double acc_rel(double acc_cs, double acc_aa);

/// Input to segment_scatter: s_IoU of one segment under one prediction source.
struct SegmentScore {
  std::string image;
  int segment_id;
  ClassId class_id;
  double visibility;  ///< NaN when unknown
  double s_iou;
};

struct ScatterRow {
  std::string image;
  int segment_id;
  ClassId class_id;
  double visibility;  ///< NaN when unknown
  double s_iou_diff;  ///< first source minus second
};

/// Pairs two per-segment score lists by (image, segment id). Throws
/// ParameterError when the segment sets differ.
std::vector<ScatterRow> segment_scatter(const std::vector<SegmentScore>& first,
                                        const std::vector<SegmentScore>& second);

std::string report_to_json(const MetricsReport& report);
std::string segments_to_csv(const MetricsReport& report, const std::vector<std::string>& sources);
std::string scatter_to_csv(const std::vector<ScatterRow>& rows);

}  // namespace eedkit
