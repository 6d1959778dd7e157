#include "eedkit/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "eedkit/diffusion.hpp"

namespace eedkit {

namespace {

int find_root(std::vector<std::int32_t>& parent, std::int32_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

void unite(std::vector<std::int32_t>& parent, std::int32_t a, std::int32_t b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  if (a < b) std::swap(a, b);
  parent[a] = b;  // smaller index wins, so roots are first pixels in raster order
}

std::string format_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

LabelMask LabelMask::from_raster(const GrayRaster& r, ClassId ignore) {
  LabelMask m;
  m.height = r.height;
  m.width = r.width;
  m.labels = r.pixels;
  m.ignore_id = ignore;
  return m;
}

GrayRaster LabelMask::to_raster() const { return GrayRaster{height, width, labels}; }

LabelMask load_mask(const std::string& path, ClassId ignore) {
  try {
    return LabelMask::from_raster(decode_gray_png(read_file(path)), ignore);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::vector<SegmentRecord> connected_components(const LabelMask& mask) {
  const int h = mask.height;
  const int w = mask.width;
  const auto n = static_cast<std::int32_t>(mask.size());
  std::vector<std::int32_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);

  // Already-visited 8-neighbors in raster order: W, NW, N, NE.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const ClassId l = mask.at(y, x);
      if (l == mask.ignore_id) continue;
      const std::int32_t i = y * w + x;
      if (x > 0 && mask.at(y, x - 1) == l) unite(parent, i, i - 1);
      if (y > 0) {
        if (x > 0 && mask.at(y - 1, x - 1) == l) unite(parent, i, i - w - 1);
        if (mask.at(y - 1, x) == l) unite(parent, i, i - w);
        if (x + 1 < w && mask.at(y - 1, x + 1) == l) unite(parent, i, i - w + 1);
      }
    }
  }

  std::vector<SegmentRecord> segments;
  std::unordered_map<std::int32_t, std::size_t> slot;
  for (std::int32_t i = 0; i < n; ++i) {
    if (mask.labels[i] == mask.ignore_id) continue;
    const std::int32_t r = find_root(parent, i);
    auto [it, inserted] = slot.try_emplace(r, segments.size());
    if (inserted) {
      SegmentRecord s;
      s.id = static_cast<int>(segments.size()) + 1;
      s.class_id = mask.labels[i];
      segments.push_back(std::move(s));
    }
    SegmentRecord& seg = segments[it->second];
    seg.pixels.push_back(i);
    const int y = i / w;
    const int x = i % w;
    const bool on_boundary = y == 0 || x == 0 || y == h - 1 || x == w - 1 ||
                             mask.labels[i - 1] != seg.class_id ||
                             mask.labels[i + 1] != seg.class_id ||
                             mask.labels[i - w] != seg.class_id ||
                             mask.labels[i + w] != seg.class_id;
    if (on_boundary) seg.boundary.push_back(i);
  }
  return segments;
}

double boundary_visibility(const Image& img, const SegmentRecord& seg) {
  if (seg.boundary.empty()) throw ParameterError("boundary_visibility: empty boundary");
  const GradientField g = spatial_gradient(img);
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  double total = 0.0;
  for (std::int32_t p : seg.boundary) {
    if (p < 0 || static_cast<std::size_t>(p) >= plane) {
      throw ParameterError("boundary_visibility: segment outside image");
    }
    double sq = 0.0;
    for (int c = 0; c < g.channels; ++c) {
      const double gx = g.dx[c * plane + p];
      const double gy = g.dy[c * plane + p];
      sq += gx * gx + gy * gy;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(seg.boundary.size());
}

double s_iou(const LabelMask& pred, const SegmentRecord& seg) {
  const int h = pred.height;
  const int w = pred.width;
  const ClassId k = seg.class_id;
  std::vector<char> visited(pred.size(), 0);
  std::vector<std::int32_t> stack;
  std::size_t intersection = 0;
  for (std::int32_t p : seg.pixels) {
    if (static_cast<std::size_t>(p) >= pred.size()) {
      throw ParameterError("s_iou: segment outside prediction mask");
    }
    if (pred.labels[p] == k) {
      ++intersection;
      visited[p] = 1;
      stack.push_back(p);
    }
  }
  std::size_t region = stack.size();
  while (!stack.empty()) {
    const std::int32_t p = stack.back();
    stack.pop_back();
    const int y = p / w;
    const int x = p % w;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy;
        const int nx = x + dx;
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        const std::int32_t q = ny * w + nx;
        if (visited[q] || pred.labels[q] != k) continue;
        visited[q] = 1;
        ++region;
        stack.push_back(q);
      }
    }
  }
  const std::size_t uni = seg.area() + region - intersection;
  return uni == 0 ? 0.0 : static_cast<double>(intersection) / static_cast<double>(uni);
}

std::vector<ClassId> ClassSet::ids() const {
  std::vector<ClassId> out;
  for (const auto& [id, name] : classes) out.push_back(id);
  return out;
}

std::string ClassSet::name_of(ClassId id) const {
  for (const auto& [cid, name] : classes) {
    if (cid == id) return name;
  }
  return std::to_string(id);
}

bool ClassSet::contains(ClassId id) const {
  return std::any_of(classes.begin(), classes.end(), [id](const auto& c) { return c.first == id; });
}

const ClassSet& common_classes() {
  static const ClassSet set{{{0, "road"},
                             {1, "sidewalk"},
                             {2, "building"},
                             {3, "wall"},
                             {4, "pole"},
                             {5, "traffic light"},
                             {6, "traffic sign"},
                             {7, "vegetation"},
                             {8, "terrain"},
                             {9, "sky"},
                             {10, "person"},
                             {11, "car"},
                             {12, "truck"},
                             {13, "bus"}}};
  return set;
}

ClassSet parse_class_set(const std::string& text) {
  ClassSet set;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    int id = -1;
    if (!(fields >> id)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ParameterError("class set line " + std::to_string(lineno) + ": expected an id");
    }
    std::string name;
    std::getline(fields >> std::ws, name);
    while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
    if (id < 0 || id > 254 || name.empty()) {
      throw ParameterError("class set line " + std::to_string(lineno) + ": bad entry");
    }
    if (set.contains(static_cast<ClassId>(id))) {
      throw ParameterError("class set: duplicate id " + std::to_string(id));
    }
    set.classes.emplace_back(static_cast<ClassId>(id), name);
  }
  return set;
}

ClassSet load_class_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read class set '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_class_set(buf.str());
}

ConfusionMatrix::ConfusionMatrix(std::vector<ClassId> classes)
    : classes_(std::move(classes)), lookup_(256, -1) {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (lookup_[classes_[i]] != -1) throw ParameterError("duplicate class id in class list");
    lookup_[classes_[i]] = static_cast<int>(i);
  }
  counts_.assign(classes_.size() * (classes_.size() + 1), 0);
}

void ConfusionMatrix::accumulate(const LabelMask& pred, const LabelMask& gt) {
  if (!pred.same_shape(gt)) throw ParameterError("prediction and ground truth sizes differ");
  const std::size_t cols = classes_.size() + 1;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const ClassId g = gt.labels[i];
    if (g == gt.ignore_id) continue;
    const int gi = lookup_[g];
    if (gi < 0) continue;
    const int pi = lookup_[pred.labels[i]];
    const std::size_t col = pi < 0 ? classes_.size() : static_cast<std::size_t>(pi);
    ++counts_[gi * cols + col];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ParameterError("cannot merge different class lists");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::count(std::size_t gt_index, std::size_t pred_index) const {
  return counts_[gt_index * (classes_.size() + 1) + pred_index];
}

std::uint64_t ConfusionMatrix::true_positives(std::size_t k) const { return count(k, k); }

std::uint64_t ConfusionMatrix::false_positives(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t g = 0; g < classes_.size(); ++g) {
    if (g != k) s += count(g, k);
  }
  return s;
}

std::uint64_t ConfusionMatrix::false_negatives(std::size_t k) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p <= classes_.size(); ++p) {
    if (p != k) s += count(k, p);
  }
  return s;
}

MetricsReport class_iou(const ConfusionMatrix& cm, const ClassSet& names) {
  MetricsReport report;
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < cm.classes().size(); ++k) {
    ClassIou row{cm.classes()[k], names.name_of(cm.classes()[k]), cm.true_positives(k),
                 cm.false_positives(k), cm.false_negatives(k), std::nullopt};
    const std::uint64_t denom = row.tp + row.fp + row.fn;
    if (denom > 0) {
      row.iou = static_cast<double>(row.tp) / static_cast<double>(denom);
      sum += *row.iou;
      ++defined;
    } else {
      report.undefined_classes.push_back(row.class_id);
    }
    report.classes.push_back(std::move(row));
  }
  report.miou = defined ? sum / static_cast<double>(defined) : 0.0;
  return report;
}

MetricsReport class_iou(const std::vector<LabelMask>& preds, const std::vector<LabelMask>& gts,
                        const ClassSet& classes) {
  if (preds.size() != gts.size()) throw ParameterError("class_iou: mask counts differ");
  ConfusionMatrix cm(classes.ids());
  for (std::size_t i = 0; i < preds.size(); ++i) cm.accumulate(preds[i], gts[i]);
  return class_iou(cm, classes);
}

GrayRaster prediction_diff(const LabelMask& a, const LabelMask& b) {
  if (!a.same_shape(b)) throw ParameterError("prediction_diff: sizes differ");
  GrayRaster out{a.height, a.width, std::vector<std::uint8_t>(a.size())};
  for (std::size_t i = 0; i < a.size(); ++i) out.pixels[i] = a.labels[i] == b.labels[i] ? 255 : 0;
  return out;
}

double acc_rel(double acc_cs, double acc_aa) {
  if (!(acc_cs > 0.0)) throw ParameterError("acc_rel: clean accuracy must be > 0");
  return 1.0 - (acc_cs - acc_aa) / acc_cs;
}

std::vector<ScatterRow> segment_scatter(const std::vector<SegmentScore>& first,
                                        const std::vector<SegmentScore>& second) {
  if (first.size() != second.size()) throw ParameterError("segment_scatter: segment counts differ");
  std::map<std::pair<std::string, int>, const SegmentScore*> other;
  for (const auto& s : second) other[{s.image, s.segment_id}] = &s;
  std::vector<ScatterRow> rows;
  rows.reserve(first.size());
  for (const auto& s : first) {
    auto it = other.find({s.image, s.segment_id});
    if (it == other.end() || it->second->class_id != s.class_id) {
      throw ParameterError("segment_scatter: segment " + std::to_string(s.segment_id) + " of '" +
                           s.image + "' missing from second source");
    }
    rows.push_back({s.image, s.segment_id, s.class_id, s.visibility, s.s_iou - it->second->s_iou});
  }
  return rows;
}

std::string report_to_json(const MetricsReport& report) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["miou"] = report.miou;
  ordered_json classes = ordered_json::array();
  for (const auto& c : report.classes) {
    ordered_json row{{"id", c.class_id}, {"name", c.name}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    row["iou"] = c.iou ? ordered_json(*c.iou) : ordered_json(nullptr);
    classes.push_back(row);
  }
  j["classes"] = classes;
  j["undefined_classes"] = report.undefined_classes;
  j["segment_count"] = report.segments.size();
  if (report.accuracy) {
    j["accuracy"] = {{"acc_cs", report.accuracy->acc_cs},
                     {"acc_aa", report.accuracy->acc_aa},
                     {"acc_rel", report.accuracy->acc_rel}};
  }
  j["metadata"] = report.metadata;
  return j.dump(2) + "\n";
}

std::string segments_to_csv(const MetricsReport& report, const std::vector<std::string>& sources) {
  std::ostringstream out;
  out << "image,segment_id,class_id,area";
  for (const auto& s : sources) out << ",s_iou_" << s;
  out << ",visibility\n";
  for (const auto& r : report.segments) {
    out << r.image << ',' << r.segment_id << ',' << static_cast<int>(r.class_id) << ',' << r.area;
    for (double v : r.s_iou) out << ',' << format_number(v);
    out << ',';
    if (r.visibility) out << format_number(*r.visibility);
    out << '\n';
  }
  return out.str();
}

std::string scatter_to_csv(const std::vector<ScatterRow>& rows) {
  std::ostringstream out;
  out << "image,segment_id,class_id,visibility,s_iou_diff\n";
  for (const auto& r : rows) {
    out << r.image << ',' << r.segment_id << ',' << static_cast<int>(r.class_id) << ',';
    if (!std::isnan(r.visibility)) out << format_number(r.visibility);
    out << ',' << format_number(r.s_iou_diff) << '\n';
  }
  return out.str();
}

}  // namespace eedkit
