#include "siamtrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>

#include "siamtrack/error.hpp"

namespace siamtrack {

bool BBox::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && w > 0 &&
         h > 0;
}

BBox BBox::from_corners(double x0, double y0, double x1, double y1) {
  return BBox{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
}

BBox BBox::from_xywh(double x0, double y0, double w, double h) {
  return BBox{x0 + w / 2, y0 + h / 2, w, h};
}

void AnchorConfig::validate() const {
  if (ratios.empty() || scales.empty()) throw ConfigError("anchor ratios and scales must be non-empty");
  for (double r : ratios) {
    if (!(r > 0) || !std::isfinite(r)) throw ConfigError("anchor ratio must be positive");
  }
  for (double s : scales) {
    if (!(s > 0) || !std::isfinite(s)) throw ConfigError("anchor scale must be positive");
  }
  if (stride <= 0) throw ConfigError("anchor stride must be a positive integer");
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  // Areas from the same corner arithmetic, so identical boxes give exactly 1.
  const double area_a = (a.x1() - a.x0()) * (a.y1() - a.y0());
  const double area_b = (b.x1() - b.x0()) * (b.y1() - b.y0());
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

AnchorSet make_anchors(const AnchorConfig& cfg, int rows, int cols, double origin_x,
                       double origin_y) {
  cfg.validate();
  if (rows < 1 || cols < 1) throw ShapeError("anchor grid must be at least 1x1");
  AnchorSet set;
  set.rows = rows;
  set.cols = cols;
  set.k = cfg.k();
  set.origin_x = origin_x;
  set.origin_y = origin_y;
  set.stride = cfg.stride;
  set.boxes.reserve(static_cast<std::size_t>(rows) * cols * set.k);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double cx = origin_x + static_cast<double>(cfg.stride) * j;
      const double cy = origin_y + static_cast<double>(cfg.stride) * i;
      for (double s : cfg.scales) {
        for (double r : cfg.ratios) {
          // r = h / w with w * h = s^2
          const double root = std::sqrt(r);
          set.boxes.push_back(BBox{cx, cy, s / root, s * root});
        }
      }
    }
  }
  return set;
}

double centered_origin(int patch_size, int grid_size, int stride) {
  return patch_size / 2.0 - stride * (grid_size - 1) / 2.0;
}

RegressionDelta encode_regression(const BBox& anchor, const BBox& gt) {
  return RegressionDelta{(gt.cx - anchor.cx) / anchor.w, (gt.cy - anchor.cy) / anchor.h,
                         std::log(gt.w / anchor.w), std::log(gt.h / anchor.h)};
}

BBox decode_regression(const BBox& anchor, const RegressionDelta& d) {
  if (!std::isfinite(d.dx) || !std::isfinite(d.dy) || !std::isfinite(d.dw) ||
      !std::isfinite(d.dh)) {
    throw NumericError("non-finite regression delta");
  }
  const double w = anchor.w * std::exp(d.dw);
  const double h = anchor.h * std::exp(d.dh);
  if (!std::isfinite(w) || !std::isfinite(h) || !(w > 0) || !(h > 0)) {
    throw NumericError("decoded box size overflows");
  }
  return BBox{anchor.cx + d.dx * anchor.w, anchor.cy + d.dy * anchor.h, w, h};
}

std::vector<BBox> parse_boxes(std::istream& in) {
  std::vector<BBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double x0, y0, w, h;
    if (!(ss >> x0 >> y0 >> w >> h)) {
      throw DatasetError("malformed box on line " + std::to_string(lineno));
    }
    BBox b = BBox::from_xywh(x0, y0, w, h);
    if (!b.valid()) throw DatasetError("degenerate box on line " + std::to_string(lineno));
    boxes.push_back(b);
  }
  return boxes;
}

std::vector<BBox> read_boxes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_boxes(in);
}

void write_boxes(std::ostream& out, const std::vector<BBox>& boxes) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& b : boxes) out << b.x0() << ',' << b.y0() << ',' << b.w << ',' << b.h << '\n';
}

void write_boxes(const std::filesystem::path& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_boxes(out, boxes);
}

}  // namespace siamtrack
