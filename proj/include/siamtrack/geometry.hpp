#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace siamtrack {

// Axis-aligned box in center/size form, pixel units. Pixel i spans [i, i+1).
struct BBox {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  double x0() const { return cx - w / 2; }
  double y0() const { return cy - h / 2; }
  double x1() const { return cx + w / 2; }
  double y1() const { return cy + h / 2; }
  double area() const { return w * h; }
  bool valid() const;

  static BBox from_corners(double x0, double y0, double x1, double y1);
  static BBox from_xywh(double x0, double y0, double w, double h);

  bool operator==(const BBox&) const = default;
};

struct RegressionDelta {
  double dx = 0;
  double dy = 0;
  double dw = 0;
  double dh = 0;
};

struct AnchorConfig {
  std::vector<double> ratios{0.33, 0.5, 1.0, 2.0, 3.0};
  std::vector<double> scales{32.0};
  int stride = 4;

  int k() const { return static_cast<int>(ratios.size() * scales.size()); }
  void validate() const;
};

// Anchors over an (H, W) response grid, flat index ((i * W) + j) * k + a.
struct AnchorSet {
  int rows = 0;
  int cols = 0;
  int k = 0;
  double origin_x = 0;
  double origin_y = 0;
  int stride = 0;
  std::vector<BBox> boxes;

  std::size_t size() const { return boxes.size(); }
  std::size_t index(int i, int j, int a) const {
    return (static_cast<std::size_t>(i) * cols + j) * k + a;
  }
  const BBox& at(int i, int j, int a) const { return boxes[index(i, j, a)]; }
};

double iou(const BBox& a, const BBox& b);

AnchorSet make_anchors(const AnchorConfig& cfg, int rows, int cols, double origin_x,
                       double origin_y);

// Origin that puts the central response cell on the patch center.
double centered_origin(int patch_size, int grid_size, int stride);

RegressionDelta encode_regression(const BBox& anchor, const BBox& gt);
BBox decode_regression(const BBox& anchor, const RegressionDelta& delta);

// Box text files: one `x0,y0,w,h` line per frame.
std::vector<BBox> read_boxes(const std::filesystem::path& path);
std::vector<BBox> parse_boxes(std::istream& in);
void write_boxes(const std::filesystem::path& path, const std::vector<BBox>& boxes);
void write_boxes(std::ostream& out, const std::vector<BBox>& boxes);

}  // namespace siamtrack
