#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace vg {

// Dense row-major 2D array. Indexing is (u = column, v = row).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t size() const noexcept { return data_.size(); }

  bool contains(int u, int v) const noexcept {
    return u >= 0 && v >= 0 && u < width_ && v < height_;
  }

  T& at(int u, int v) { return data_[static_cast<std::size_t>(v) * width_ + u]; }
  const T& at(int u, int v) const { return data_[static_cast<std::size_t>(v) * width_ + u]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool same_shape(int w, int h) const noexcept { return w == width_ && h == height_; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const noexcept {
    return o.width() == width_ && o.height() == height_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using DepthMap = Grid<float>;      // meters; 0 = no reading
using Bitmap = Grid<std::uint8_t>;  // 0 / 1
using Rgb = std::array<std::uint8_t, 3>;
using RgbImage = Grid<Rgb>;

// Inclusive pixel rectangle.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

  bool empty() const noexcept { return x1 < x0 || y1 < y0; }
  int width() const noexcept { return empty() ? 0 : x1 - x0 + 1; }
  int height() const noexcept { return empty() ? 0 : y1 - y0 + 1; }
  long area() const noexcept { return static_cast<long>(width()) * height(); }
  bool contains(double u, double v) const noexcept {
    return !empty() && u >= x0 && u <= x1 && v >= y0 && v <= y1;
  }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

inline std::size_t count_set(const Bitmap& m) {
  return static_cast<std::size_t>(
      std::count_if(m.data().begin(), m.data().end(), [](std::uint8_t b) { return b != 0; }));
}

inline PixelRect bounding_rect(const Bitmap& m) {
  PixelRect r{m.width(), m.height(), -1, -1};
  for (int v = 0; v < m.height(); ++v)
    for (int u = 0; u < m.width(); ++u)
      if (m.at(u, v)) {
        r.x0 = std::min(r.x0, u);
        r.y0 = std::min(r.y0, v);
        r.x1 = std::max(r.x1, u);
        r.y1 = std::max(r.y1, v);
      }
  if (r.x1 < 0) return PixelRect{};
  return r;
}

// Intersection-over-union of two same-shape bitmaps; 0 when both are empty.
inline double mask_iou(const Bitmap& a, const Bitmap& b) {
  if (!a.same_shape(b)) return 0.0;
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data()[i] != 0, y = b.data()[i] != 0;
    inter += (x && y);
    uni += (x || y);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Mean pixel coordinate of the set pixels.
inline std::optional<std::array<double, 2>> mask_center(const Bitmap& m) {
  double su = 0, sv = 0;
  std::size_t n = 0;
  for (int v = 0; v < m.height(); ++v)
    for (int u = 0; u < m.width(); ++u)
      if (m.at(u, v)) {
        su += u;
        sv += v;
        ++n;
      }
  if (n == 0) return std::nullopt;
  return std::array<double, 2>{su / n, sv / n};
}

}  // namespace vg
