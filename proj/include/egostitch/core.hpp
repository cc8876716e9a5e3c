#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "egostitch/errors.hpp"

namespace egostitch {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Max-abs entry of R^T R - I.
inline double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

/// Camera-to-world rigid transform: p_world = rotation * p_cam + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  Pose operator*(const Pose& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

/// Similarity transform p -> scale * rotation * p + translation.
struct Sim3 {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Sim3 identity() { return {}; }

  Sim3 inverse() const {
    Sim3 inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.scale * (inv.rotation * translation));
    return inv;
  }

  /// (*this) after rhs.
  Sim3 operator*(const Sim3& rhs) const {
    Sim3 out;
    out.scale = scale * rhs.scale;
    out.rotation = rotation * rhs.rotation;
    out.translation = scale * (rotation * rhs.translation) + translation;
    return out;
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = scale * rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

inline Vec3 apply_sim3(const Sim3& s, const Vec3& p) {
  return s.scale * (s.rotation * p) + s.translation;
}

/// Rotation composes in SO(3); the scale acts on the translational part only.
inline Pose compose_sim3_pose(const Sim3& s, const Pose& t) {
  return {s.rotation * t.rotation, s.scale * (s.rotation * t.translation) + s.translation};
}

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ValidationError("intrinsics: raster size must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
      throw ValidationError("intrinsics: principal point outside the raster");
    }
  }
};

/// Dense row-major raster, (x, y) = (column, row), row 0 at the top.
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {
    if (width < 0 || height < 0) throw ValidationError("raster: negative dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(int width, int height) const { return width_ == width && height_ == height; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

/// Strict 0/1 raster. Serialized as 0/255 bytes.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height) : bits_(width, height, 0) {}

  int width() const { return bits_.width(); }
  int height() const { return bits_.height(); }
  std::size_t size() const { return bits_.size(); }

  bool at(int x, int y) const { return bits_(x, y) != 0; }
  void set(int x, int y, bool v = true) { bits_(x, y) = v ? 1 : 0; }

  bool test(std::size_t i) const { return bits_.data()[i] != 0; }
  void set_index(std::size_t i, bool v = true) { bits_.data()[i] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.data().begin(), bits_.data().end(), std::uint8_t{1}));
  }
  bool empty() const { return count() == 0; }

  bool same_shape(const BinaryMask& o) const { return width() == o.width() && height() == o.height(); }

  BinaryMask& operator|=(const BinaryMask& o) {
    require_same_shape(o);
    auto& a = bits_.data();
    const auto& b = o.bits_.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] |= b[i];
    return *this;
  }

  friend BinaryMask operator|(BinaryMask a, const BinaryMask& b) { return a |= b; }

  friend BinaryMask operator&(const BinaryMask& a, const BinaryMask& b) {
    a.require_same_shape(b);
    BinaryMask out(a.width(), a.height());
    for (std::size_t i = 0; i < a.size(); ++i) out.set_index(i, a.test(i) && b.test(i));
    return out;
  }

  BinaryMask inverted() const {
    BinaryMask out(width(), height());
    for (std::size_t i = 0; i < size(); ++i) out.set_index(i, !test(i));
    return out;
  }

  /// Pixelwise a ⊆ b.
  bool subset_of(const BinaryMask& o) const {
    require_same_shape(o);
    for (std::size_t i = 0; i < size(); ++i) {
      if (test(i) && !o.test(i)) return false;
    }
    return true;
  }

  const std::vector<std::uint8_t>& bits() const { return bits_.data(); }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  void require_same_shape(const BinaryMask& o) const {
    if (!same_shape(o)) throw ConsistencyError("binary mask size mismatch");
  }

  Raster<std::uint8_t> bits_;
};

inline bool is_valid_depth(float z) { return std::isfinite(z) && z > 0.0f; }

struct DepthFrame {
  int frame_id = 0;
  Raster<float> depth;
  Intrinsics intrinsics;

  int width() const { return depth.width(); }
  int height() const { return depth.height(); }
  bool valid(int x, int y) const { return is_valid_depth(depth(x, y)); }

  void validate() const {
    intrinsics.validate();
    if (!depth.same_shape(intrinsics.width, intrinsics.height)) {
      throw ConsistencyError("depth raster size does not match intrinsics");
    }
  }
};

struct PointCloud {
  std::vector<Vec3> points;
  /// Either empty or one entry per point.
  std::vector<int> chunk_ids;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_chunk_ids() const { return !chunk_ids.empty(); }

  void append(const PointCloud& other) {
    const bool ids = has_chunk_ids() || other.has_chunk_ids();
    if (ids) {
      chunk_ids.resize(points.size(), -1);
      if (other.has_chunk_ids()) {
        chunk_ids.insert(chunk_ids.end(), other.chunk_ids.begin(), other.chunk_ids.end());
      } else {
        chunk_ids.insert(chunk_ids.end(), other.points.size(), -1);
      }
    }
    points.insert(points.end(), other.points.begin(), other.points.end());
  }
};

/// One temporal chunk [start, end). Chunks after the first overlap their
/// predecessor on [start, overlap_end).
struct ChunkPlan {
  int chunk_id = 0;
  int start = 0;
  int end = 0;
  int overlap_end = 0;  // == start for the first chunk

  int length() const { return end - start; }
  bool contains(int t) const { return t >= start && t < end; }
  int overlap_length() const { return overlap_end - start; }

  std::vector<int> overlap_frames() const {
    std::vector<int> out;
    for (int t = start; t < overlap_end; ++t) out.push_back(t);
    return out;
  }

  friend bool operator==(const ChunkPlan&, const ChunkPlan&) = default;
};

}  // namespace egostitch
