#pragma once

#include <cstddef>
#include <string>

namespace iak {

enum class GeometryKind { Image, String, Vector };

// Spatial layout of one input. Positions are flattened row-major for images.
struct SpatialGeometry {
  GeometryKind kind = GeometryKind::Vector;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t length = 1;

  static SpatialGeometry image(std::size_t h, std::size_t w) { return {GeometryKind::Image, h, w, h * w}; }
  static SpatialGeometry string(std::size_t n) { return {GeometryKind::String, 1, n, n}; }
  static SpatialGeometry vector() { return {}; }

  // d_s, the flattened spatial size.
  std::size_t size() const {
    switch (kind) {
      case GeometryKind::Image: return height * width;
      case GeometryKind::String: return length;
      case GeometryKind::Vector: return 1;
    }
    return 1;
  }

  bool operator==(const SpatialGeometry& o) const {
    if (kind != o.kind) return false;
    switch (kind) {
      case GeometryKind::Image: return height == o.height && width == o.width;
      case GeometryKind::String: return length == o.length;
      case GeometryKind::Vector: return true;
    }
    return false;
  }
  bool operator!=(const SpatialGeometry& o) const { return !(*this == o); }

  std::string describe() const {
    switch (kind) {
      case GeometryKind::Image: return "image(" + std::to_string(height) + "x" + std::to_string(width) + ")";
      case GeometryKind::String: return "string(" + std::to_string(length) + ")";
      case GeometryKind::Vector: return "vector";
    }
    return "?";
  }
};

}  // namespace iak
