#pragma once

#include <array>
#include <vector>

#include "pvd/types.hpp"

namespace pvd {

using Corner2D = std::array<double, 2>;

// Planar (x, y) corners of the box footprint in counter-clockwise order.
std::array<Corner2D, 4> box_corners_bev(const Box3D& box);

// Exact rotated-rectangle IoU in the ground plane. z and h are ignored.
double bev_iou(const Box3D& a, const Box3D& b);

// 3D IoU: BEV polygon intersection times vertical overlap over union volume.
double iou_3d(const Box3D& a, const Box3D& b);

// Greedy score-descending suppression. Ties on score keep the lower index.
std::vector<int> nms_bev(const std::vector<Box3D>& boxes,
                         const std::vector<double>& scores,
                         double iou_threshold);

// Boundary points count as inside.
bool point_in_box(const Point& p, const Box3D& box);
std::vector<char> points_in_box(const PointCloud& cloud, const Box3D& box);

// Shoelace area of a convex polygon (positive for CCW order).
double polygon_area(const std::vector<Corner2D>& poly);

// Sutherland-Hodgman clip of a convex polygon against another convex polygon
// given in CCW order.
std::vector<Corner2D> clip_convex(const std::vector<Corner2D>& subject,
                                  const std::vector<Corner2D>& clipper);

}  // namespace pvd
