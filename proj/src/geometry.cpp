#include "pvd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pvd {

std::array<Corner2D, 4> box_corners_bev(const Box3D& box) {
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    const double hl = 0.5 * box.l;
    const double hw = 0.5 * box.w;
    // Local corners in CCW order: the box x axis carries l, the y axis w.
    const double lx[4] = {hl, -hl, -hl, hl};
    const double ly[4] = {hw, hw, -hw, -hw};
    std::array<Corner2D, 4> out;
    for (int i = 0; i < 4; ++i) {
        out[i][0] = box.x + c * lx[i] - s * ly[i];
        out[i][1] = box.y + s * lx[i] + c * ly[i];
    }
    return out;
}

double polygon_area(const std::vector<Corner2D>& poly) {
    const size_t n = poly.size();
    if (n < 3) return 0.0;
    double a = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    return 0.5 * a;
}

std::vector<Corner2D> clip_convex(const std::vector<Corner2D>& subject,
                                  const std::vector<Corner2D>& clipper) {
    std::vector<Corner2D> poly = subject;
    const size_t m = clipper.size();
    for (size_t i = 0; i < m && !poly.empty(); ++i) {
        const Corner2D& a = clipper[i];
        const Corner2D& b = clipper[(i + 1) % m];
        const double ex = b[0] - a[0];
        const double ey = b[1] - a[1];
        auto inside = [&](const Corner2D& p) {
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0]) >= 0.0;
        };
        std::vector<Corner2D> next;
        next.reserve(poly.size() + 4);
        const size_t n = poly.size();
        for (size_t j = 0; j < n; ++j) {
            const Corner2D& p = poly[j];
            const Corner2D& q = poly[(j + 1) % n];
            const bool pin = inside(p);
            const bool qin = inside(q);
            if (pin) next.push_back(p);
            if (pin != qin) {
                const double dp = ex * (p[1] - a[1]) - ey * (p[0] - a[0]);
                const double dq = ex * (q[1] - a[1]) - ey * (q[0] - a[0]);
                const double t = dp / (dp - dq);
                next.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
            }
        }
        poly = std::move(next);
    }
    return poly;
}

double bev_iou(const Box3D& a, const Box3D& b) {
    const auto ca = box_corners_bev(a);
    const auto cb = box_corners_bev(b);
    const std::vector<Corner2D> pa(ca.begin(), ca.end());
    const std::vector<Corner2D> pb(cb.begin(), cb.end());
    const double inter = std::max(0.0, polygon_area(clip_convex(pa, pb)));
    const double area_a = a.w * a.l;
    const double area_b = b.w * b.l;
    const double uni = area_a + area_b - inter;
    if (uni <= 0.0 || inter <= 0.0) return 0.0;
    return inter / uni;
}

double iou_3d(const Box3D& a, const Box3D& b) {
    const auto ca = box_corners_bev(a);
    const auto cb = box_corners_bev(b);
    const std::vector<Corner2D> pa(ca.begin(), ca.end());
    const std::vector<Corner2D> pb(cb.begin(), cb.end());
    const double inter_bev = std::max(0.0, polygon_area(clip_convex(pa, pb)));
    const double za0 = a.z - 0.5 * a.h, za1 = a.z + 0.5 * a.h;
    const double zb0 = b.z - 0.5 * b.h, zb1 = b.z + 0.5 * b.h;
    const double dz = std::min(za1, zb1) - std::max(za0, zb0);
    const double inter = inter_bev * std::max(0.0, dz);
    const double vol_a = a.w * a.l * a.h;
    const double vol_b = b.w * b.l * b.h;
    const double uni = vol_a + vol_b - inter;
    if (uni <= 0.0 || inter <= 0.0) return 0.0;
    return inter / uni;
}

std::vector<int> nms_bev(const std::vector<Box3D>& boxes,
                         const std::vector<double>& scores,
                         double iou_threshold) {
    const size_t n = boxes.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
        if (scores[i] != scores[j]) return scores[i] > scores[j];
        return i < j;
    });
    std::vector<char> suppressed(n, 0);
    std::vector<int> kept;
    for (size_t oi = 0; oi < n; ++oi) {
        const int i = order[oi];
        if (suppressed[i]) continue;
        kept.push_back(i);
        for (size_t oj = oi + 1; oj < n; ++oj) {
            const int j = order[oj];
            if (suppressed[j]) continue;
            if (bev_iou(boxes[i], boxes[j]) > iou_threshold) suppressed[j] = 1;
        }
    }
    return kept;
}

bool point_in_box(const Point& p, const Box3D& box) {
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    const double dx = p.x - box.x;
    const double dy = p.y - box.y;
    const double dz = p.z - box.z;
    // Inverse yaw rotation into the box frame.
    const double bx = c * dx + s * dy;
    const double by = -s * dx + c * dy;
    return std::abs(bx) <= 0.5 * box.l && std::abs(by) <= 0.5 * box.w &&
           std::abs(dz) <= 0.5 * box.h;
}

std::vector<char> points_in_box(const PointCloud& cloud, const Box3D& box) {
    std::vector<char> mask(cloud.size(), 0);
    for (size_t i = 0; i < cloud.size(); ++i) {
        mask[i] = point_in_box(cloud[i], box) ? 1 : 0;
    }
    return mask;
}

}  // namespace pvd
