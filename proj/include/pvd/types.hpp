#pragma once

#include <cmath>
#include <vector>

namespace pvd {

struct Point {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double r = 0.0;  // reflectance in [0,1]
};

using PointCloud = std::vector<Point>;

// Oriented 3D box in the LiDAR frame. yaw rotates about the vertical axis,
// normalized to [-pi, pi).
struct Box3D {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double w = 1.0;  // extent along the box y axis
    double l = 1.0;  // extent along the box x axis
    double h = 1.0;
    double yaw = 0.0;
};

struct RangeSpec {
    double x_min = 0.0, x_max = 1.0;
    double y_min = 0.0, y_max = 1.0;
    double z_min = 0.0, z_max = 1.0;

    bool contains(double x, double y, double z) const {
        return x >= x_min && x <= x_max && y >= y_min && y <= y_max &&
               z >= z_min && z <= z_max;
    }
};

// Wrap an angle into [-pi, pi).
inline double normalize_angle(double a) {
    const double two_pi = 2.0 * M_PI;
    a = std::fmod(a + M_PI, two_pi);
    if (a < 0.0) a += two_pi;
    return a - M_PI;
}

struct Detection {
    Box3D box;
    int class_id = 0;
    double score = 0.0;
};

}  // namespace pvd
