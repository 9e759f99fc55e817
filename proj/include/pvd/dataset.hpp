#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvd/types.hpp"

namespace pvd {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Row-major 4x4 homogeneous transform.
struct Mat4 {
    std::array<double, 16> m{};

    static Mat4 identity();
    Mat4 operator*(const Mat4& o) const;
    std::array<double, 3> apply(double x, double y, double z) const;
    Mat4 inverse() const;
};

struct Calib {
    Mat4 velo_to_cam = Mat4::identity();  // Tr_velo_to_cam as 4x4
    Mat4 rect = Mat4::identity();         // R0_rect as 4x4

    // Rectified-camera-frame point to LiDAR frame.
    std::array<double, 3> cam_to_lidar(double x, double y, double z) const;
    std::array<double, 3> lidar_to_cam(double x, double y, double z) const;
};

struct ObjectLabel {
    std::string type;
    double truncation = 0.0;
    int occlusion = 0;
    double alpha = 0.0;
    std::array<double, 4> bbox{};  // image-plane box, used for difficulty only
    Box3D box;                     // LiDAR frame
    bool ignorable = false;        // classes outside {Car, Cyclist}
};

struct FrameAnnotation {
    std::string frame_id;
    std::vector<ObjectLabel> objects;
};

struct ReadStats {
    size_t dropped_nonfinite = 0;
};

PointCloud read_velodyne_bin(const std::string& path, ReadStats* stats = nullptr);
void write_velodyne_bin(const std::string& path, const PointCloud& cloud);

Calib read_kitti_calib(const std::string& path);
FrameAnnotation read_kitti_labels(const std::string& path, const Calib& calib);

// KITTI result-file row set for one frame.
void write_kitti_results(const std::string& path,
                         const std::vector<Detection>& dets,
                         const std::vector<std::string>& class_names,
                         const Calib& calib);
std::vector<Detection> read_kitti_results(const std::string& path,
                                          const std::vector<std::string>& class_names,
                                          const Calib& calib);

struct GTEntry {
    std::string cls;
    Box3D box;
    PointCloud points;
    bool empty = false;  // zero in-box points; augmentation skips it
};

struct GTDatabase {
    std::vector<GTEntry> entries;
    std::map<std::string, std::vector<int>> by_class;

    void rebuild_index();
};

GTDatabase build_gt_database(
    const std::vector<std::pair<const PointCloud*, const FrameAnnotation*>>& frames);

void save_gt_database(const GTDatabase& db, const std::string& dir);
GTDatabase load_gt_database(const std::string& dir);

}  // namespace pvd
