#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "pvd/dataset.hpp"
#include "pvd/types.hpp"

namespace pvd {

using Rng = std::mt19937_64;

struct GridSpec {
    RangeSpec range;
    double dx = 0.1, dy = 0.1;
    int width = 608, height = 608;  // width covers x, height covers y

    void validate() const;  // W*dx must match the x extent, likewise y
};

struct BEVMap {
    int height = 0, width = 0;
    // Channel-major: [3][height][width]; 0 = density, 1 = height, 2 = intensity.
    std::vector<double> data;
    std::vector<int> counts;  // per-cell point count

    double at(int ch, int row, int col) const {
        return data[(static_cast<size_t>(ch) * height + row) * width + col];
    }
};

struct VoxelSpec {
    RangeSpec range;
    double vx = 0.1, vy = 0.1, vz = 0.125;
    int max_voxels = 16000;
    int max_points = 12;

    int nx() const;
    int ny() const;
    int nz() const;
};

struct VoxelSet {
    int num_voxels = 0;        // used voxels (<= max_voxels)
    int max_points = 0;        // N
    std::vector<double> features;  // [10][num_voxels][max_points], padded zeros
    std::vector<int> ix, iy, iz;   // grid coordinates per voxel
    std::vector<int> counts;       // real points per voxel
    int overflow_dropped = 0;      // voxels beyond the cap

    double feat(int d, int v, int n) const {
        return features[(static_cast<size_t>(d) * num_voxels + v) * max_points + n];
    }
};

struct AugmentParams {
    int samples_per_class = 15;
    double box_rot_min = -M_PI / 4.0, box_rot_max = M_PI / 4.0;
    double box_trans_min = 0.0, box_trans_max = 0.5;
    double scale_min = 0.95, scale_max = 1.05;
    double flip_prob = 0.5;
};

PointCloud filter_range(const PointCloud& cloud, const RangeSpec& range);

BEVMap encode_bev_map(const PointCloud& cloud, const GridSpec& grid);

VoxelSet voxelize(const PointCloud& cloud, const VoxelSpec& spec, Rng& rng);

void augment_scene(PointCloud& cloud, FrameAnnotation& ann, const GTDatabase& gtdb,
                   const AugmentParams& params, Rng& rng);

// 8-bit RGB raster of a BEV map (channel * 255, rounded), PPM format.
void write_bev_ppm(const BEVMap& map, const std::string& path);

}  // namespace pvd
