#pragma once

#include <string>

#include "pvd/head.hpp"
#include "pvd/neck.hpp"
#include "pvd/preprocess.hpp"
#include "pvd/projection_branch.hpp"
#include "pvd/voxel_branch.hpp"

namespace pvd {

struct OptimSettings {
    double lr = 0.003;
    double weight_decay = 0.01;
    double beta1 = 0.9;  // momentum
    double beta2 = 0.999;
    bool onecycle = true;
    double pct_start = 0.3;
    int steps = 500;
};

struct DataPaths {
    std::string root;       // KITTI layout: velodyne/, label_2/, calib/
    std::string cache_dir;  // preprocessed artifacts
    std::string gtdb_dir;   // ground-truth database
};

struct RunConfig {
    uint64_t seed = 1;
    DataPaths data;
    GridSpec bev;
    VoxelSpec voxel;
    AugmentParams augment;
    VoxelBranchConfig voxel_branch;
    ProjectionConfig projection;
    NeckConfig neck;
    HeadConfig head;
    OptimSettings optim;

    // Full-scale KITTI settings.
    static RunConfig kitti_default();
    // Desk-scale settings small enough to train on one core.
    static RunConfig toy_default();

    void validate() const;
};

// Structured-text (JSON) serialization; load rejects unknown keys.
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& cfg);
RunConfig load_config(const std::string& path);
void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace pvd
