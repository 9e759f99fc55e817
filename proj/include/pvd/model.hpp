#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pvd/config.hpp"
#include "pvd/eval.hpp"
#include "pvd/optim.hpp"

namespace pvd {

// Full detector: voxel branch -> per-stage Voxel-BEV maps, BEV-map backbone
// with per-stage fusion, MSSFA neck, SSD head.
struct PVSSD {
    RunConfig cfg;
    VoxelBranch voxel;
    ProjectionBranch proj;
    MSSFANeck neck;
    SSDHead head;
    std::vector<Anchor> anchors;

    static PVSSD build(const RunConfig& cfg);
    void init(ParamStore& params, Rng& rng) const;

    struct ForwardOut {
        HeadMaps maps;
        Var neck_feat;
        std::vector<VoxelBEVOut> voxel_bevs;
        std::vector<ProjectionStageOut> stage_feats;
    };
    ForwardOut forward(Graph& g, ParamStore& params, const BEVMap& bev,
                       const VoxelSet& voxels, Rng& rng) const;

    std::vector<Detection> infer(ParamStore& params, const PointCloud& cloud,
                                 Rng& rng) const;
};

struct ToyScene {
    PointCloud cloud;
    std::vector<GTBox> gts;
};

// Synthetic scene with dense boxes of points over sparse ground clutter.
ToyScene make_toy_scene(const RunConfig& cfg, int n_boxes, Rng& rng);

struct TrainLogEntry {
    int step = 0;
    double loc = 0, cls = 0, dir = 0, total = 0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    double final_total = 0.0;
};

// Cyclic single-scene steps with Adam and an optional one-cycle schedule.
// Throws on non-finite loss. `on_step` (if set) observes every log entry.
TrainResult train_toy(const PVSSD& model, ParamStore& params,
                      const std::vector<ToyScene>& scenes, int steps,
                      uint64_t seed,
                      const std::function<void(const TrainLogEntry&)>& on_step = {});

}  // namespace pvd
