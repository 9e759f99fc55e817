#pragma once

#include <string>
#include <vector>

#include "pvd/preprocess.hpp"
#include "pvd/tensor.hpp"
#include "pvd/voxel_branch.hpp"

namespace pvd {

// One backbone stage: (3x3 conv + layer-norm + GeLU) x 2, the first conv
// carrying the stage's stride. Stride 4 is realized as two stride-2 convs.
struct BackboneStage {
    std::string prefix;
    int c_in = 0, c_out = 0;
    int stride = 1;  // 1, 2, or 4

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, Var x) const;
};

// Channel-concatenate a stage feature with its Voxel-BEV map, then mix with
// a 1x1 and a 3x3 convolution back to the stage width.
struct FuseStage {
    std::string prefix;
    int c_bev = 0, c_vox = 0, c_out = 0;

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, Var bev_feat, Var voxel_map,
                int stage) const;
};

struct ProjectionConfig {
    // Widths for stages 0..4; strides fixed at 4,1,2,2,2.
    std::vector<int> widths = {32, 64, 128, 256, 256};
};

struct ProjectionStageOut {
    Var feat;  // post-fusion feature of stages 1..4
    int c = 0, h = 0, w = 0;
};

// BEV-map feature extractor with per-stage fusion of Voxel-BEV features.
// Stage 0 only downsamples; fusion starts at stage 1.
struct ProjectionBranch {
    ProjectionConfig cfg;
    std::vector<int> voxel_channels;  // per stage 1..4

    void init(ParamStore& params, Rng& rng) const;
    std::vector<ProjectionStageOut> forward(
        Graph& g, ParamStore& params, Var bevmap,
        const std::vector<VoxelBEVOut>& voxel_bevs) const;
};

Var bevmap_to_var(Graph& g, const BEVMap& map);

}  // namespace pvd
