#pragma once

#include <string>
#include <vector>

#include "pvd/projection_branch.hpp"
#include "pvd/tensor.hpp"
#include "pvd/voxel_branch.hpp"

namespace pvd {

// Multi-scale projection fusion for one stage: the Voxel-BEV map is 1x1
// convolved to the stage's channel width, interleaved with the stage feature
// onto a doubled canvas, then mixed with a 3x3 and a 1x1 convolution.
struct MSPFusion {
    std::string prefix;
    int c_vox = 0, c_bev = 0;

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, Var voxel_map, Var bev_feat) const;
};

// Bring a feature map to the common resolution with stride-2 convolutions or
// deconvolutions, then force the channel width with a 1x1 convolution.
struct AlignStage {
    std::string prefix;
    int c_in = 0, c_out = 256;
    int from_res = 0, to_res = 152;

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, Var x) const;
};

// Per-source 3x3 conv to a 1-channel logit map, softmax across sources at
// every location, weighted sum of the sources.
struct AttentionFuse {
    std::string prefix;
    int sources = 0, c = 256;

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, const std::vector<Var>& xs) const;
};

struct NeckConfig {
    int out_channels = 256;
    int out_res = 152;
};

// MSSFA: per-stage MSP fusion + alignment, then attention fusion into a
// single (out_channels, out_res, out_res) detection feature map.
struct MSSFANeck {
    NeckConfig cfg;
    // Per stage: Voxel-BEV channels, stage feature channels, stage resolution.
    std::vector<int> vox_channels, bev_channels, resolutions;

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params,
                const std::vector<VoxelBEVOut>& voxel_bevs,
                const std::vector<ProjectionStageOut>& stage_feats) const;
};

}  // namespace pvd
