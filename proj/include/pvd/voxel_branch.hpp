#pragma once

#include <string>
#include <vector>

#include "pvd/preprocess.hpp"
#include "pvd/tensor.hpp"
#include "pvd/types.hpp"

namespace pvd {

// Point features living on the tape, plus the bookkeeping needed to keep
// re-voxelizing them: grid coordinates, real counts, and the raw points that
// back every slot (padded slots hold zeros and are ignored via counts).
struct PointSlots {
    Var feat;  // (c, v, n)
    int c = 0, v = 0, n = 0;
    std::vector<int> ix, iy, iz;
    std::vector<int> counts;
    std::vector<Point> raw;  // size v*n, row-major (v, n)
    int nx = 0, ny = 0, nz = 0;
    double vx = 0, vy = 0, vz = 0;
    double x0 = 0, y0 = 0, z0 = 0;
};

PointSlots slots_from_voxelset(Graph& g, const VoxelSet& set, const VoxelSpec& spec);

// Per-point transform to c_out/2 channels, concatenated with the voxel's
// masked max-pool broadcast over its points.
struct VFE {
    std::string prefix;
    int c_in = 0, c_out = 0;  // c_out even

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, Var x,
                const std::vector<int>& counts, int n) const;
};

// Point-wise feature weighting: two linears down to one logit per point,
// softmax over the voxel's real points, features scaled by their weight.
struct PFW {
    std::string prefix;
    int c = 0;

    void init(ParamStore& params, Rng& rng) const;
    Var weights(Graph& g, ParamStore& params, Var x,
                const std::vector<int>& counts) const;  // (v, n)
    Var forward(Graph& g, ParamStore& params, Var x,
                const std::vector<int>& counts) const;
};

// VFE -> fully-connected block (linear + GeLU + layer-norm) -> PFW.
struct SVFE {
    std::string prefix;
    int c_in = 0, c_out = 0;

    VFE vfe() const { return {prefix + ".vfe", c_in, c_out}; }
    PFW pfw() const { return {prefix + ".pfw", c_out}; }

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, Var x,
                const std::vector<int>& counts, int n) const;
};

// Scoring head for re-voxelization: three linears C -> C/2 -> C/4 -> 1,
// then softmax over each voxel's real points.
struct ScoreHead {
    std::string prefix;
    int c = 0;

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, Var x,
                const std::vector<int>& counts) const;  // (v, n)
};

struct RevoxPlan {
    int f_xy = 2;        // planar merge factor
    int f_z = 2;         // depth merge factor
    int k_points = 12;   // points kept per coarse voxel
    double oversample = 2.0;
};

// Points kept per fine voxel before the merge, clamped to [1, n].
int keep_per_voxel(const RevoxPlan& plan, int n);

// Top-k indices (descending weight, ties by lower index) for one voxel row.
std::vector<int> topk_indices(const std::vector<double>& w, int count, int k);

// Merge fine voxels into f_xy x f_xy x f_z blocks keeping the top-weighted
// points, subsample to k_points, and re-encode geometry against the coarse
// voxel. Output features = 10 geometric dims concatenated with the weighted
// input features; gradient reaches the scorer through the weights only.
PointSlots revoxelize(Graph& g, const PointSlots& in, Var weights,
                      const RevoxPlan& plan, Rng& rng);

// Masked max-pool per voxel, scatter to a dense (C*D, H, W) map, then
// 1x1 and 3x3 convolutions down to c_out channels.
struct VoxelBEVConv {
    std::string prefix;
    int c_in = 0;   // channels per voxel before the depth fold
    int depth = 0;  // D
    int c_out = 0;

    void init(ParamStore& params, Rng& rng) const;
    Var forward(Graph& g, ParamStore& params, const PointSlots& in) const;
};

struct VoxelBEVOut {
    Var map;  // (c, h, w)
    int c = 0, h = 0, w = 0;
    int depth = 0;  // source D'
};

struct VoxelStageConfig {
    int width = 0;         // SVFE output channels at this stage
    RevoxPlan revox;       // merge into this stage's resolution
    int bev_channels = 0;  // Voxel-BEV output channels
};

struct VoxelBranchConfig {
    int stage0_width = 32;
    int nz0 = 32;  // z bins of the input voxel grid; fixes each stage's D'
    std::vector<VoxelStageConfig> stages;  // stages 1..4

    std::vector<int> stage_depths() const;

    static VoxelBranchConfig kitti_default();
};

// Full VR-VFE stack: stage-0 SVFE on the raw voxels, then per stage a
// re-voxelization (scored on the previous features) followed by an SVFE and
// a Voxel-BEV projection.
struct VoxelBranch {
    VoxelBranchConfig cfg;

    void init(ParamStore& params, Rng& rng) const;
    std::vector<VoxelBEVOut> forward(Graph& g, ParamStore& params,
                                     const VoxelSet& set, const VoxelSpec& spec,
                                     Rng& rng) const;
};

}  // namespace pvd
