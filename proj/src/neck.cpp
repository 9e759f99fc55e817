#include "pvd/neck.hpp"

namespace pvd {

void MSPFusion::init(ParamStore& params, Rng& rng) const {
    params.uniform(prefix + ".v1.w", {c_bev, c_vox, 1, 1}, rng);
    params.zeros(prefix + ".v1.b", {c_bev});
    params.uniform(prefix + ".c3.w", {c_bev, c_bev, 3, 3}, rng);
    params.zeros(prefix + ".c3.b", {c_bev});
    params.uniform(prefix + ".c1.w", {c_bev, c_bev, 1, 1}, rng);
    params.zeros(prefix + ".c1.b", {c_bev});
}

Var MSPFusion::forward(Graph& g, ParamStore& params, Var voxel_map,
                       Var bev_feat) const {
    const Shape& a = g.val(voxel_map).shape;
    const Shape& b = g.val(bev_feat).shape;
    if (a[1] != b[1] || a[2] != b[2])
        throw ShapeError("msp_fusion " + prefix + ": resolution mismatch " +
                         a.str() + " vs " + b.str());
    Var va = g.conv2d(voxel_map, g.param(params.at(prefix + ".v1.w")),
                      g.param(params.at(prefix + ".v1.b")), 1, 0);
    Var canvas = g.interleave2(va, bev_feat);
    Var h = g.conv2d(canvas, g.param(params.at(prefix + ".c3.w")),
                     g.param(params.at(prefix + ".c3.b")), 1, 1);
    return g.conv2d(h, g.param(params.at(prefix + ".c1.w")),
                    g.param(params.at(prefix + ".c1.b")), 1, 0);
}

void AlignStage::init(ParamStore& params, Rng& rng) const {
    int res = from_res, c = c_in, i = 0;
    while (res > to_res) {
        params.uniform(prefix + ".down" + std::to_string(i) + ".w",
                       {c, c, 3, 3}, rng);
        params.zeros(prefix + ".down" + std::to_string(i) + ".b", {c});
        res /= 2;
        ++i;
    }
    i = 0;
    while (res < to_res) {
        params.uniform(prefix + ".up" + std::to_string(i) + ".w", {c, c, 3, 3},
                       rng);
        params.zeros(prefix + ".up" + std::to_string(i) + ".b", {c});
        res *= 2;
        ++i;
    }
    if (res != to_res)
        throw ShapeError("align_stage " + prefix + ": " +
                         std::to_string(from_res) + " cannot reach " +
                         std::to_string(to_res));
    params.uniform(prefix + ".out.w", {c_out, c, 1, 1}, rng);
    params.zeros(prefix + ".out.b", {c_out});
}

Var AlignStage::forward(Graph& g, ParamStore& params, Var x) const {
    int res = from_res, i = 0;
    while (res > to_res) {
        const std::string p = prefix + ".down" + std::to_string(i);
        x = g.conv2d(x, g.param(params.at(p + ".w")),
                     g.param(params.at(p + ".b")), 2, 1);
        res /= 2;
        ++i;
    }
    i = 0;
    while (res < to_res) {
        const std::string p = prefix + ".up" + std::to_string(i);
        x = g.deconv2d(x, g.param(params.at(p + ".w")),
                       g.param(params.at(p + ".b")), 2, 1, 1);
        res *= 2;
        ++i;
    }
    return g.conv2d(x, g.param(params.at(prefix + ".out.w")),
                    g.param(params.at(prefix + ".out.b")), 1, 0);
}

void AttentionFuse::init(ParamStore& params, Rng& rng) const {
    for (int s = 0; s < sources; ++s) {
        const std::string p = prefix + ".a" + std::to_string(s);
        params.uniform(p + ".w", {1, c, 3, 3}, rng);
        params.zeros(p + ".b", {1});
    }
}

Var AttentionFuse::forward(Graph& g, ParamStore& params,
                           const std::vector<Var>& xs) const {
    if (static_cast<int>(xs.size()) != sources)
        throw ShapeError("attention_fuse: expected " + std::to_string(sources) +
                         " sources, got " + std::to_string(xs.size()));
    const Shape& s0 = g.val(xs[0]).shape;
    const int h = s0[1], w = s0[2];
    std::vector<Var> logits;
    for (int s = 0; s < sources; ++s) {
        const std::string p = prefix + ".a" + std::to_string(s);
        Var l = g.conv2d(xs[static_cast<size_t>(s)],
                         g.param(params.at(p + ".w")),
                         g.param(params.at(p + ".b")), 1, 1);
        logits.push_back(g.reshape(l, Shape{h, w}));
    }
    Var weights = g.softmax_axis0(g.stack(logits));  // (k, h, w)
    Var out;
    for (int s = 0; s < sources; ++s) {
        Var ws = g.reshape(g.slice_axis0(weights, s, 1), Shape{h, w});
        Var term = g.mul_spatial_scalar(xs[static_cast<size_t>(s)], ws);
        out = s == 0 ? term : g.add(out, term);
    }
    return out;
}

void MSSFANeck::init(ParamStore& params, Rng& rng) const {
    const int k = static_cast<int>(resolutions.size());
    for (int s = 0; s < k; ++s) {
        const std::string p = "neck.s" + std::to_string(s + 1);
        MSPFusion{p + ".msp", vox_channels[static_cast<size_t>(s)],
                  bev_channels[static_cast<size_t>(s)]}
            .init(params, rng);
        AlignStage{p + ".align", bev_channels[static_cast<size_t>(s)],
                   cfg.out_channels, 2 * resolutions[static_cast<size_t>(s)],
                   cfg.out_res}
            .init(params, rng);
    }
    AttentionFuse{"neck.att", k, cfg.out_channels}.init(params, rng);
}

Var MSSFANeck::forward(Graph& g, ParamStore& params,
                       const std::vector<VoxelBEVOut>& voxel_bevs,
                       const std::vector<ProjectionStageOut>& stage_feats) const {
    const int k = static_cast<int>(resolutions.size());
    std::vector<Var> aligned;
    for (int s = 0; s < k; ++s) {
        const std::string p = "neck.s" + std::to_string(s + 1);
        Var fused = MSPFusion{p + ".msp", vox_channels[static_cast<size_t>(s)],
                              bev_channels[static_cast<size_t>(s)]}
                        .forward(g, params, voxel_bevs[static_cast<size_t>(s)].map,
                                 stage_feats[static_cast<size_t>(s)].feat);
        aligned.push_back(
            AlignStage{p + ".align", bev_channels[static_cast<size_t>(s)],
                       cfg.out_channels, 2 * resolutions[static_cast<size_t>(s)],
                       cfg.out_res}
                .forward(g, params, fused));
    }
    return AttentionFuse{"neck.att", k, cfg.out_channels}.forward(g, params,
                                                                  aligned);
}

}  // namespace pvd
