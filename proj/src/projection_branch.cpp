#include "pvd/projection_branch.hpp"

namespace pvd {

namespace {

void init_conv_block(ParamStore& params, Rng& rng, const std::string& prefix,
                     int c_in, int c_out) {
    params.uniform(prefix + ".w", {c_out, c_in, 3, 3}, rng);
    params.zeros(prefix + ".b", {c_out});
    params.ones(prefix + ".ln_g", {c_out});
    params.zeros(prefix + ".ln_b", {c_out});
}

Var conv_block(Graph& g, ParamStore& params, const std::string& prefix, Var x,
               int stride) {
    Var h = g.conv2d(x, g.param(params.at(prefix + ".w")),
                     g.param(params.at(prefix + ".b")), stride, 1);
    h = g.layer_norm(h, g.param(params.at(prefix + ".ln_g")),
                     g.param(params.at(prefix + ".ln_b")));
    return g.gelu(h);
}

}  // namespace

void BackboneStage::init(ParamStore& params, Rng& rng) const {
    init_conv_block(params, rng, prefix + ".b0", c_in, c_out);
    init_conv_block(params, rng, prefix + ".b1", c_out, c_out);
}

Var BackboneStage::forward(Graph& g, ParamStore& params, Var x) const {
    if (stride == 4) {
        Var h = conv_block(g, params, prefix + ".b0", x, 2);
        return conv_block(g, params, prefix + ".b1", h, 2);
    }
    Var h = conv_block(g, params, prefix + ".b0", x, stride);
    return conv_block(g, params, prefix + ".b1", h, 1);
}

void FuseStage::init(ParamStore& params, Rng& rng) const {
    params.uniform(prefix + ".c1.w", {c_out, c_bev + c_vox, 1, 1}, rng);
    params.zeros(prefix + ".c1.b", {c_out});
    params.uniform(prefix + ".c3.w", {c_out, c_out, 3, 3}, rng);
    params.zeros(prefix + ".c3.b", {c_out});
}

Var FuseStage::forward(Graph& g, ParamStore& params, Var bev_feat,
                       Var voxel_map, int stage) const {
    const Shape& a = g.val(bev_feat).shape;
    const Shape& b = g.val(voxel_map).shape;
    if (a[1] != b[1] || a[2] != b[2])
        throw ShapeError("fuse_stage " + std::to_string(stage) +
                         ": resolution mismatch " + a.str() + " vs " + b.str());
    Var h = g.concat_axis0({bev_feat, voxel_map});
    h = g.conv2d(h, g.param(params.at(prefix + ".c1.w")),
                 g.param(params.at(prefix + ".c1.b")), 1, 0);
    return g.conv2d(h, g.param(params.at(prefix + ".c3.w")),
                    g.param(params.at(prefix + ".c3.b")), 1, 1);
}

void ProjectionBranch::init(ParamStore& params, Rng& rng) const {
    const auto& w = cfg.widths;
    BackboneStage{"proj.s0", 3, w[0], 4}.init(params, rng);
    for (int s = 1; s <= 4; ++s) {
        const int stride = s == 1 ? 1 : 2;
        BackboneStage{"proj.s" + std::to_string(s), w[static_cast<size_t>(s - 1)],
                      w[static_cast<size_t>(s)], stride}
            .init(params, rng);
        FuseStage{"proj.f" + std::to_string(s), w[static_cast<size_t>(s)],
                  voxel_channels[static_cast<size_t>(s - 1)],
                  w[static_cast<size_t>(s)]}
            .init(params, rng);
    }
}

std::vector<ProjectionStageOut> ProjectionBranch::forward(
    Graph& g, ParamStore& params, Var bevmap,
    const std::vector<VoxelBEVOut>& voxel_bevs) const {
    const auto& w = cfg.widths;
    Var x = BackboneStage{"proj.s0", 3, w[0], 4}.forward(g, params, bevmap);
    std::vector<ProjectionStageOut> outs;
    for (int s = 1; s <= 4; ++s) {
        const int stride = s == 1 ? 1 : 2;
        x = BackboneStage{"proj.s" + std::to_string(s),
                          w[static_cast<size_t>(s - 1)],
                          w[static_cast<size_t>(s)], stride}
                .forward(g, params, x);
        const auto& vb = voxel_bevs[static_cast<size_t>(s - 1)];
        x = FuseStage{"proj.f" + std::to_string(s), w[static_cast<size_t>(s)],
                      vb.c, w[static_cast<size_t>(s)]}
                .forward(g, params, x, vb.map, s);
        const Shape& sh = g.val(x).shape;
        outs.push_back({x, sh[0], sh[1], sh[2]});
    }
    return outs;
}

Var bevmap_to_var(Graph& g, const BEVMap& map) {
    return g.constant(Tensor::from({3, map.height, map.width}, map.data));
}

}  // namespace pvd
