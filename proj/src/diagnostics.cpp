#include "pvd/diagnostics.hpp"

#include <random>

#include "pvd/head.hpp"
#include "pvd/neck.hpp"
#include "pvd/projection_branch.hpp"
#include "pvd/voxel_branch.hpp"

namespace pvd {
namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : t.data) v = u(rng);
    return t;
}

// Zero the padded point slots of a (c, v, n) tensor.
void zero_pad(Tensor& t, const std::vector<int>& counts) {
    const int c = t.shape[0], v = t.shape[1], n = t.shape[2];
    for (int ci = 0; ci < c; ++ci)
        for (int vi = 0; vi < v; ++vi)
            for (int ni = counts[static_cast<size_t>(vi)]; ni < n; ++ni)
                t[(static_cast<size_t>(ci) * v + vi) * n + ni] = 0.0;
}

}  // namespace

std::vector<BlockCheck> run_block_grad_checks(uint64_t seed) {
    std::vector<BlockCheck> out;
    const int V = 2, N = 4;
    const std::vector<int> counts{3, 2};

    {
        Rng rng(seed + 1);
        ParamStore params;
        VFE vfe{"vfe", 10, 8};
        vfe.init(params, rng);
        Tensor x = random_tensor({10, V, N}, rng);
        zero_pad(x, counts);
        auto build = [&](Graph& g) {
            return g.sum(vfe.forward(g, params, g.constant(x), counts, N));
        };
        out.push_back({"vfe", grad_check(build, params, params.names())});
    }
    {
        Rng rng(seed + 2);
        ParamStore params;
        PFW pfw{"pfw", 8};
        pfw.init(params, rng);
        Tensor x = random_tensor({8, V, N}, rng);
        zero_pad(x, counts);
        auto build = [&](Graph& g) {
            return g.sum(pfw.forward(g, params, g.constant(x), counts));
        };
        out.push_back({"pfw", grad_check(build, params, params.names())});
    }
    {
        // The weights sum to one per voxel, so probe them against a fixed
        // random projection to get a non-degenerate scalar.
        Rng rng(seed + 3);
        ParamStore params;
        ScoreHead head{"score", 8};
        head.init(params, rng);
        Tensor x = random_tensor({8, V, N}, rng);
        zero_pad(x, counts);
        Tensor probe = random_tensor({V, N}, rng);
        auto build = [&](Graph& g) {
            Var w = head.forward(g, params, g.constant(x), counts);
            return g.sum(g.mul(w, g.constant(probe)));
        };
        out.push_back(
            {"revox_score", grad_check(build, params, params.names())});
    }
    {
        Rng rng(seed + 4);
        ParamStore params;
        BackboneStage stage{"bb", 3, 4, 2};
        stage.init(params, rng);
        Tensor x = random_tensor({3, 8, 8}, rng);
        auto build = [&](Graph& g) {
            return g.sum(stage.forward(g, params, g.constant(x)));
        };
        out.push_back(
            {"backbone_stage", grad_check(build, params, params.names())});
    }
    {
        Rng rng(seed + 5);
        ParamStore params;
        FuseStage fuse{"fs", 4, 3, 4};
        fuse.init(params, rng);
        Tensor bev = random_tensor({4, 4, 4}, rng);
        Tensor vox = random_tensor({3, 4, 4}, rng);
        auto build = [&](Graph& g) {
            return g.sum(fuse.forward(g, params, g.constant(bev),
                                      g.constant(vox), 1));
        };
        out.push_back(
            {"fuse_stage", grad_check(build, params, params.names())});
    }
    {
        Rng rng(seed + 6);
        ParamStore params;
        MSPFusion msp{"msp", 3, 4};
        msp.init(params, rng);
        Tensor vox = random_tensor({3, 4, 4}, rng);
        Tensor bev = random_tensor({4, 4, 4}, rng);
        auto build = [&](Graph& g) {
            return g.sum(msp.forward(g, params, g.constant(vox),
                                     g.constant(bev)));
        };
        out.push_back(
            {"msp_fusion", grad_check(build, params, params.names())});
    }
    {
        Rng rng(seed + 7);
        ParamStore params;
        AlignStage align{"al", 4, 6, 8, 4};
        align.init(params, rng);
        Tensor x = random_tensor({4, 8, 8}, rng);
        auto build = [&](Graph& g) {
            return g.sum(align.forward(g, params, g.constant(x)));
        };
        out.push_back(
            {"align_stage", grad_check(build, params, params.names())});
    }
    {
        Rng rng(seed + 8);
        ParamStore params;
        AttentionFuse att{"att", 2, 4};
        att.init(params, rng);
        Tensor a = random_tensor({4, 4, 4}, rng);
        Tensor b = random_tensor({4, 4, 4}, rng);
        auto build = [&](Graph& g) {
            return g.sum(att.forward(g, params,
                                     {g.constant(a), g.constant(b)}));
        };
        out.push_back(
            {"attention_fusion", grad_check(build, params, params.names())});
    }
    {
        // Head convolutions plus each loss term, through a learnable feature.
        HeadConfig hcfg;
        hcfg.classes = {{"Car", 1.6, 3.9, 1.56, -1.0, 0.6, 0.45}};
        hcfg.grid = 4;
        hcfg.cell = 1.2;
        hcfg.x0 = 0.0;
        hcfg.y0 = 0.0;
        SSDHead head{hcfg, 4};
        const auto anchors = generate_anchors(hcfg);
        const std::vector<GTBox> gts = {{{2.0, 2.4, -1.0, 1.6, 3.9, 1.56, 0.3}, 0}};
        const auto assign = match_anchors(anchors, gts, hcfg);

        Rng rng(seed + 9);
        ParamStore params;
        head.init(params, rng);
        params.uniform("feat", {4, hcfg.grid, hcfg.grid}, rng);

        auto term = [&](const char* which) {
            return [&, which](Graph& g) {
                HeadMaps maps =
                    head.forward(g, params, g.param(params.at("feat")));
                LossBreakdown l = head.loss(g, maps, anchors, assign, gts);
                if (std::string(which) == "loc") return l.loc;
                if (std::string(which) == "cls") return l.cls;
                if (std::string(which) == "dir") return l.dir;
                return l.total;
            };
        };
        out.push_back(
            {"head", grad_check(term("total"), params, params.names())});
        out.push_back(
            {"loss_loc", grad_check(term("loc"), params, params.names())});
        out.push_back(
            {"loss_cls", grad_check(term("cls"), params, params.names())});
        out.push_back(
            {"loss_dir", grad_check(term("dir"), params, params.names())});
    }
    return out;
}

}  // namespace pvd
