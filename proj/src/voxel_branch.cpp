#include "pvd/voxel_branch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace pvd {

PointSlots slots_from_voxelset(Graph& g, const VoxelSet& set, const VoxelSpec& spec) {
    PointSlots s;
    s.c = 10;
    s.v = set.num_voxels;
    s.n = set.max_points;
    s.ix = set.ix;
    s.iy = set.iy;
    s.iz = set.iz;
    s.counts = set.counts;
    s.nx = spec.nx();
    s.ny = spec.ny();
    s.nz = spec.nz();
    s.vx = spec.vx;
    s.vy = spec.vy;
    s.vz = spec.vz;
    s.x0 = spec.range.x_min;
    s.y0 = spec.range.y_min;
    s.z0 = spec.range.z_min;
    s.feat = g.constant(Tensor::from({10, s.v, s.n}, set.features));
    s.raw.assign(static_cast<size_t>(s.v) * s.n, Point{});
    for (int v = 0; v < s.v; ++v)
        for (int n = 0; n < s.counts[v]; ++n)
            s.raw[static_cast<size_t>(v) * s.n + n] = {set.feat(0, v, n),
                                                       set.feat(1, v, n),
                                                       set.feat(2, v, n),
                                                       set.feat(3, v, n)};
    return s;
}

// ---------------------------------------------------------------- VFE

void VFE::init(ParamStore& params, Rng& rng) const {
    const int ch = c_out / 2;
    params.uniform(prefix + ".w", {ch, c_in}, rng);
    params.zeros(prefix + ".b", {ch});
    params.ones(prefix + ".ln_g", {ch});
    params.zeros(prefix + ".ln_b", {ch});
}

Var VFE::forward(Graph& g, ParamStore& params, Var x,
                 const std::vector<int>& counts, int n) const {
    Var h = g.linear(x, g.param(params.at(prefix + ".w")),
                     g.param(params.at(prefix + ".b")));
    h = g.gelu(h);
    h = g.layer_norm(h, g.param(params.at(prefix + ".ln_g")),
                     g.param(params.at(prefix + ".ln_b")));
    h = g.mask_points(h, counts);
    Var pooled = g.masked_max_points(h, counts);
    Var bcast = g.broadcast_points(pooled, counts, n);
    return g.mask_points(g.concat_axis0({h, bcast}), counts);
}

// ---------------------------------------------------------------- PFW

void PFW::init(ParamStore& params, Rng& rng) const {
    const int ch = std::max(1, c / 2);
    params.uniform(prefix + ".w1", {ch, c}, rng);
    params.zeros(prefix + ".b1", {ch});
    params.uniform(prefix + ".w2", {1, ch}, rng);
    params.zeros(prefix + ".b2", {1});
}

Var PFW::weights(Graph& g, ParamStore& params, Var x,
                 const std::vector<int>& counts) const {
    Var h = g.linear(x, g.param(params.at(prefix + ".w1")),
                     g.param(params.at(prefix + ".b1")));
    h = g.gelu(h);
    h = g.linear(h, g.param(params.at(prefix + ".w2")),
                 g.param(params.at(prefix + ".b2")));
    const Shape& s = g.val(x).shape;
    h = g.reshape(h, Shape{s[1], s[2]});
    return g.masked_softmax_points(h, counts);
}

Var PFW::forward(Graph& g, ParamStore& params, Var x,
                 const std::vector<int>& counts) const {
    return g.mul_points_scalar(x, weights(g, params, x, counts));
}

// ---------------------------------------------------------------- SVFE

void SVFE::init(ParamStore& params, Rng& rng) const {
    vfe().init(params, rng);
    params.uniform(prefix + ".fc.w", {c_out, c_out}, rng);
    params.zeros(prefix + ".fc.b", {c_out});
    params.ones(prefix + ".fc.ln_g", {c_out});
    params.zeros(prefix + ".fc.ln_b", {c_out});
    pfw().init(params, rng);
}

Var SVFE::forward(Graph& g, ParamStore& params, Var x,
                  const std::vector<int>& counts, int n) const {
    Var h = vfe().forward(g, params, x, counts, n);
    h = g.linear(h, g.param(params.at(prefix + ".fc.w")),
                 g.param(params.at(prefix + ".fc.b")));
    h = g.gelu(h);
    h = g.layer_norm(h, g.param(params.at(prefix + ".fc.ln_g")),
                     g.param(params.at(prefix + ".fc.ln_b")));
    h = g.mask_points(h, counts);
    return pfw().forward(g, params, h, counts);
}

// ---------------------------------------------------------------- scorer

void ScoreHead::init(ParamStore& params, Rng& rng) const {
    const int c2 = std::max(1, c / 2);
    const int c4 = std::max(1, c / 4);
    params.uniform(prefix + ".w1", {c2, c}, rng);
    params.zeros(prefix + ".b1", {c2});
    params.uniform(prefix + ".w2", {c4, c2}, rng);
    params.zeros(prefix + ".b2", {c4});
    params.uniform(prefix + ".w3", {1, c4}, rng);
    params.zeros(prefix + ".b3", {1});
}

Var ScoreHead::forward(Graph& g, ParamStore& params, Var x,
                       const std::vector<int>& counts) const {
    Var h = g.linear(x, g.param(params.at(prefix + ".w1")),
                     g.param(params.at(prefix + ".b1")));
    h = g.gelu(h);
    h = g.linear(h, g.param(params.at(prefix + ".w2")),
                 g.param(params.at(prefix + ".b2")));
    h = g.gelu(h);
    h = g.linear(h, g.param(params.at(prefix + ".w3")),
                 g.param(params.at(prefix + ".b3")));
    const Shape& s = g.val(x).shape;
    h = g.reshape(h, Shape{s[1], s[2]});
    return g.masked_softmax_points(h, counts);
}

// ---------------------------------------------------------------- revox

int keep_per_voxel(const RevoxPlan& plan, int n) {
    const int merge = plan.f_xy * plan.f_xy;
    const int k = static_cast<int>(
        std::ceil(plan.k_points * plan.oversample / merge));
    return std::clamp(k, 1, n);
}

std::vector<int> topk_indices(const std::vector<double>& w, int count, int k) {
    std::vector<int> idx(static_cast<size_t>(std::max(0, count)));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (w[a] != w[b]) return w[a] > w[b];
        return a < b;
    });
    if (static_cast<int>(idx.size()) > k) idx.resize(static_cast<size_t>(k));
    return idx;
}

PointSlots revoxelize(Graph& g, const PointSlots& in, Var weights,
                      const RevoxPlan& plan, Rng& rng) {
    const Tensor& wt = g.val(weights);
    const int f = plan.f_xy, fz = plan.f_z, K = plan.k_points;
    const int k_keep = keep_per_voxel(plan, in.n);

    PointSlots out;
    out.nx = (in.nx + f - 1) / f;
    out.ny = (in.ny + f - 1) / f;
    out.nz = (in.nz + fz - 1) / fz;
    out.vx = in.vx * f;
    out.vy = in.vy * f;
    out.vz = in.vz * fz;
    out.x0 = in.x0;
    out.y0 = in.y0;
    out.z0 = in.z0;
    out.n = K;

    // Pool the kept slots of each f x f x fz block, in fine-voxel order.
    struct Slot { int v, n; };
    std::unordered_map<int64_t, int> key_to_coarse;
    std::vector<std::vector<Slot>> pools;
    for (int v = 0; v < in.v; ++v) {
        const int cx = in.ix[v] / f, cy = in.iy[v] / f, cz = in.iz[v] / fz;
        const int64_t key = (static_cast<int64_t>(cz) * out.ny + cy) * out.nx + cx;
        auto [it, fresh] = key_to_coarse.try_emplace(
            key, static_cast<int>(pools.size()));
        if (fresh) {
            pools.emplace_back();
            out.ix.push_back(cx);
            out.iy.push_back(cy);
            out.iz.push_back(cz);
        }
        std::vector<double> row(static_cast<size_t>(in.n));
        for (int n = 0; n < in.n; ++n)
            row[static_cast<size_t>(n)] =
                wt[static_cast<size_t>(v) * in.n + n];
        for (int n : topk_indices(row, in.counts[v], k_keep))
            pools[static_cast<size_t>(it->second)].push_back({v, n});
    }

    out.v = static_cast<int>(pools.size());
    out.counts.resize(static_cast<size_t>(out.v));
    out.raw.assign(static_cast<size_t>(out.v) * K, Point{});
    std::vector<std::pair<int, int>> sel(static_cast<size_t>(out.v) * K,
                                         {-1, -1});
    Tensor geo = Tensor::zeros({10, out.v, K});
    for (int cv = 0; cv < out.v; ++cv) {
        auto& pool = pools[static_cast<size_t>(cv)];
        if (static_cast<int>(pool.size()) > K) {
            // Seeded sample of K without replacement, pool order preserved.
            std::vector<int> pick(pool.size());
            std::iota(pick.begin(), pick.end(), 0);
            for (int k = 0; k < K; ++k) {
                std::uniform_int_distribution<int> d(
                    k, static_cast<int>(pick.size()) - 1);
                std::swap(pick[static_cast<size_t>(k)],
                          pick[static_cast<size_t>(d(rng))]);
            }
            pick.resize(static_cast<size_t>(K));
            std::sort(pick.begin(), pick.end());
            std::vector<Slot> kept;
            for (int i : pick) kept.push_back(pool[static_cast<size_t>(i)]);
            pool = std::move(kept);
        }
        const int cnt = static_cast<int>(pool.size());
        out.counts[static_cast<size_t>(cv)] = cnt;
        double mx = 0, my = 0, mz = 0;
        for (int n = 0; n < cnt; ++n) {
            const Slot& s = pool[static_cast<size_t>(n)];
            const Point& p = in.raw[static_cast<size_t>(s.v) * in.n + s.n];
            mx += p.x;
            my += p.y;
            mz += p.z;
        }
        if (cnt > 0) { mx /= cnt; my /= cnt; mz /= cnt; }
        auto gset = [&](int d, int n, double val) {
            geo[(static_cast<size_t>(d) * out.v + cv) * K + n] = val;
        };
        for (int n = 0; n < cnt; ++n) {
            const Slot& s = pool[static_cast<size_t>(n)];
            const Point& p = in.raw[static_cast<size_t>(s.v) * in.n + s.n];
            sel[static_cast<size_t>(cv) * K + n] = {s.v, s.n};
            out.raw[static_cast<size_t>(cv) * K + n] = p;
            gset(0, n, p.x);
            gset(1, n, p.y);
            gset(2, n, p.z);
            gset(3, n, p.r);
            gset(4, n, mx);
            gset(5, n, my);
            gset(6, n, mz);
            gset(7, n, p.x - mx);
            gset(8, n, p.y - my);
            gset(9, n, p.z - mz);
        }
    }

    Var weighted = g.mul_points_scalar(in.feat, weights);
    Var gathered = g.gather_points(weighted, sel, out.v, K);
    out.feat = g.concat_axis0({g.constant(std::move(geo)), gathered});
    out.c = 10 + in.c;
    return out;
}

// ---------------------------------------------------------------- to BEV

void VoxelBEVConv::init(ParamStore& params, Rng& rng) const {
    params.uniform(prefix + ".c1.w", {c_out, c_in * depth, 1, 1}, rng);
    params.zeros(prefix + ".c1.b", {c_out});
    params.uniform(prefix + ".c3.w", {c_out, c_out, 3, 3}, rng);
    params.zeros(prefix + ".c3.b", {c_out});
}

Var VoxelBEVConv::forward(Graph& g, ParamStore& params,
                          const PointSlots& in) const {
    if (in.nz != depth)
        throw ShapeError("voxel_to_bev " + prefix + ": depth " +
                         std::to_string(in.nz) + " != planned " +
                         std::to_string(depth));
    Var pooled = g.masked_max_points(in.feat, in.counts);  // (C, V)
    Var dense = g.scatter_voxels(pooled, in.iz, in.iy, in.ix, in.nz, in.ny,
                                 in.nx);  // (C, D, H, W)
    dense = g.reshape(dense, Shape{c_in * in.nz, in.ny, in.nx});
    Var h = g.conv2d(dense, g.param(params.at(prefix + ".c1.w")),
                     g.param(params.at(prefix + ".c1.b")), 1, 0);
    return g.conv2d(h, g.param(params.at(prefix + ".c3.w")),
                    g.param(params.at(prefix + ".c3.b")), 1, 1);
}

// ---------------------------------------------------------------- branch

VoxelBranchConfig VoxelBranchConfig::kitti_default() {
    VoxelBranchConfig cfg;
    cfg.stage0_width = 32;
    cfg.nz0 = 32;
    cfg.stages = {
        {64, {4, 4, 32, 2.0}, 64},
        {128, {2, 2, 16, 2.0}, 128},
        {256, {2, 2, 12, 2.0}, 256},
        {256, {2, 2, 8, 2.0}, 256},
    };
    return cfg;
}

std::vector<int> VoxelBranchConfig::stage_depths() const {
    std::vector<int> d;
    int nz = nz0;
    for (const auto& st : stages) {
        nz = (nz + st.revox.f_z - 1) / st.revox.f_z;
        d.push_back(nz);
    }
    return d;
}

void VoxelBranch::init(ParamStore& params, Rng& rng) const {
    SVFE{"vox.s0", 10, cfg.stage0_width}.init(params, rng);
    const auto depths = cfg.stage_depths();
    int c_prev = cfg.stage0_width;
    for (size_t i = 0; i < cfg.stages.size(); ++i) {
        const auto& st = cfg.stages[i];
        const std::string p = "vox.s" + std::to_string(i + 1);
        ScoreHead{p + ".score", c_prev}.init(params, rng);
        SVFE{p, c_prev + 10, st.width}.init(params, rng);
        VoxelBEVConv{p + ".bev", st.width, depths[i], st.bev_channels}.init(
            params, rng);
        c_prev = st.width;
    }
}

std::vector<VoxelBEVOut> VoxelBranch::forward(Graph& g, ParamStore& params,
                                              const VoxelSet& set,
                                              const VoxelSpec& spec,
                                              Rng& rng) const {
    PointSlots cur = slots_from_voxelset(g, set, spec);
    cur.feat = SVFE{"vox.s0", 10, cfg.stage0_width}.forward(
        g, params, cur.feat, cur.counts, cur.n);
    cur.c = cfg.stage0_width;

    const auto depths = cfg.stage_depths();
    std::vector<VoxelBEVOut> outs;
    int c_prev = cfg.stage0_width;
    for (size_t i = 0; i < cfg.stages.size(); ++i) {
        const auto& st = cfg.stages[i];
        const std::string p = "vox.s" + std::to_string(i + 1);
        Var w = ScoreHead{p + ".score", c_prev}.forward(g, params, cur.feat,
                                                        cur.counts);
        cur = revoxelize(g, cur, w, st.revox, rng);
        cur.feat = SVFE{p, c_prev + 10, st.width}.forward(g, params, cur.feat,
                                                          cur.counts, cur.n);
        cur.c = st.width;
        VoxelBEVConv bev{p + ".bev", st.width, depths[i], st.bev_channels};
        outs.push_back({bev.forward(g, params, cur), st.bev_channels, cur.ny,
                        cur.nx, depths[i]});
        c_prev = st.width;
    }
    return outs;
}

}  // namespace pvd
