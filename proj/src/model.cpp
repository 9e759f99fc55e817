#include "pvd/model.hpp"

#include <cmath>
#include <stdexcept>

#include "pvd/geometry.hpp"

namespace pvd {

PVSSD PVSSD::build(const RunConfig& cfg) {
    cfg.validate();
    PVSSD m;
    m.cfg = cfg;
    m.voxel.cfg = cfg.voxel_branch;
    m.proj.cfg = cfg.projection;
    for (const auto& st : cfg.voxel_branch.stages)
        m.proj.voxel_channels.push_back(st.bev_channels);

    m.neck.cfg = cfg.neck;
    int res = cfg.bev.width / 4;
    for (size_t s = 0; s < cfg.voxel_branch.stages.size(); ++s) {
        m.neck.vox_channels.push_back(
            cfg.voxel_branch.stages[s].bev_channels);
        m.neck.bev_channels.push_back(cfg.projection.widths[s + 1]);
        m.neck.resolutions.push_back(res);
        if (s + 1 < cfg.voxel_branch.stages.size()) res /= 2;
    }
    m.head.cfg = cfg.head;
    m.head.c_in = cfg.neck.out_channels;
    m.anchors = generate_anchors(cfg.head);
    return m;
}

void PVSSD::init(ParamStore& params, Rng& rng) const {
    voxel.init(params, rng);
    proj.init(params, rng);
    neck.init(params, rng);
    head.init(params, rng);
}

PVSSD::ForwardOut PVSSD::forward(Graph& g, ParamStore& params,
                                 const BEVMap& bev, const VoxelSet& voxels,
                                 Rng& rng) const {
    ForwardOut out;
    out.voxel_bevs = voxel.forward(g, params, voxels, cfg.voxel, rng);
    out.stage_feats =
        proj.forward(g, params, bevmap_to_var(g, bev), out.voxel_bevs);
    out.neck_feat = neck.forward(g, params, out.voxel_bevs, out.stage_feats);
    out.maps = head.forward(g, params, out.neck_feat);
    return out;
}

std::vector<Detection> PVSSD::infer(ParamStore& params, const PointCloud& cloud,
                                    Rng& rng) const {
    const PointCloud in_range = filter_range(cloud, cfg.bev.range);
    const BEVMap bev = encode_bev_map(in_range, cfg.bev);
    const VoxelSet voxels = voxelize(in_range, cfg.voxel, rng);
    Graph g;
    auto fwd = forward(g, params, bev, voxels, rng);
    return head.predict(g, fwd.maps, anchors);
}

ToyScene make_toy_scene(const RunConfig& cfg, int n_boxes, Rng& rng) {
    const auto& r = cfg.bev.range;
    std::uniform_real_distribution<double> ux(r.x_min + 3.0, r.x_max - 3.0);
    std::uniform_real_distribution<double> uy(r.y_min + 3.0, r.y_max - 3.0);
    std::uniform_real_distribution<double> uyaw(-M_PI, std::nextafter(M_PI, 0.0));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    const auto& car = cfg.head.classes[0];
    ToyScene scene;
    int guard = 0;
    while (static_cast<int>(scene.gts.size()) < n_boxes && guard++ < 200) {
        Box3D b{ux(rng), uy(rng), car.z, car.w, car.l, car.h, uyaw(rng)};
        bool clear = true;
        for (const auto& gt : scene.gts)
            if (bev_iou(b, gt.box) > 0.0 ||
                std::hypot(b.x - gt.box.x, b.y - gt.box.y) < 5.0)
                clear = false;
        if (clear) scene.gts.push_back({b, 0});
    }

    // Dense points inside every box so each object is clearly visible.
    for (const auto& gt : scene.gts) {
        const Box3D& b = gt.box;
        const double c = std::cos(b.yaw), s = std::sin(b.yaw);
        for (int i = 0; i < 120; ++i) {
            const double lx = (u01(rng) - 0.5) * b.l;
            const double ly = (u01(rng) - 0.5) * b.w;
            const double lz = (u01(rng) - 0.5) * b.h;
            scene.cloud.push_back({b.x + c * lx - s * ly, b.y + s * lx + c * ly,
                                   b.z + lz, 0.6 + 0.3 * u01(rng)});
        }
    }
    // Sparse ground clutter.
    std::uniform_real_distribution<double> gx(r.x_min, r.x_max),
        gy(r.y_min, r.y_max), gz(-2.0, -1.8);
    for (int i = 0; i < 150; ++i)
        scene.cloud.push_back({gx(rng), gy(rng), gz(rng), 0.1 + 0.2 * u01(rng)});
    return scene;
}

TrainResult train_toy(const PVSSD& model, ParamStore& params,
                      const std::vector<ToyScene>& scenes, int steps,
                      uint64_t seed,
                      const std::function<void(const TrainLogEntry&)>& on_step) {
    struct Prepared {
        BEVMap bev;
        VoxelSet voxels;
        TargetAssignment assign;
        const std::vector<GTBox>* gts;
    };
    std::vector<Prepared> prep;
    Rng prep_rng(seed);
    for (const auto& scene : scenes) {
        Prepared p;
        const PointCloud in_range = filter_range(scene.cloud, model.cfg.bev.range);
        p.bev = encode_bev_map(in_range, model.cfg.bev);
        p.voxels = voxelize(in_range, model.cfg.voxel, prep_rng);
        p.assign = match_anchors(model.anchors, scene.gts, model.cfg.head);
        p.gts = &scene.gts;
        prep.push_back(std::move(p));
    }

    AdamConfig acfg;
    acfg.lr = model.cfg.optim.lr;
    acfg.beta1 = model.cfg.optim.beta1;
    acfg.beta2 = model.cfg.optim.beta2;
    acfg.weight_decay = model.cfg.optim.weight_decay;
    Adam adam(acfg);
    OneCycle sched;
    sched.max_lr = model.cfg.optim.lr;
    sched.pct_start = model.cfg.optim.pct_start;
    sched.total_steps = std::max(1, steps);

    TrainResult result;
    for (int step = 0; step < steps; ++step) {
        const Prepared& p = prep[static_cast<size_t>(step) % prep.size()];
        Rng step_rng(seed ^ (0x9e3779b97f4a7c15ULL * (step + 1)));
        Graph g;
        auto fwd = model.forward(g, params, p.bev, p.voxels, step_rng);
        auto loss = model.head.loss(g, fwd.maps, model.anchors, p.assign, *p.gts);

        TrainLogEntry e;
        e.step = step;
        e.loc = g.val(loss.loc)[0];
        e.cls = g.val(loss.cls)[0];
        e.dir = g.val(loss.dir)[0];
        e.total = g.val(loss.total)[0];
        if (!std::isfinite(e.total))
            throw std::runtime_error("train: non-finite loss at step " +
                                     std::to_string(step));
        params.zero_grad();
        g.backward(loss.total);
        const double lr = model.cfg.optim.onecycle ? sched.lr_at(step)
                                                   : model.cfg.optim.lr;
        adam.step(params, lr);

        result.log.push_back(e);
        result.final_total = e.total;
        if (on_step) on_step(e);
    }
    return result;
}

}  // namespace pvd
