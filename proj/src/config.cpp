#include "pvd/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace pvd {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& ctx) {
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw std::runtime_error("config: unknown key '" + key + "' in " +
                                     ctx);
}

json range_to_json(const RangeSpec& r) {
    return {{"x_min", r.x_min}, {"x_max", r.x_max}, {"y_min", r.y_min},
            {"y_max", r.y_max}, {"z_min", r.z_min}, {"z_max", r.z_max}};
}

void range_from_json(const json& j, RangeSpec& r, const std::string& ctx) {
    check_keys(j, {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max"}, ctx);
    r.x_min = j.value("x_min", r.x_min);
    r.x_max = j.value("x_max", r.x_max);
    r.y_min = j.value("y_min", r.y_min);
    r.y_max = j.value("y_max", r.y_max);
    r.z_min = j.value("z_min", r.z_min);
    r.z_max = j.value("z_max", r.z_max);
}

}  // namespace

RunConfig RunConfig::kitti_default() {
    RunConfig cfg;
    cfg.bev.range = {0.0, 60.8, -30.4, 30.4, -3.0, 1.0};
    cfg.bev.dx = cfg.bev.dy = 0.1;
    cfg.bev.width = cfg.bev.height = 608;
    cfg.voxel.range = cfg.bev.range;
    cfg.voxel.vx = cfg.voxel.vy = 0.1;
    cfg.voxel.vz = 0.125;
    cfg.voxel.max_voxels = 16000;
    cfg.voxel.max_points = 12;
    cfg.voxel_branch = VoxelBranchConfig::kitti_default();
    cfg.projection.widths = {32, 64, 128, 256, 256};
    cfg.neck = {256, 152};
    cfg.head = HeadConfig::kitti_default();
    return cfg;
}

RunConfig RunConfig::toy_default() {
    RunConfig cfg;
    cfg.bev.range = {0.0, 19.2, -9.6, 9.6, -3.0, 1.0};
    cfg.bev.dx = cfg.bev.dy = 0.3;
    cfg.bev.width = cfg.bev.height = 64;
    cfg.voxel.range = cfg.bev.range;
    cfg.voxel.vx = cfg.voxel.vy = 0.3;
    cfg.voxel.vz = 0.5;
    cfg.voxel.max_voxels = 2000;
    cfg.voxel.max_points = 8;
    cfg.voxel_branch.stage0_width = 8;
    cfg.voxel_branch.nz0 = 8;
    cfg.voxel_branch.stages = {
        {12, {4, 4, 12, 2.0}, 8},
        {16, {2, 2, 8, 2.0}, 12},
        {16, {2, 2, 6, 2.0}, 16},
        {16, {2, 2, 6, 2.0}, 16},
    };
    cfg.projection.widths = {8, 8, 12, 16, 16};
    cfg.neck = {32, 16};
    cfg.head = HeadConfig::kitti_default();
    cfg.head.grid = 16;
    cfg.head.cell = 1.2;
    cfg.head.x0 = 0.0;
    cfg.head.y0 = -9.6;
    return cfg;
}

void RunConfig::validate() const {
    bev.validate();
    if (projection.widths.size() != voxel_branch.stages.size() + 1)
        throw std::runtime_error(
            "config: projection widths must cover one more stage than the "
            "voxel branch");
    if (head.classes.empty())
        throw std::runtime_error("config: at least one anchor class required");
    if (bev.width % 4 != 0 || bev.height % 4 != 0)
        throw std::runtime_error("config: BEV grid must be divisible by 4");
}

RunConfig config_from_json_text(const std::string& text) {
    json j = json::parse(text);
    check_keys(j,
               {"seed", "data", "bev", "voxel", "augment", "voxel_branch",
                "projection", "neck", "head", "optim"},
               "root");
    RunConfig cfg = RunConfig::kitti_default();
    cfg.seed = j.value("seed", cfg.seed);

    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, {"root", "cache_dir", "gtdb_dir"}, "data");
        cfg.data.root = d.value("root", cfg.data.root);
        cfg.data.cache_dir = d.value("cache_dir", cfg.data.cache_dir);
        cfg.data.gtdb_dir = d.value("gtdb_dir", cfg.data.gtdb_dir);
    }
    if (j.contains("bev")) {
        const json& b = j["bev"];
        check_keys(b, {"range", "dx", "dy", "width", "height"}, "bev");
        if (b.contains("range")) range_from_json(b["range"], cfg.bev.range, "bev.range");
        cfg.bev.dx = b.value("dx", cfg.bev.dx);
        cfg.bev.dy = b.value("dy", cfg.bev.dy);
        cfg.bev.width = b.value("width", cfg.bev.width);
        cfg.bev.height = b.value("height", cfg.bev.height);
    }
    if (j.contains("voxel")) {
        const json& v = j["voxel"];
        check_keys(v, {"range", "vx", "vy", "vz", "max_voxels", "max_points"},
                   "voxel");
        if (v.contains("range"))
            range_from_json(v["range"], cfg.voxel.range, "voxel.range");
        cfg.voxel.vx = v.value("vx", cfg.voxel.vx);
        cfg.voxel.vy = v.value("vy", cfg.voxel.vy);
        cfg.voxel.vz = v.value("vz", cfg.voxel.vz);
        cfg.voxel.max_voxels = v.value("max_voxels", cfg.voxel.max_voxels);
        cfg.voxel.max_points = v.value("max_points", cfg.voxel.max_points);
    }
    if (j.contains("augment")) {
        const json& a = j["augment"];
        check_keys(a,
                   {"samples_per_class", "box_rot_min", "box_rot_max",
                    "box_trans_min", "box_trans_max", "scale_min", "scale_max",
                    "flip_prob"},
                   "augment");
        cfg.augment.samples_per_class =
            a.value("samples_per_class", cfg.augment.samples_per_class);
        cfg.augment.box_rot_min = a.value("box_rot_min", cfg.augment.box_rot_min);
        cfg.augment.box_rot_max = a.value("box_rot_max", cfg.augment.box_rot_max);
        cfg.augment.box_trans_min =
            a.value("box_trans_min", cfg.augment.box_trans_min);
        cfg.augment.box_trans_max =
            a.value("box_trans_max", cfg.augment.box_trans_max);
        cfg.augment.scale_min = a.value("scale_min", cfg.augment.scale_min);
        cfg.augment.scale_max = a.value("scale_max", cfg.augment.scale_max);
        cfg.augment.flip_prob = a.value("flip_prob", cfg.augment.flip_prob);
    }
    if (j.contains("voxel_branch")) {
        const json& v = j["voxel_branch"];
        check_keys(v, {"stage0_width", "nz0", "stages"}, "voxel_branch");
        cfg.voxel_branch.stage0_width =
            v.value("stage0_width", cfg.voxel_branch.stage0_width);
        cfg.voxel_branch.nz0 = v.value("nz0", cfg.voxel_branch.nz0);
        if (v.contains("stages")) {
            cfg.voxel_branch.stages.clear();
            for (const json& s : v["stages"]) {
                check_keys(s,
                           {"width", "f_xy", "f_z", "k_points", "oversample",
                            "bev_channels"},
                           "voxel_branch.stages[]");
                VoxelStageConfig st;
                st.width = s.value("width", 32);
                st.revox.f_xy = s.value("f_xy", 2);
                st.revox.f_z = s.value("f_z", 2);
                st.revox.k_points = s.value("k_points", 12);
                st.revox.oversample = s.value("oversample", 2.0);
                st.bev_channels = s.value("bev_channels", st.width);
                cfg.voxel_branch.stages.push_back(st);
            }
        }
    }
    if (j.contains("projection")) {
        const json& p = j["projection"];
        check_keys(p, {"widths"}, "projection");
        if (p.contains("widths"))
            cfg.projection.widths = p["widths"].get<std::vector<int>>();
    }
    if (j.contains("neck")) {
        const json& n = j["neck"];
        check_keys(n, {"out_channels", "out_res"}, "neck");
        cfg.neck.out_channels = n.value("out_channels", cfg.neck.out_channels);
        cfg.neck.out_res = n.value("out_res", cfg.neck.out_res);
    }
    if (j.contains("head")) {
        const json& h = j["head"];
        check_keys(h,
                   {"classes", "grid", "cell", "x0", "y0", "loss", "score_thr",
                    "nms_thr"},
                   "head");
        if (h.contains("classes")) {
            cfg.head.classes.clear();
            for (const json& c : h["classes"]) {
                check_keys(c, {"name", "w", "l", "h", "z", "pos_thr", "neg_thr"},
                           "head.classes[]");
                AnchorClassConfig ac;
                ac.name = c.value("name", std::string{});
                ac.w = c.value("w", 0.0);
                ac.l = c.value("l", 0.0);
                ac.h = c.value("h", 0.0);
                ac.z = c.value("z", 0.0);
                ac.pos_thr = c.value("pos_thr", 0.0);
                ac.neg_thr = c.value("neg_thr", 0.0);
                cfg.head.classes.push_back(ac);
            }
        }
        cfg.head.grid = h.value("grid", cfg.head.grid);
        cfg.head.cell = h.value("cell", cfg.head.cell);
        cfg.head.x0 = h.value("x0", cfg.head.x0);
        cfg.head.y0 = h.value("y0", cfg.head.y0);
        cfg.head.score_thr = h.value("score_thr", cfg.head.score_thr);
        cfg.head.nms_thr = h.value("nms_thr", cfg.head.nms_thr);
        if (h.contains("loss")) {
            const json& w = h["loss"];
            check_keys(w,
                       {"beta_loc", "beta_cls", "beta_dir", "focal_alpha",
                        "focal_gamma"},
                       "head.loss");
            cfg.head.weights.beta_loc =
                w.value("beta_loc", cfg.head.weights.beta_loc);
            cfg.head.weights.beta_cls =
                w.value("beta_cls", cfg.head.weights.beta_cls);
            cfg.head.weights.beta_dir =
                w.value("beta_dir", cfg.head.weights.beta_dir);
            cfg.head.weights.focal_alpha =
                w.value("focal_alpha", cfg.head.weights.focal_alpha);
            cfg.head.weights.focal_gamma =
                w.value("focal_gamma", cfg.head.weights.focal_gamma);
        }
    }
    if (j.contains("optim")) {
        const json& o = j["optim"];
        check_keys(o,
                   {"lr", "weight_decay", "beta1", "beta2", "onecycle",
                    "pct_start", "steps"},
                   "optim");
        cfg.optim.lr = o.value("lr", cfg.optim.lr);
        cfg.optim.weight_decay = o.value("weight_decay", cfg.optim.weight_decay);
        cfg.optim.beta1 = o.value("beta1", cfg.optim.beta1);
        cfg.optim.beta2 = o.value("beta2", cfg.optim.beta2);
        cfg.optim.onecycle = o.value("onecycle", cfg.optim.onecycle);
        cfg.optim.pct_start = o.value("pct_start", cfg.optim.pct_start);
        cfg.optim.steps = o.value("steps", cfg.optim.steps);
    }
    cfg.validate();
    return cfg;
}

std::string config_to_json_text(const RunConfig& cfg) {
    json stages = json::array();
    for (const auto& s : cfg.voxel_branch.stages)
        stages.push_back({{"width", s.width},
                          {"f_xy", s.revox.f_xy},
                          {"f_z", s.revox.f_z},
                          {"k_points", s.revox.k_points},
                          {"oversample", s.revox.oversample},
                          {"bev_channels", s.bev_channels}});
    json classes = json::array();
    for (const auto& c : cfg.head.classes)
        classes.push_back({{"name", c.name},
                           {"w", c.w},
                           {"l", c.l},
                           {"h", c.h},
                           {"z", c.z},
                           {"pos_thr", c.pos_thr},
                           {"neg_thr", c.neg_thr}});
    json j = {
        {"seed", cfg.seed},
        {"data",
         {{"root", cfg.data.root},
          {"cache_dir", cfg.data.cache_dir},
          {"gtdb_dir", cfg.data.gtdb_dir}}},
        {"bev",
         {{"range", range_to_json(cfg.bev.range)},
          {"dx", cfg.bev.dx},
          {"dy", cfg.bev.dy},
          {"width", cfg.bev.width},
          {"height", cfg.bev.height}}},
        {"voxel",
         {{"range", range_to_json(cfg.voxel.range)},
          {"vx", cfg.voxel.vx},
          {"vy", cfg.voxel.vy},
          {"vz", cfg.voxel.vz},
          {"max_voxels", cfg.voxel.max_voxels},
          {"max_points", cfg.voxel.max_points}}},
        {"augment",
         {{"samples_per_class", cfg.augment.samples_per_class},
          {"box_rot_min", cfg.augment.box_rot_min},
          {"box_rot_max", cfg.augment.box_rot_max},
          {"box_trans_min", cfg.augment.box_trans_min},
          {"box_trans_max", cfg.augment.box_trans_max},
          {"scale_min", cfg.augment.scale_min},
          {"scale_max", cfg.augment.scale_max},
          {"flip_prob", cfg.augment.flip_prob}}},
        {"voxel_branch",
         {{"stage0_width", cfg.voxel_branch.stage0_width},
          {"nz0", cfg.voxel_branch.nz0},
          {"stages", stages}}},
        {"projection", {{"widths", cfg.projection.widths}}},
        {"neck",
         {{"out_channels", cfg.neck.out_channels},
          {"out_res", cfg.neck.out_res}}},
        {"head",
         {{"classes", classes},
          {"grid", cfg.head.grid},
          {"cell", cfg.head.cell},
          {"x0", cfg.head.x0},
          {"y0", cfg.head.y0},
          {"score_thr", cfg.head.score_thr},
          {"nms_thr", cfg.head.nms_thr},
          {"loss",
           {{"beta_loc", cfg.head.weights.beta_loc},
            {"beta_cls", cfg.head.weights.beta_cls},
            {"beta_dir", cfg.head.weights.beta_dir},
            {"focal_alpha", cfg.head.weights.focal_alpha},
            {"focal_gamma", cfg.head.weights.focal_gamma}}}}},
        {"optim",
         {{"lr", cfg.optim.lr},
          {"weight_decay", cfg.optim.weight_decay},
          {"beta1", cfg.optim.beta1},
          {"beta2", cfg.optim.beta2},
          {"onecycle", cfg.optim.onecycle},
          {"pct_start", cfg.optim.pct_start},
          {"steps", cfg.optim.steps}}},
    };
    return j.dump(2) + "\n";
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    return config_from_json_text(text);
}

void save_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << config_to_json_text(cfg);
}

}  // namespace pvd
