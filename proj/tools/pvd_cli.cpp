// Command-line front end: preprocessing, toy training, evaluation, gradient
// diagnostics, and inference over a KITTI-layout dataset.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pvd/config.hpp"
#include "pvd/diagnostics.hpp"
#include "pvd/model.hpp"

namespace fs = std::filesystem;
using namespace pvd;

namespace {

struct CommonArgs {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string frames_arg;
    std::string out;
    std::string checkpoint;
    std::string split = "val";
};

RunConfig load_run_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? RunConfig::toy_default()
                                             : load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    cfg.validate();
    return cfg;
}

// `--frames` takes a comma-separated id list or a path to a file with one
// id per line.
std::vector<std::string> parse_frames(const std::string& arg) {
    std::vector<std::string> ids;
    if (arg.empty()) return ids;
    if (fs::exists(arg) && fs::is_regular_file(arg)) {
        std::ifstream in(arg);
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
                line.pop_back();
            if (!line.empty()) ids.push_back(line);
        }
        return ids;
    }
    size_t start = 0;
    while (start <= arg.size()) {
        const size_t comma = arg.find(',', start);
        const std::string id = arg.substr(
            start, comma == std::string::npos ? std::string::npos
                                              : comma - start);
        if (!id.empty()) ids.push_back(id);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return ids;
}

std::string frame_path(const RunConfig& cfg, const std::string& sub,
                       const std::string& id, const std::string& ext) {
    return cfg.data.root + "/" + sub + "/" + id + ext;
}

uint64_t config_hash(const RunConfig& cfg) {
    return std::hash<std::string>{}(config_to_json_text(cfg));
}

uint64_t frame_seed(const RunConfig& cfg, const std::string& id) {
    return cfg.seed ^ (0x9e3779b97f4a7c15ULL * std::hash<std::string>{}(id));
}

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void write_vec(std::ofstream& out, const std::vector<T>& v) {
    const uint64_t n = v.size();
    write_pod(out, n);
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(n * sizeof(T)));
}

void write_bev_cache(const std::string& path, const BEVMap& map,
                     uint64_t cfg_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write("PVDBEV1\n", 8);
    write_pod(out, cfg_hash);
    write_pod(out, static_cast<int32_t>(map.height));
    write_pod(out, static_cast<int32_t>(map.width));
    write_vec(out, map.data);
    write_vec(out, map.counts);
}

void write_vox_cache(const std::string& path, const VoxelSet& set,
                     uint64_t cfg_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write("PVDVOX1\n", 8);
    write_pod(out, cfg_hash);
    write_pod(out, static_cast<int32_t>(set.num_voxels));
    write_pod(out, static_cast<int32_t>(set.max_points));
    write_pod(out, static_cast<int32_t>(set.overflow_dropped));
    write_vec(out, set.features);
    write_vec(out, set.ix);
    write_vec(out, set.iy);
    write_vec(out, set.iz);
    write_vec(out, set.counts);
}

int cmd_preprocess(const CommonArgs& args) {
    const RunConfig cfg = load_run_config(args);
    const auto ids = parse_frames(args.frames_arg);
    const std::string out_dir =
        args.out.empty() ? cfg.data.cache_dir : args.out;
    if (ids.empty()) return 0;
    if (out_dir.empty())
        throw std::runtime_error("no output directory (--out or data.cache_dir)");
    fs::create_directories(out_dir);
    const uint64_t hash = config_hash(cfg);
    for (const auto& id : ids) {
        const PointCloud cloud =
            read_velodyne_bin(frame_path(cfg, "velodyne", id, ".bin"));
        const PointCloud in_range = filter_range(cloud, cfg.bev.range);
        const BEVMap bev = encode_bev_map(in_range, cfg.bev);
        Rng rng(frame_seed(cfg, id));
        const VoxelSet vox = voxelize(in_range, cfg.voxel, rng);
        write_bev_cache(out_dir + "/" + id + ".bev.bin", bev, hash);
        write_vox_cache(out_dir + "/" + id + ".vox.bin", vox, hash);
    }
    return 0;
}

int cmd_render_bev(const CommonArgs& args) {
    const RunConfig cfg = load_run_config(args);
    const auto ids = parse_frames(args.frames_arg);
    if (ids.size() != 1)
        throw std::runtime_error("render-bev needs exactly one frame id");
    if (args.out.empty()) throw std::runtime_error("render-bev needs --out");
    const PointCloud cloud =
        read_velodyne_bin(frame_path(cfg, "velodyne", ids[0], ".bin"));
    const BEVMap bev = encode_bev_map(filter_range(cloud, cfg.bev.range), cfg.bev);
    write_bev_ppm(bev, args.out);
    return 0;
}

int cmd_build_gtdb(const CommonArgs& args) {
    const RunConfig cfg = load_run_config(args);
    const auto ids = parse_frames(args.frames_arg);
    const std::string out_dir = args.out.empty() ? cfg.data.gtdb_dir : args.out;
    if (out_dir.empty())
        throw std::runtime_error("no output directory (--out or data.gtdb_dir)");
    std::vector<PointCloud> clouds;
    std::vector<FrameAnnotation> anns;
    clouds.reserve(ids.size());
    anns.reserve(ids.size());
    for (const auto& id : ids) {
        clouds.push_back(
            read_velodyne_bin(frame_path(cfg, "velodyne", id, ".bin")));
        const Calib calib =
            read_kitti_calib(frame_path(cfg, "calib", id, ".txt"));
        anns.push_back(
            read_kitti_labels(frame_path(cfg, "label_2", id, ".txt"), calib));
    }
    std::vector<std::pair<const PointCloud*, const FrameAnnotation*>> frames;
    for (size_t i = 0; i < ids.size(); ++i)
        frames.push_back({&clouds[i], &anns[i]});
    const GTDatabase db = build_gt_database(frames);
    fs::create_directories(out_dir);
    save_gt_database(db, out_dir);
    return 0;
}

int cmd_train_toy(const CommonArgs& args, int steps_override) {
    const RunConfig cfg = load_run_config(args);
    const int steps = steps_override >= 0 ? steps_override : cfg.optim.steps;
    if (args.out.empty()) throw std::runtime_error("train-toy needs --out");
    fs::create_directories(args.out);

    PVSSD model = PVSSD::build(cfg);
    ParamStore params;
    Rng init_rng(cfg.seed);
    model.init(params, init_rng);

    std::vector<ToyScene> scenes;
    Rng scene_rng(cfg.seed + 1);
    for (int i = 0; i < 8; ++i)
        scenes.push_back(make_toy_scene(cfg, 1 + i % 3, scene_rng));

    std::ofstream log(args.out + "/loss.log");
    if (!log) throw std::runtime_error("cannot write " + args.out + "/loss.log");
    char line[256];
    auto on_step = [&](const TrainLogEntry& e) {
        std::snprintf(line, sizeof(line), "%d %.17g %.17g %.17g %.17g",
                      e.step, e.loc, e.cls, e.dir, e.total);
        log << line << "\n";
        std::cout << line << "\n";
    };
    if (steps > 0) train_toy(model, params, scenes, steps, cfg.seed, on_step);
    params.save(args.out + "/checkpoint");
    return 0;
}

std::vector<std::string> class_names(const RunConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& c : cfg.head.classes) names.push_back(c.name);
    return names;
}

std::vector<std::string> split_frames(const RunConfig& cfg,
                                      const CommonArgs& args) {
    if (!args.frames_arg.empty()) return parse_frames(args.frames_arg);
    const std::string list = cfg.data.root + "/" + args.split + ".txt";
    if (!fs::exists(list))
        throw std::runtime_error("no --frames given and " + list + " not found");
    return parse_frames(list);
}

int cmd_eval(const CommonArgs& args) {
    const RunConfig cfg = load_run_config(args);
    if (args.checkpoint.empty()) throw std::runtime_error("eval needs --checkpoint");
    const auto ids = split_frames(cfg, args);

    PVSSD model = PVSSD::build(cfg);
    ParamStore params;
    params.load(args.checkpoint);

    std::vector<FrameAnnotation> anns(ids.size());
    std::vector<EvalFrame> frames(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) {
        const PointCloud cloud =
            read_velodyne_bin(frame_path(cfg, "velodyne", ids[i], ".bin"));
        const Calib calib =
            read_kitti_calib(frame_path(cfg, "calib", ids[i], ".txt"));
        anns[i] = read_kitti_labels(frame_path(cfg, "label_2", ids[i], ".txt"),
                                    calib);
        Rng rng(frame_seed(cfg, ids[i]));
        frames[i].dets = model.infer(params, cloud, rng);
        frames[i].ann = &anns[i];
    }
    EvalConfig ecfg;
    const APReport report = evaluate(frames, class_names(cfg), ecfg);
    std::cout << report.table();
    if (!args.out.empty()) {
        std::ofstream out(args.out);
        if (!out) throw std::runtime_error("cannot write " + args.out);
        out << report.keyvalues();
    }
    return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
    const RunConfig cfg = load_run_config(args);
    const auto checks = run_block_grad_checks(cfg.seed);
    bool ok = true;
    for (const auto& c : checks) {
        std::printf("%-18s %.3e\n", c.name.c_str(), c.max_rel_err);
        if (!(c.max_rel_err < 1e-4)) ok = false;
    }
    if (!ok) std::cerr << "gradcheck: at least one block exceeded 1e-4\n";
    return ok ? 0 : 1;
}

int cmd_infer(const CommonArgs& args) {
    const RunConfig cfg = load_run_config(args);
    if (args.checkpoint.empty())
        throw std::runtime_error("infer needs --checkpoint");
    if (args.out.empty()) throw std::runtime_error("infer needs --out");
    const auto ids = parse_frames(args.frames_arg);
    fs::create_directories(args.out);

    PVSSD model = PVSSD::build(cfg);
    ParamStore params;
    params.load(args.checkpoint);
    const auto names = class_names(cfg);
    for (const auto& id : ids) {
        const PointCloud cloud =
            read_velodyne_bin(frame_path(cfg, "velodyne", id, ".bin"));
        const Calib calib =
            read_kitti_calib(frame_path(cfg, "calib", id, ".txt"));
        Rng rng(frame_seed(cfg, id));
        const auto dets = model.infer(params, cloud, rng);
        write_kitti_results(args.out + "/" + id + ".txt", dets, names, calib);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LiDAR 3D detection pipeline"};
    app.require_subcommand(1);

    CommonArgs args;
    int steps_override = -1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "configuration file");
        sub->add_option("--seed", args.seed, "override the config seed")
            ->each([&](const std::string&) { args.seed_set = true; });
        sub->add_option("--frames", args.frames_arg,
                        "comma-separated frame ids or a list file");
        sub->add_option("--out", args.out, "output path");
        sub->add_option("--checkpoint", args.checkpoint, "checkpoint prefix");
        sub->add_option("--split", args.split, "dataset split")
            ->check(CLI::IsMember({"train", "val"}));
        return sub;
    };

    auto* preprocess = add_common(
        app.add_subcommand("preprocess", "cache BEV maps and voxel sets"));
    auto* render = add_common(
        app.add_subcommand("render-bev", "write a BEV map as a PPM image"));
    auto* gtdb = add_common(
        app.add_subcommand("build-gtdb", "build the ground-truth database"));
    auto* train = add_common(
        app.add_subcommand("train-toy", "train on synthetic scenes"));
    train->add_option("--steps", steps_override, "override optim.steps");
    auto* evalc =
        add_common(app.add_subcommand("eval", "evaluate a checkpoint"));
    auto* gradcheck = add_common(app.add_subcommand(
        "gradcheck", "finite-difference checks for every block"));
    auto* infer = add_common(
        app.add_subcommand("infer", "write KITTI result files"));

    CLI11_PARSE(app, argc, argv);

    try {
        if (preprocess->parsed()) return cmd_preprocess(args);
        if (render->parsed()) return cmd_render_bev(args);
        if (gtdb->parsed()) return cmd_build_gtdb(args);
        if (train->parsed()) return cmd_train_toy(args, steps_override);
        if (evalc->parsed()) return cmd_eval(args);
        if (gradcheck->parsed()) return cmd_gradcheck(args);
        if (infer->parsed()) return cmd_infer(args);
    } catch (const std::exception& e) {
        std::cerr << "pvd_cli: " << app.get_subcommands().front()->get_name()
                  << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}
