#include "pvd/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "pvd/geometry.hpp"

namespace pvd {

void GridSpec::validate() const {
    const double ex = range.x_max - range.x_min;
    const double ey = range.y_max - range.y_min;
    if (std::abs(width * dx - ex) > 1e-9 || std::abs(height * dy - ey) > 1e-9) {
        throw std::invalid_argument("grid resolution does not tile the range");
    }
}

int VoxelSpec::nx() const {
    return static_cast<int>(std::llround((range.x_max - range.x_min) / vx));
}
int VoxelSpec::ny() const {
    return static_cast<int>(std::llround((range.y_max - range.y_min) / vy));
}
int VoxelSpec::nz() const {
    return static_cast<int>(std::llround((range.z_max - range.z_min) / vz));
}

PointCloud filter_range(const PointCloud& cloud, const RangeSpec& range) {
    PointCloud out;
    out.reserve(cloud.size());
    for (const auto& p : cloud)
        if (range.contains(p.x, p.y, p.z)) out.push_back(p);
    return out;
}

namespace {

int cell_index(double v, double lo, double step, int n) {
    int i = static_cast<int>(std::floor((v - lo) / step));
    if (i < 0) i = 0;
    if (i >= n) i = n - 1;  // max boundary clamps to the last cell
    return i;
}

}  // namespace

BEVMap encode_bev_map(const PointCloud& cloud, const GridSpec& grid) {
    grid.validate();
    BEVMap map;
    map.height = grid.height;
    map.width = grid.width;
    map.data.assign(static_cast<size_t>(3) * grid.height * grid.width, 0.0);
    map.counts.assign(static_cast<size_t>(grid.height) * grid.width, 0);
    const double z_extent = grid.range.z_max - grid.range.z_min;
    auto idx = [&](int ch, int row, int col) {
        return (static_cast<size_t>(ch) * map.height + row) * map.width + col;
    };
    for (const auto& p : cloud) {
        const int col = cell_index(p.x, grid.range.x_min, grid.dx, grid.width);
        const int row = cell_index(p.y, grid.range.y_min, grid.dy, grid.height);
        const size_t ci = static_cast<size_t>(row) * map.width + col;
        map.counts[ci] += 1;
        const double zg = (p.z - grid.range.z_min) / z_extent;
        const double zb = std::min(1.0, std::max(0.0, p.r));
        if (map.counts[ci] == 1) {
            map.data[idx(1, row, col)] = zg;
            map.data[idx(2, row, col)] = zb;
        } else {
            map.data[idx(1, row, col)] = std::max(map.data[idx(1, row, col)], zg);
            map.data[idx(2, row, col)] = std::max(map.data[idx(2, row, col)], zb);
        }
    }
    const double log64 = std::log(64.0);
    for (size_t ci = 0; ci < map.counts.size(); ++ci) {
        const int n = map.counts[ci];
        if (n > 0) map.data[ci] = std::min(1.0, std::log(n + 1.0) / log64);
    }
    return map;
}

VoxelSet voxelize(const PointCloud& cloud, const VoxelSpec& spec, Rng& rng) {
    const int nx = spec.nx(), ny = spec.ny(), nz = spec.nz();
    VoxelSet set;
    set.max_points = spec.max_points;

    std::unordered_map<int64_t, int> key_to_voxel;
    std::vector<std::vector<int>> members;  // point indices per voxel
    std::vector<int> vix, viy, viz;
    for (size_t pi = 0; pi < cloud.size(); ++pi) {
        const auto& p = cloud[pi];
        const int ix = cell_index(p.x, spec.range.x_min, spec.vx, nx);
        const int iy = cell_index(p.y, spec.range.y_min, spec.vy, ny);
        const int iz = cell_index(p.z, spec.range.z_min, spec.vz, nz);
        const int64_t key =
            (static_cast<int64_t>(iz) * ny + iy) * nx + ix;
        auto it = key_to_voxel.find(key);
        if (it == key_to_voxel.end()) {
            if (static_cast<int>(members.size()) >= spec.max_voxels) {
                key_to_voxel.emplace(key, -1);
                ++set.overflow_dropped;
                continue;
            }
            const int v = static_cast<int>(members.size());
            key_to_voxel.emplace(key, v);
            members.emplace_back();
            members.back().push_back(static_cast<int>(pi));
            vix.push_back(ix);
            viy.push_back(iy);
            viz.push_back(iz);
        } else if (it->second >= 0) {
            members[it->second].push_back(static_cast<int>(pi));
        }
    }

    const int V = static_cast<int>(vix.size());
    const int N = spec.max_points;
    set.num_voxels = V;
    set.ix = std::move(vix);
    set.iy = std::move(viy);
    set.iz = std::move(viz);
    set.counts.assign(V, 0);
    set.features.assign(static_cast<size_t>(10) * V * N, 0.0);
    auto fset = [&](int d, int v, int n, double val) {
        set.features[(static_cast<size_t>(d) * V + v) * N + n] = val;
    };
    for (int v = 0; v < V; ++v) {
        std::vector<int>& idxs = members[v];
        if (static_cast<int>(idxs.size()) > N) {
            // Seeded sample of N without replacement, original order preserved.
            std::vector<int> pool = idxs;
            for (int k = 0; k < N; ++k) {
                std::uniform_int_distribution<int> d(k, static_cast<int>(pool.size()) - 1);
                std::swap(pool[k], pool[d(rng)]);
            }
            pool.resize(N);
            std::sort(pool.begin(), pool.end());
            idxs = std::move(pool);
        }
        const int cnt = static_cast<int>(idxs.size());
        set.counts[v] = cnt;
        double cx = 0, cy = 0, cz = 0;
        for (int n = 0; n < cnt; ++n) {
            cx += cloud[idxs[n]].x;
            cy += cloud[idxs[n]].y;
            cz += cloud[idxs[n]].z;
        }
        cx /= cnt;
        cy /= cnt;
        cz /= cnt;
        for (int n = 0; n < cnt; ++n) {
            const auto& p = cloud[idxs[n]];
            fset(0, v, n, p.x);
            fset(1, v, n, p.y);
            fset(2, v, n, p.z);
            fset(3, v, n, p.r);
            fset(4, v, n, cx);
            fset(5, v, n, cy);
            fset(6, v, n, cz);
            fset(7, v, n, p.x - cx);
            fset(8, v, n, p.y - cy);
            fset(9, v, n, p.z - cz);
        }
    }
    return set;
}

namespace {

void rotate_about(double& x, double& y, double cx, double cy, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = x - cx, dy = y - cy;
    x = cx + c * dx - s * dy;
    y = cy + s * dx + c * dy;
}

}  // namespace

void augment_scene(PointCloud& cloud, FrameAnnotation& ann, const GTDatabase& gtdb,
                   const AugmentParams& params, Rng& rng) {
    // 1. Paste database samples, rejecting any BEV overlap with existing boxes.
    std::vector<Box3D> placed;
    for (const auto& o : ann.objects)
        if (!o.ignorable) placed.push_back(o.box);
    for (const std::string cls : {"Car", "Cyclist"}) {
        auto it = gtdb.by_class.find(cls);
        if (it == gtdb.by_class.end() || it->second.empty()) continue;
        std::vector<int> order = it->second;
        for (size_t k = 0; k + 1 < order.size(); ++k) {
            std::uniform_int_distribution<size_t> d(k, order.size() - 1);
            std::swap(order[k], order[d(rng)]);
        }
        int pasted = 0;
        for (int ei : order) {
            if (pasted >= params.samples_per_class) break;
            const GTEntry& e = gtdb.entries[ei];
            if (e.empty) continue;
            bool collides = false;
            for (const auto& b : placed)
                if (bev_iou(e.box, b) > 0.0) { collides = true; break; }
            if (collides) continue;
            for (const auto& p : e.points) cloud.push_back(p);
            ObjectLabel o;
            o.type = cls;
            o.box = e.box;
            o.bbox = {0, 0, 0, 50};  // synthetic image box, easy difficulty
            ann.objects.push_back(o);
            placed.push_back(e.box);
            ++pasted;
        }
    }

    // 2. Independent per-box rotation and translation; point membership is
    //    captured before any box moves.
    std::vector<std::vector<int>> box_points;
    for (const auto& o : ann.objects) {
        std::vector<int> idxs;
        if (!o.ignorable) {
            const auto mask = points_in_box(cloud, o.box);
            for (size_t i = 0; i < cloud.size(); ++i)
                if (mask[i]) idxs.push_back(static_cast<int>(i));
        }
        box_points.push_back(std::move(idxs));
    }
    for (size_t bi = 0; bi < ann.objects.size(); ++bi) {
        ObjectLabel& o = ann.objects[bi];
        if (o.ignorable) continue;
        std::uniform_real_distribution<double> rot(params.box_rot_min, params.box_rot_max);
        std::uniform_real_distribution<double> tr(params.box_trans_min, params.box_trans_max);
        const double phi = rot(rng);
        const double tx = tr(rng), ty = tr(rng), tz = tr(rng);
        for (int pi : box_points[bi]) {
            rotate_about(cloud[pi].x, cloud[pi].y, o.box.x, o.box.y, phi);
            cloud[pi].x += tx;
            cloud[pi].y += ty;
            cloud[pi].z += tz;
        }
        o.box.yaw = normalize_angle(o.box.yaw + phi);
        o.box.x += tx;
        o.box.y += ty;
        o.box.z += tz;
    }

    // 3. Mirror across the x axis.
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    if (uni(rng) < params.flip_prob) {
        for (auto& p : cloud) p.y = -p.y;
        for (auto& o : ann.objects) {
            o.box.y = -o.box.y;
            o.box.yaw = normalize_angle(-o.box.yaw);
        }
    }

    // 4. Global scale.
    std::uniform_real_distribution<double> sc(params.scale_min, params.scale_max);
    const double s = sc(rng);
    for (auto& p : cloud) {
        p.x *= s;
        p.y *= s;
        p.z *= s;
    }
    for (auto& o : ann.objects) {
        o.box.x *= s;
        o.box.y *= s;
        o.box.z *= s;
        o.box.w *= s;
        o.box.l *= s;
        o.box.h *= s;
    }
}

void write_bev_ppm(const BEVMap& map, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "P6\n" << map.width << ' ' << map.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(map.width) * 3);
    for (int r = 0; r < map.height; ++r) {
        for (int c = 0; c < map.width; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                const double v = map.at(ch, r, c);
                row[static_cast<size_t>(c) * 3 + ch] =
                    static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
    }
}

}  // namespace pvd
