#include "pvd/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pvd/geometry.hpp"

namespace pvd {

Mat4 Mat4::identity() {
    Mat4 r;
    r.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    return r;
}

Mat4 Mat4::operator*(const Mat4& o) const {
    Mat4 r;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += m[i * 4 + k] * o.m[k * 4 + j];
            r.m[i * 4 + j] = s;
        }
    return r;
}

std::array<double, 3> Mat4::apply(double x, double y, double z) const {
    return {m[0] * x + m[1] * y + m[2] * z + m[3],
            m[4] * x + m[5] * y + m[6] * z + m[7],
            m[8] * x + m[9] * y + m[10] * z + m[11]};
}

Mat4 Mat4::inverse() const {
    // Gauss-Jordan with partial pivoting; transforms here are well conditioned.
    double a[4][8];
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) a[i][j] = m[i * 4 + j];
        for (int j = 0; j < 4; ++j) a[i][4 + j] = (i == j) ? 1.0 : 0.0;
    }
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (a[piv][col] == 0.0) throw FormatError("singular transform matrix");
        if (piv != col)
            for (int j = 0; j < 8; ++j) std::swap(a[piv][j], a[col][j]);
        const double d = a[col][col];
        for (int j = 0; j < 8; ++j) a[col][j] /= d;
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (int j = 0; j < 8; ++j) a[r][j] -= f * a[col][j];
        }
    }
    Mat4 out;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) out.m[i * 4 + j] = a[i][4 + j];
    return out;
}

std::array<double, 3> Calib::cam_to_lidar(double x, double y, double z) const {
    const Mat4 inv = (rect * velo_to_cam).inverse();
    return inv.apply(x, y, z);
}

std::array<double, 3> Calib::lidar_to_cam(double x, double y, double z) const {
    return (rect * velo_to_cam).apply(x, y, z);
}

PointCloud read_velodyne_bin(const std::string& path, ReadStats* stats) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw FormatError("cannot open " + path);
    const std::streamoff size = f.tellg();
    if (size % 16 != 0) {
        throw FormatError("truncated velodyne file " + path + " at byte offset " +
                          std::to_string(size - size % 16));
    }
    f.seekg(0);
    const size_t n = static_cast<size_t>(size) / 16;
    PointCloud cloud;
    cloud.reserve(n);
    size_t dropped = 0;
    std::vector<float> buf(n * 4);
    if (n > 0) f.read(reinterpret_cast<char*>(buf.data()), size);
    for (size_t i = 0; i < n; ++i) {
        const float* p = &buf[i * 4];
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]) ||
            !std::isfinite(p[3])) {
            ++dropped;
            continue;
        }
        cloud.push_back({p[0], p[1], p[2], p[3]});
    }
    if (stats) stats->dropped_nonfinite = dropped;
    return cloud;
}

void write_velodyne_bin(const std::string& path, const PointCloud& cloud) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write " + path);
    std::vector<float> buf;
    buf.reserve(cloud.size() * 4);
    for (const auto& p : cloud) {
        buf.push_back(static_cast<float>(p.x));
        buf.push_back(static_cast<float>(p.y));
        buf.push_back(static_cast<float>(p.z));
        buf.push_back(static_cast<float>(p.r));
    }
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Calib read_kitti_calib(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path);
    Calib c;
    std::string line;
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "R0_rect:" || key == "R_rect" || key == "R0_rect") {
            Mat4 r = Mat4::identity();
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) ss >> r.m[i * 4 + j];
            c.rect = r;
        } else if (key == "Tr_velo_to_cam:" || key == "Tr_velo_to_cam") {
            Mat4 t = Mat4::identity();
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 4; ++j) ss >> t.m[i * 4 + j];
            c.velo_to_cam = t;
        }
    }
    return c;
}

namespace {

double camera_ry_to_lidar_yaw(double ry) { return normalize_angle(-ry - M_PI / 2.0); }
double lidar_yaw_to_camera_ry(double yaw) { return normalize_angle(-yaw - M_PI / 2.0); }

}  // namespace

FrameAnnotation read_kitti_labels(const std::string& path, const Calib& calib) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path);
    FrameAnnotation ann;
    ann.frame_id = std::filesystem::path(path).stem().string();
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        ObjectLabel o;
        double h, w, l, cx, cy, cz, ry;
        ss >> o.type >> o.truncation >> o.occlusion >> o.alpha >> o.bbox[0] >>
            o.bbox[1] >> o.bbox[2] >> o.bbox[3] >> h >> w >> l >> cx >> cy >> cz >> ry;
        if (ss.fail()) {
            throw FormatError("malformed label row at " + path + ":" +
                              std::to_string(lineno));
        }
        // Camera location is the box bottom center; lift to volumetric center
        // after mapping into the LiDAR frame.
        const auto lid = calib.cam_to_lidar(cx, cy, cz);
        o.box.x = lid[0];
        o.box.y = lid[1];
        o.box.z = lid[2] + 0.5 * h;
        o.box.w = w;
        o.box.l = l;
        o.box.h = h;
        o.box.yaw = camera_ry_to_lidar_yaw(ry);
        o.ignorable = (o.type != "Car" && o.type != "Cyclist");
        ann.objects.push_back(o);
    }
    return ann;
}

void write_kitti_results(const std::string& path,
                         const std::vector<Detection>& dets,
                         const std::vector<std::string>& class_names,
                         const Calib& calib) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f.precision(10);
    for (const auto& d : dets) {
        const auto cam =
            calib.lidar_to_cam(d.box.x, d.box.y, d.box.z - 0.5 * d.box.h);
        const double ry = lidar_yaw_to_camera_ry(d.box.yaw);
        const double alpha = normalize_angle(ry - std::atan2(cam[0], cam[2]));
        f << class_names.at(static_cast<size_t>(d.class_id)) << " -1 -1 " << alpha
          << " 0 0 0 0 " << d.box.h << ' ' << d.box.w << ' ' << d.box.l << ' '
          << cam[0] << ' ' << cam[1] << ' ' << cam[2] << ' ' << ry << ' '
          << d.score << '\n';
    }
}

std::vector<Detection> read_kitti_results(const std::string& path,
                                          const std::vector<std::string>& class_names,
                                          const Calib& calib) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open " + path);
    std::vector<Detection> dets;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string type;
        double skip, alpha, b0, b1, b2, b3, h, w, l, cx, cy, cz, ry, score;
        ss >> type >> skip >> skip >> alpha >> b0 >> b1 >> b2 >> b3 >> h >> w >>
            l >> cx >> cy >> cz >> ry >> score;
        if (ss.fail()) {
            throw FormatError("malformed result row at " + path + ":" +
                              std::to_string(lineno));
        }
        Detection d;
        const auto lid = calib.cam_to_lidar(cx, cy, cz);
        d.box = {lid[0], lid[1], lid[2] + 0.5 * h, w, l, h,
                 camera_ry_to_lidar_yaw(ry)};
        d.score = score;
        d.class_id = -1;
        for (size_t i = 0; i < class_names.size(); ++i)
            if (class_names[i] == type) d.class_id = static_cast<int>(i);
        dets.push_back(d);
    }
    return dets;
}

void GTDatabase::rebuild_index() {
    by_class.clear();
    for (size_t i = 0; i < entries.size(); ++i)
        by_class[entries[i].cls].push_back(static_cast<int>(i));
}

GTDatabase build_gt_database(
    const std::vector<std::pair<const PointCloud*, const FrameAnnotation*>>& frames) {
    GTDatabase db;
    for (const auto& [cloud, ann] : frames) {
        for (const auto& o : ann->objects) {
            if (o.ignorable) continue;
            GTEntry e;
            e.cls = o.type;
            e.box = o.box;
            const auto mask = points_in_box(*cloud, o.box);
            for (size_t i = 0; i < cloud->size(); ++i)
                if (mask[i]) e.points.push_back((*cloud)[i]);
            e.empty = e.points.empty();
            db.entries.push_back(std::move(e));
        }
    }
    db.rebuild_index();
    return db;
}

void save_gt_database(const GTDatabase& db, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream blob(dir + "/points.bin", std::ios::binary);
    std::ofstream index(dir + "/index.txt");
    if (!blob || !index) throw FormatError("cannot write database under " + dir);
    index.precision(17);
    uint64_t offset = 0;
    for (const auto& e : db.entries) {
        const uint64_t len = e.points.size() * 4 * sizeof(double);
        std::vector<double> buf;
        buf.reserve(e.points.size() * 4);
        for (const auto& p : e.points) {
            buf.push_back(p.x);
            buf.push_back(p.y);
            buf.push_back(p.z);
            buf.push_back(p.r);
        }
        blob.write(reinterpret_cast<const char*>(buf.data()),
                   static_cast<std::streamsize>(len));
        index << e.cls << ' ' << e.box.x << ' ' << e.box.y << ' ' << e.box.z << ' '
              << e.box.w << ' ' << e.box.l << ' ' << e.box.h << ' ' << e.box.yaw
              << ' ' << (e.empty ? 1 : 0) << ' ' << offset << ' ' << len << '\n';
        offset += len;
    }
}

GTDatabase load_gt_database(const std::string& dir) {
    std::ifstream blob(dir + "/points.bin", std::ios::binary);
    std::ifstream index(dir + "/index.txt");
    if (!blob || !index) throw FormatError("cannot open database under " + dir);
    GTDatabase db;
    std::string line;
    int lineno = 0;
    while (std::getline(index, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        GTEntry e;
        int empty_flag;
        uint64_t offset, len;
        ss >> e.cls >> e.box.x >> e.box.y >> e.box.z >> e.box.w >> e.box.l >>
            e.box.h >> e.box.yaw >> empty_flag >> offset >> len;
        if (ss.fail() || len % (4 * sizeof(double)) != 0) {
            throw FormatError("malformed database index at line " +
                              std::to_string(lineno));
        }
        e.empty = empty_flag != 0;
        const size_t n = len / (4 * sizeof(double));
        std::vector<double> buf(n * 4);
        blob.seekg(static_cast<std::streamoff>(offset));
        blob.read(reinterpret_cast<char*>(buf.data()),
                  static_cast<std::streamsize>(len));
        if (!blob) throw FormatError("database blob truncated");
        for (size_t i = 0; i < n; ++i)
            e.points.push_back({buf[i * 4], buf[i * 4 + 1], buf[i * 4 + 2], buf[i * 4 + 3]});
        db.entries.push_back(std::move(e));
    }
    db.rebuild_index();
    return db;
}

}  // namespace pvd
