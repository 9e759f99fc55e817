#pragma once

#include <array>
#include <string>
#include <vector>

#include "pvd/geometry.hpp"
#include "pvd/preprocess.hpp"
#include "pvd/tensor.hpp"
#include "pvd/types.hpp"

namespace pvd {

struct AnchorClassConfig {
    std::string name;
    double w = 0, l = 0, h = 0;  // base box size
    double z = 0;                // anchor center height
    double pos_thr = 0, neg_thr = 0;
};

struct LossWeights {
    double beta_loc = 2.0, beta_cls = 1.0, beta_dir = 0.2;
    double focal_alpha = 0.25, focal_gamma = 2.0;
};

struct HeadConfig {
    std::vector<AnchorClassConfig> classes;
    int grid = 152;      // output map is grid x grid
    double cell = 0.4;   // metric cell size at the output stride
    double x0 = 0.0, y0 = -30.4;  // metric origin of cell (row 0, col 0)
    LossWeights weights;
    double score_thr = 0.3;
    double nms_thr = 0.5;

    int num_classes() const { return static_cast<int>(classes.size()); }
    int anchors_per_cell() const { return 2 * num_classes(); }

    static HeadConfig kitti_default();
};

struct Anchor {
    Box3D box;
    int class_id = 0;
};

// Anchors in map layout: index = (a * grid + row) * grid + col with
// a = class_id * 2 + orientation, orientation yaw in {0, pi/2}.
std::vector<Anchor> generate_anchors(const HeadConfig& cfg);

struct TargetAssignment {
    std::vector<int> label;       // 1 positive, 0 negative, -1 ignore
    std::vector<int> matched_gt;  // gt index for positives, else -1
    int n_pos = 0;
};

struct GTBox {
    Box3D box;
    int class_id = 0;
};

// BEV-IoU assignment with per-class thresholds; the best anchor of every GT
// is forced positive even below the threshold.
TargetAssignment match_anchors(const std::vector<Anchor>& anchors,
                               const std::vector<GTBox>& gts,
                               const HeadConfig& cfg);

struct BoxResiduals {
    std::array<double, 7> d{};  // dx, dy, dz, dw, dl, dh, dtheta(sine)
    int dir = 0;                // 1 iff gt yaw >= 0
};

BoxResiduals encode_targets(const Box3D& anchor, const Box3D& gt);
Box3D decode_box(const Box3D& anchor, const std::array<double, 7>& d, int dir);

struct HeadMaps {
    Var cls;  // (A * num_classes, H, W) logits
    Var reg;  // (A * 7, H, W)
    Var dir;  // (A, H, W) logits
    int h = 0, w = 0;
};

struct LossBreakdown {
    Var loc, cls, dir, total;
    int n_pos = 0;
};

// Three 1x1 convolution heads over the neck feature map.
struct SSDHead {
    HeadConfig cfg;
    int c_in = 0;

    void init(ParamStore& params, Rng& rng) const;
    HeadMaps forward(Graph& g, ParamStore& params, Var feat) const;

    LossBreakdown loss(Graph& g, const HeadMaps& maps,
                       const std::vector<Anchor>& anchors,
                       const TargetAssignment& assign,
                       const std::vector<GTBox>& gts) const;

    std::vector<Detection> predict(const Graph& g, const HeadMaps& maps,
                                   const std::vector<Anchor>& anchors) const;
};

}  // namespace pvd
