#include "pvd/head.hpp"

#include <algorithm>
#include <cmath>

namespace pvd {

HeadConfig HeadConfig::kitti_default() {
    HeadConfig cfg;
    cfg.classes = {
        {"Car", 1.6, 3.9, 1.56, -1.0, 0.6, 0.45},
        {"Cyclist", 0.6, 1.76, 1.73, -0.6, 0.5, 0.35},
    };
    cfg.grid = 152;
    cfg.cell = 0.4;
    cfg.x0 = 0.0;
    cfg.y0 = -30.4;
    return cfg;
}

std::vector<Anchor> generate_anchors(const HeadConfig& cfg) {
    const int gridn = cfg.grid;
    std::vector<Anchor> anchors;
    anchors.reserve(static_cast<size_t>(cfg.anchors_per_cell()) * gridn * gridn);
    for (int c = 0; c < cfg.num_classes(); ++c) {
        const auto& cc = cfg.classes[static_cast<size_t>(c)];
        for (int o = 0; o < 2; ++o) {
            const double yaw = o == 0 ? 0.0 : M_PI / 2;
            for (int row = 0; row < gridn; ++row)
                for (int col = 0; col < gridn; ++col) {
                    const double x = cfg.x0 + (col + 0.5) * cfg.cell;
                    const double y = cfg.y0 + (row + 0.5) * cfg.cell;
                    anchors.push_back(
                        {{x, y, cc.z, cc.w, cc.l, cc.h, yaw}, c});
                }
        }
    }
    return anchors;
}

TargetAssignment match_anchors(const std::vector<Anchor>& anchors,
                               const std::vector<GTBox>& gts,
                               const HeadConfig& cfg) {
    const size_t n = anchors.size();
    TargetAssignment out;
    out.label.assign(n, 0);
    out.matched_gt.assign(n, -1);

    std::vector<double> best_iou(n, 0.0);
    std::vector<int> best_gt(n, -1);
    std::vector<double> gt_best_iou(gts.size(), 0.0);
    std::vector<int> gt_best_anchor(gts.size(), -1);

    for (size_t a = 0; a < n; ++a) {
        for (size_t gi = 0; gi < gts.size(); ++gi) {
            if (gts[gi].class_id != anchors[a].class_id) continue;
            const double iou = bev_iou(anchors[a].box, gts[gi].box);
            if (iou > best_iou[a]) {
                best_iou[a] = iou;
                best_gt[a] = static_cast<int>(gi);
            }
            if (iou > gt_best_iou[gi]) {
                gt_best_iou[gi] = iou;
                gt_best_anchor[gi] = static_cast<int>(a);
            }
        }
    }
    for (size_t a = 0; a < n; ++a) {
        const auto& cc = cfg.classes[static_cast<size_t>(anchors[a].class_id)];
        if (best_gt[a] >= 0 && best_iou[a] >= cc.pos_thr) {
            out.label[a] = 1;
            out.matched_gt[a] = best_gt[a];
        } else if (best_iou[a] >= cc.neg_thr) {
            out.label[a] = -1;
        }
    }
    // Force-match: the best anchor of each GT is positive regardless.
    for (size_t gi = 0; gi < gts.size(); ++gi) {
        const int a = gt_best_anchor[gi];
        if (a >= 0 && gt_best_iou[gi] > 0.0) {
            out.label[static_cast<size_t>(a)] = 1;
            out.matched_gt[static_cast<size_t>(a)] = static_cast<int>(gi);
        }
    }
    for (size_t a = 0; a < n; ++a)
        if (out.label[a] == 1) ++out.n_pos;
    return out;
}

namespace {

// Wrap an angle difference into [-pi/2, pi/2) using box pi-symmetry so the
// sine encoding stays invertible; the direction bit recovers the half-turn.
double wrap_half(double d) {
    d = normalize_angle(d);
    if (d >= M_PI / 2) d -= M_PI;
    if (d < -M_PI / 2) d += M_PI;
    return d;
}

}  // namespace

BoxResiduals encode_targets(const Box3D& anchor, const Box3D& gt) {
    if (anchor.w <= 0 || anchor.l <= 0 || anchor.h <= 0 || gt.w <= 0 ||
        gt.l <= 0 || gt.h <= 0)
        throw std::invalid_argument("encode_targets: non-positive box size");
    const double da = std::sqrt(anchor.w * anchor.w + anchor.l * anchor.l);
    BoxResiduals r;
    r.d[0] = (gt.x - anchor.x) / da;
    r.d[1] = (gt.y - anchor.y) / da;
    r.d[2] = (gt.z - anchor.z) / da;
    r.d[3] = std::log(gt.w / anchor.w);
    r.d[4] = std::log(gt.l / anchor.l);
    r.d[5] = std::log(gt.h / anchor.h);
    r.d[6] = std::sin(wrap_half(gt.yaw - anchor.yaw));
    r.dir = gt.yaw >= 0.0 ? 1 : 0;
    return r;
}

Box3D decode_box(const Box3D& anchor, const std::array<double, 7>& d, int dir) {
    const double da = std::sqrt(anchor.w * anchor.w + anchor.l * anchor.l);
    Box3D b;
    b.x = anchor.x + d[0] * da;
    b.y = anchor.y + d[1] * da;
    b.z = anchor.z + d[2] * da;
    b.w = anchor.w * std::exp(d[3]);
    b.l = anchor.l * std::exp(d[4]);
    b.h = anchor.h * std::exp(d[5]);
    const double s = std::clamp(d[6], -1.0, 1.0);
    double yaw = normalize_angle(anchor.yaw + std::asin(s));
    const int sign = yaw >= 0.0 ? 1 : 0;
    if (sign != dir) yaw = normalize_angle(yaw + M_PI);
    b.yaw = yaw;
    return b;
}

void SSDHead::init(ParamStore& params, Rng& rng) const {
    const int a = cfg.anchors_per_cell();
    params.uniform("head.cls.w", {a * cfg.num_classes(), c_in, 1, 1}, rng);
    // Bias the class logits toward a low prior probability so the first
    // steps are not dominated by the focal loss over all-negative anchors.
    const double prior_logit = std::log(0.01 / 0.99);
    params.create("head.cls.b", {a * cfg.num_classes()}, [&](Tensor& t) {
        std::fill(t.data.begin(), t.data.end(), prior_logit);
    });
    params.uniform("head.reg.w", {a * 7, c_in, 1, 1}, rng);
    params.zeros("head.reg.b", {a * 7});
    params.uniform("head.dir.w", {a, c_in, 1, 1}, rng);
    params.zeros("head.dir.b", {a});
}

HeadMaps SSDHead::forward(Graph& g, ParamStore& params, Var feat) const {
    HeadMaps m;
    m.cls = g.conv2d(feat, g.param(params.at("head.cls.w")),
                     g.param(params.at("head.cls.b")), 1, 0);
    m.reg = g.conv2d(feat, g.param(params.at("head.reg.w")),
                     g.param(params.at("head.reg.b")), 1, 0);
    m.dir = g.conv2d(feat, g.param(params.at("head.dir.w")),
                     g.param(params.at("head.dir.b")), 1, 0);
    const Shape& s = g.val(feat).shape;
    m.h = s[1];
    m.w = s[2];
    return m;
}

LossBreakdown SSDHead::loss(Graph& g, const HeadMaps& maps,
                            const std::vector<Anchor>& anchors,
                            const TargetAssignment& assign,
                            const std::vector<GTBox>& gts) const {
    const int ncls = cfg.num_classes();
    const int hw = maps.h * maps.w;
    const size_t n_anchors = anchors.size();

    Tensor cls_t = Tensor::zeros(g.val(maps.cls).shape);
    Tensor cls_w = Tensor::zeros(g.val(maps.cls).shape);
    Tensor reg_t = Tensor::zeros(g.val(maps.reg).shape);
    Tensor reg_w = Tensor::zeros(g.val(maps.reg).shape);
    Tensor dir_t = Tensor::zeros(g.val(maps.dir).shape);
    Tensor dir_w = Tensor::zeros(g.val(maps.dir).shape);

    for (size_t ai = 0; ai < n_anchors; ++ai) {
        const int a = static_cast<int>(ai) / hw;   // anchor slot per cell
        const int cell = static_cast<int>(ai) % hw;
        const int label = assign.label[ai];
        if (label >= 0) {
            // All class channels of this anchor take part in the focal loss.
            for (int c = 0; c < ncls; ++c)
                cls_w[static_cast<size_t>((a * ncls + c)) * hw + cell] = 1.0;
        }
        if (label == 1) {
            cls_t[static_cast<size_t>(
                      (a * ncls + anchors[ai].class_id)) * hw + cell] = 1.0;
            const auto& gt = gts[static_cast<size_t>(assign.matched_gt[ai])];
            const BoxResiduals r = encode_targets(anchors[ai].box, gt.box);
            for (int d = 0; d < 7; ++d) {
                reg_t[static_cast<size_t>((a * 7 + d)) * hw + cell] = r.d[d];
                reg_w[static_cast<size_t>((a * 7 + d)) * hw + cell] = 1.0;
            }
            dir_t[static_cast<size_t>(a) * hw + cell] = r.dir;
            dir_w[static_cast<size_t>(a) * hw + cell] = 1.0;
        }
    }

    const double inv_pos = 1.0 / std::max(1, assign.n_pos);
    LossBreakdown out;
    out.n_pos = assign.n_pos;
    out.loc = g.scale(g.smooth_l1_sum(maps.reg, reg_t, reg_w), inv_pos);
    out.cls = g.scale(g.sigmoid_focal_sum(maps.cls, cls_t, cls_w,
                                          cfg.weights.focal_alpha,
                                          cfg.weights.focal_gamma),
                      inv_pos);
    out.dir = g.scale(g.sigmoid_bce_sum(maps.dir, dir_t, dir_w), inv_pos);
    out.total = g.add(g.add(g.scale(out.loc, cfg.weights.beta_loc),
                            g.scale(out.cls, cfg.weights.beta_cls)),
                      g.scale(out.dir, cfg.weights.beta_dir));
    return out;
}

std::vector<Detection> SSDHead::predict(const Graph& g, const HeadMaps& maps,
                                        const std::vector<Anchor>& anchors) const {
    const int ncls = cfg.num_classes();
    const int hw = maps.h * maps.w;
    const Tensor& cls = g.val(maps.cls);
    const Tensor& reg = g.val(maps.reg);
    const Tensor& dir = g.val(maps.dir);

    std::vector<Detection> cands;
    for (size_t ai = 0; ai < anchors.size(); ++ai) {
        const int a = static_cast<int>(ai) / hw;
        const int cell = static_cast<int>(ai) % hw;
        const int cid = anchors[ai].class_id;
        const double logit =
            cls[static_cast<size_t>((a * ncls + cid)) * hw + cell];
        const double score = 1.0 / (1.0 + std::exp(-logit));
        if (score < cfg.score_thr) continue;
        std::array<double, 7> d{};
        for (int k = 0; k < 7; ++k)
            d[static_cast<size_t>(k)] =
                reg[static_cast<size_t>((a * 7 + k)) * hw + cell];
        const double dlogit = dir[static_cast<size_t>(a) * hw + cell];
        const int bit = dlogit >= 0.0 ? 1 : 0;
        cands.push_back({decode_box(anchors[ai].box, d, bit), cid, score});
    }

    std::vector<Detection> kept;
    for (int c = 0; c < ncls; ++c) {
        std::vector<Box3D> boxes;
        std::vector<double> scores;
        std::vector<size_t> idx;
        for (size_t i = 0; i < cands.size(); ++i)
            if (cands[i].class_id == c) {
                boxes.push_back(cands[i].box);
                scores.push_back(cands[i].score);
                idx.push_back(i);
            }
        for (int k : nms_bev(boxes, scores, cfg.nms_thr))
            kept.push_back(cands[idx[static_cast<size_t>(k)]]);
    }
    std::sort(kept.begin(), kept.end(),
              [](const Detection& a, const Detection& b) {
                  return a.score > b.score;
              });
    return kept;
}

}  // namespace pvd
