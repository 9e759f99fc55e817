#include "pvd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pvd/geometry.hpp"

namespace pvd {

Difficulty difficulty_bucket(const ObjectLabel& o, const DifficultyRules& rules) {
    if (o.ignorable) return Difficulty::ignored;
    const double height = o.bbox[3] - o.bbox[1];
    for (int i = 0; i < 3; ++i) {
        if (height >= rules.min_height[i] && o.occlusion <= rules.max_occlusion[i] &&
            o.truncation <= rules.max_truncation[i])
            return static_cast<Difficulty>(i);
    }
    return Difficulty::ignored;
}

namespace {

double det_iou(const Box3D& a, const Box3D& b, IoUMode mode) {
    return mode == IoUMode::bev ? bev_iou(a, b) : iou_3d(a, b);
}

}  // namespace

std::optional<double> compute_ap_r40(const std::vector<EvalFrame>& frames,
                                     const std::vector<std::string>& class_names,
                                     int class_id, Difficulty difficulty,
                                     const EvalConfig& cfg) {
    const std::string& cname = class_names[static_cast<size_t>(class_id)];
    const double thr = cfg.iou_thr.at(cname);
    const int level = static_cast<int>(difficulty);

    struct Mark {
        double score;
        bool tp;
    };
    std::vector<Mark> marks;
    int total_gt = 0;

    for (const auto& frame : frames) {
        // Split this frame's GTs into targets and ignorables for the class.
        std::vector<const ObjectLabel*> targets, ignored;
        if (frame.ann) {
            for (const auto& o : frame.ann->objects) {
                if (o.type == cname) {
                    const Difficulty b = difficulty_bucket(o, cfg.rules);
                    if (b != Difficulty::ignored && static_cast<int>(b) <= level)
                        targets.push_back(&o);
                    else
                        ignored.push_back(&o);
                } else if (o.ignorable) {
                    ignored.push_back(&o);  // DontCare region
                }
            }
        }
        total_gt += static_cast<int>(targets.size());

        std::vector<const Detection*> dets;
        for (const auto& d : frame.dets)
            if (d.class_id == class_id) dets.push_back(&d);
        std::sort(dets.begin(), dets.end(),
                  [](const Detection* a, const Detection* b) {
                      return a->score > b->score;
                  });

        std::vector<char> used(targets.size(), 0);
        for (const Detection* d : dets) {
            double best = thr;
            int arg = -1;
            for (size_t gi = 0; gi < targets.size(); ++gi) {
                if (used[gi]) continue;
                const double iou = det_iou(d->box, targets[gi]->box, cfg.mode);
                if (iou >= best) {
                    best = iou;
                    arg = static_cast<int>(gi);
                }
            }
            if (arg >= 0) {
                used[static_cast<size_t>(arg)] = 1;
                marks.push_back({d->score, true});
                continue;
            }
            bool skip = false;
            for (const ObjectLabel* o : ignored)
                if (det_iou(d->box, o->box, cfg.mode) >= thr) {
                    skip = true;
                    break;
                }
            if (!skip) marks.push_back({d->score, false});
        }
    }

    if (total_gt == 0) return std::nullopt;

    std::sort(marks.begin(), marks.end(),
              [](const Mark& a, const Mark& b) { return a.score > b.score; });
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const Mark& m : marks) {
        m.tp ? ++tp : ++fp;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / total_gt);
    }

    double ap = 0.0;
    for (int i = 1; i <= 40; ++i) {
        const double r = i / 40.0;
        double best = 0.0;
        for (size_t k = 0; k < recall.size(); ++k)
            if (recall[k] >= r - 1e-12) best = std::max(best, precision[k]);
        ap += best;
    }
    return ap / 40.0;
}

APReport evaluate(const std::vector<EvalFrame>& frames,
                  const std::vector<std::string>& class_names,
                  const EvalConfig& cfg) {
    APReport rep;
    for (size_t c = 0; c < class_names.size(); ++c)
        for (int d = 0; d < 3; ++d) {
            auto ap = compute_ap_r40(frames, class_names, static_cast<int>(c),
                                     static_cast<Difficulty>(d), cfg);
            if (ap) rep.ap[{class_names[c], d}] = *ap;
        }
    return rep;
}

namespace {
const char* kBuckets[3] = {"easy", "moderate", "hard"};
}

std::string APReport::table() const {
    std::ostringstream os;
    os << "class       easy     moderate hard\n";
    std::vector<std::string> classes;
    for (const auto& [key, _] : ap)
        if (std::find(classes.begin(), classes.end(), key.first) ==
            classes.end())
            classes.push_back(key.first);
    for (const auto& cls : classes) {
        os << cls;
        for (size_t i = cls.size(); i < 12; ++i) os << ' ';
        for (int d = 0; d < 3; ++d) {
            auto it = ap.find({cls, d});
            char buf[16];
            if (it != ap.end())
                std::snprintf(buf, sizeof buf, "%-8.4f ", it->second);
            else
                std::snprintf(buf, sizeof buf, "%-8s ", "n/a");
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

std::string APReport::keyvalues() const {
    std::ostringstream os;
    for (const auto& [key, value] : ap)
        os << "ap." << key.first << '.' << kBuckets[key.second] << ' '
           << value << '\n';
    return os.str();
}

}  // namespace pvd
