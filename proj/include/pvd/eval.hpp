#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pvd/dataset.hpp"
#include "pvd/types.hpp"

namespace pvd {

enum class Difficulty { easy, moderate, hard, ignored };

struct DifficultyRules {
    // KITTI benchmark defaults: min image-box height (px), max occlusion
    // level, max truncation, per bucket easy/moderate/hard.
    double min_height[3] = {40.0, 25.0, 25.0};
    int max_occlusion[3] = {0, 1, 2};
    double max_truncation[3] = {0.15, 0.30, 0.50};
};

Difficulty difficulty_bucket(const ObjectLabel& o,
                             const DifficultyRules& rules = {});

enum class IoUMode { bev, full3d };

struct EvalConfig {
    std::map<std::string, double> iou_thr = {{"Car", 0.7}, {"Cyclist", 0.5}};
    IoUMode mode = IoUMode::full3d;
    DifficultyRules rules;
};

struct EvalFrame {
    std::vector<Detection> dets;               // class_id indexes class_names
    const FrameAnnotation* ann = nullptr;
};

// AP over 40 recall points with the KITTI matching protocol: greedy in
// score order, one match per GT, harder-bucket GTs and DontCare objects
// ignored rather than counted as false positives. Absent when the class has
// no GT at this difficulty.
std::optional<double> compute_ap_r40(const std::vector<EvalFrame>& frames,
                                     const std::vector<std::string>& class_names,
                                     int class_id, Difficulty difficulty,
                                     const EvalConfig& cfg);

struct APReport {
    // (class, difficulty 0..2) -> AP; missing entries had no ground truth.
    std::map<std::pair<std::string, int>, double> ap;

    std::string table() const;
    std::string keyvalues() const;  // "ap.<class>.<easy|moderate|hard> value"
};

APReport evaluate(const std::vector<EvalFrame>& frames,
                  const std::vector<std::string>& class_names,
                  const EvalConfig& cfg);

}  // namespace pvd
