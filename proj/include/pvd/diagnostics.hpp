#pragma once

#include <string>
#include <vector>

#include "pvd/config.hpp"

namespace pvd {

struct BlockCheck {
    std::string name;
    double max_rel_err = 0.0;
};

// Central-finite-difference gradient check for every network block and loss
// term on small shapes. Each entry reports the worst relative error across
// the block's parameters.
std::vector<BlockCheck> run_block_grad_checks(uint64_t seed);

}  // namespace pvd
