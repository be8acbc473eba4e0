#pragma once

#include "ipapr/checkpoint.hpp"
#include "support/micro.hpp"

namespace ipapr::fixtures {

/// Small float checkpoint with two cameras and no optimizer state.
inline Checkpoint micro_checkpoint(std::uint64_t seed, int size = 6, Eigen::Index points = 12) {
    Checkpoint ck;
    ck.model_config = micro_config(4);
    ck.model = micro_model(seed, points, 4).cast<float>();
    ck.cameras = {micro_camera(size), micro_camera(size, 4.0)};
    return ck;
}

}  // namespace ipapr::fixtures
