#pragma once

#include "ipapr/camera.hpp"
#include "ipapr/core.hpp"

#include <json.hpp>

namespace ipapr {

using Json = nlohmann::json;

Json to_json(const Camera& camera);
Camera camera_from_json(const Json& j);

Json to_json(const Bounds& bounds);
Bounds bounds_from_json(const Json& j);

Json vec_to_json(const Eigen::Ref<const Eigen::VectorXd>& v);
Eigen::VectorXd vec_from_json(const Json& j, Eigen::Index expected_size = -1);

}  // namespace ipapr
