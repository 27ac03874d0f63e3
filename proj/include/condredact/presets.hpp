#pragma once

#include <string>
#include <vector>

#include "condredact/config.hpp"

namespace condredact {

std::vector<std::string> preset_names();
ExperimentConfig preset_config(const std::string& name);

}  // namespace condredact
