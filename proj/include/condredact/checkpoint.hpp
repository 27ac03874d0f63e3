#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "json.hpp"

#include "condredact/toymodels.hpp"

namespace condredact {

// Versioned JSON checkpoint: task + architecture metadata plus named
// parameter arrays. Doubles round-trip bit-exactly through serialization.

nlohmann::json task_to_json(const SyntheticTask& task);
SyntheticTask task_from_json(const nlohmann::json& j);

nlohmann::json arch_to_json(const GeneratorArch& arch);
GeneratorArch arch_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const Generator& g, const SyntheticTask& task,
                                  std::uint64_t seed, long step);

struct LoadedCheckpoint {
  std::unique_ptr<Generator> generator;
  SyntheticTask task;
  std::uint64_t seed = 0;
  long step = 0;
};

LoadedCheckpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const Generator& g,
                     const SyntheticTask& task, std::uint64_t seed, long step);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace condredact
