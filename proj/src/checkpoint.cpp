#include "condredact/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace condredact {

using nlohmann::json;

namespace {
constexpr int kCheckpointVersion = 1;
}

json task_to_json(const SyntheticTask& task) {
  json j;
  j["kind"] = task.kind == SyntheticTask::Kind::kgon ? "kgon" : "token-attr";
  j["k"] = task.k;
  j["sigma"] = task.sigma;
  j["out_dim"] = task.out_dim;
  j["colors"] = task.colors;
  j["parts"] = task.parts;
  return j;
}

SyntheticTask task_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  SyntheticTask task;
  if (kind == "kgon") {
    task = SyntheticTask::kgon_task(j.at("k").get<int>(),
                                    j.at("sigma").get<double>());
  } else if (kind == "token-attr") {
    task = SyntheticTask::token_attr_task(j.at("out_dim").get<int>(),
                                          j.at("sigma").get<double>());
    if (j.contains("colors")) task.colors = j.at("colors").get<std::vector<std::string>>();
    if (j.contains("parts")) task.parts = j.at("parts").get<std::vector<std::string>>();
  } else {
    throw std::invalid_argument("task: unknown kind \"" + kind + "\"");
  }
  return task;
}

json arch_to_json(const GeneratorArch& arch) {
  return json{{"topology", arch.topology},
              {"conditioner", arch.conditioner},
              {"embed_dim", arch.embed_dim},
              {"rep_dim", arch.rep_dim},
              {"latent_dim", arch.latent_dim},
              {"hidden", arch.hidden},
              {"cond_hidden", arch.cond_hidden},
              {"stage1_dim", arch.stage1_dim},
              {"blocks", arch.blocks},
              {"dilation_cycle", arch.dilation_cycle},
              {"gated_rewriter", arch.gated_rewriter},
              {"prefix_hidden", arch.prefix_hidden}};
}

GeneratorArch arch_from_json(const json& j) {
  GeneratorArch arch;
  arch.topology = j.at("topology").get<std::string>();
  arch.conditioner = j.value("conditioner", arch.conditioner);
  arch.embed_dim = j.value("embed_dim", arch.embed_dim);
  arch.rep_dim = j.value("rep_dim", arch.rep_dim);
  arch.latent_dim = j.value("latent_dim", arch.latent_dim);
  arch.hidden = j.value("hidden", arch.hidden);
  arch.cond_hidden = j.value("cond_hidden", arch.cond_hidden);
  arch.stage1_dim = j.value("stage1_dim", arch.stage1_dim);
  arch.blocks = j.value("blocks", arch.blocks);
  arch.dilation_cycle = j.value("dilation_cycle", arch.dilation_cycle);
  arch.gated_rewriter = j.value("gated_rewriter", arch.gated_rewriter);
  arch.prefix_hidden = j.value("prefix_hidden", arch.prefix_hidden);
  return arch;
}

json checkpoint_to_json(const Generator& g, const SyntheticTask& task,
                        std::uint64_t seed, long step) {
  json params = json::object();
  const_cast<Generator&>(g).visit_params(
      [&](const std::string& name, Tensor& t, bool trainable) {
        json entry;
        entry["shape"] = t.shape();
        entry["data"] = t.values_copy();
        entry["trainable"] = trainable;
        params[name] = std::move(entry);
      });
  json j;
  j["format"] = "condredact-checkpoint";
  j["version"] = kCheckpointVersion;
  j["meta"] = {{"seed", seed},
               {"step", step},
               {"topology", g.topology()},
               {"task", task_to_json(task)},
               {"arch", arch_to_json(g.arch())}};
  j["params"] = std::move(params);
  return j;
}

LoadedCheckpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "condredact-checkpoint") {
    throw std::invalid_argument("checkpoint: unrecognized format tag");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::invalid_argument("checkpoint: unsupported version");
  }
  const json& meta = j.at("meta");
  LoadedCheckpoint out;
  out.task = task_from_json(meta.at("task"));
  out.seed = meta.at("seed").get<std::uint64_t>();
  out.step = meta.at("step").get<long>();
  GeneratorArch arch = arch_from_json(meta.at("arch"));
  out.generator = build_generator(arch, out.task, out.seed);

  const json& params = j.at("params");
  std::size_t filled = 0;
  out.generator->visit_params([&](const std::string& name, Tensor& t, bool) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw std::invalid_argument("checkpoint: missing parameter \"" + name +
                                  "\"");
    }
    const auto shape = it->at("shape").get<Shape>();
    if (shape != t.shape()) {
      throw std::invalid_argument("checkpoint: parameter \"" + name +
                                  "\" has shape " + shape_to_string(shape) +
                                  ", expected " + shape_to_string(t.shape()));
    }
    auto data = it->at("data").get<std::vector<double>>();
    if (data.size() != t.numel()) {
      throw std::invalid_argument("checkpoint: parameter \"" + name +
                                  "\" has wrong element count");
    }
    t.mutable_values() = std::move(data);
    ++filled;
  });
  if (filled != params.size()) {
    throw std::invalid_argument(
        "checkpoint: file carries parameters the architecture does not");
  }
  return out;
}

void save_checkpoint(const std::string& path, const Generator& g,
                     const SyntheticTask& task, std::uint64_t seed, long step) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_checkpoint: cannot write " + path);
  }
  out << checkpoint_to_json(g, task, seed, step).dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_checkpoint: cannot read " + path);
  }
  json j;
  in >> j;
  return checkpoint_from_json(j);
}

}  // namespace condredact
