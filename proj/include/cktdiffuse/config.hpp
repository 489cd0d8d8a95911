#pragma once

// Run configuration shared by every stage. Artifacts carry a stage hash:
// the dataset hash covers what shapes the data, the model hash adds the
// schedule, architecture and optimizer on top of it.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "graph.hpp"
#include "perf_model.hpp"

namespace cktdiffuse {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConstants, kn, kp, vth, lambda_1um, gamma, kf, cox, cov, cj,
                                                temperature, supply, bias_overdrive, smoothing, rail_margin)

struct ScheduleConfig {
    int T = 500;
    double s = 0.008;
    double clip = 1e-5;
    std::string edge_noise = "binary";  // or "port_rows"
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, T, s, clip, edge_noise)

struct DatasetConfig {
    std::size_t count = 5000;
    std::vector<std::string> templates{"all"};
    double cl_min = 0.1;  // normalized load range
    double cl_max = 2.0;
    ModelConstants evaluator{};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetConfig, count, templates, cl_min, cl_max, evaluator)

struct ModelConfig {
    int rounds = 4;
    int width = 64;
    int time_dims = 32;
    int count_hidden = 64;
    int min_nodes = 2;
    int max_nodes = 12;
    std::string continuous_output = "clean";  // "clean": net predicts V0 and eps is derived; "eps": net predicts eps
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, rounds, width, time_dims, count_hidden, min_nodes,
                                                max_nodes, continuous_output)

struct TrainConfig {
    double lr = 2e-3;
    double clip_norm = 1.0;
    int batch = 64;
    int discrete_steps = 8000;
    int continuous_steps = 4000;
    int count_steps = 2000;
    bool cosine_decay = true;  // lr follows a half cosine to zero over each loop
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr, clip_norm, batch, discrete_steps, continuous_steps,
                                                count_steps, cosine_decay)

struct RunConfig {
    std::uint64_t seed = 0;
    ScheduleConfig schedule{};
    DatasetConfig dataset{};
    ModelConfig model{};
    TrainConfig train{};
    int interval = 1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, seed, schedule, dataset, model, train, interval)

/// Record i depends only on the seed, the index and the dataset settings, so
/// the record count is left out: a shorter dataset is a prefix of a longer one.
[[nodiscard]] inline std::string dataset_hash(const RunConfig& c) {
    auto d = c.dataset;
    d.count = 0;
    const nlohmann::json j{{"seed", c.seed}, {"dataset", d}};
    return hex64(fnv1a(j.dump()));
}

[[nodiscard]] inline std::string model_hash(const RunConfig& c) {
    const nlohmann::json j{{"data", dataset_hash(c)}, {"schedule", c.schedule}, {"model", c.model}, {"train", c.train}};
    return hex64(fnv1a(j.dump()));
}

[[nodiscard]] inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    return nlohmann::json::parse(in).get<RunConfig>();
}

}  // namespace cktdiffuse
