#pragma once

#include "swiftpan/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace swiftpan {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

struct AdaptConfig {
    int epochs = 100;
    double lr = 1e-3;
    int batch = 16;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AdaptResult {
    std::vector<double> loss_trace;  // mean L1 per epoch
    std::size_t scene_passes = 0;    // forward+backward scene evaluations
    double wall_seconds = 0.0;
    double cpu_seconds = 0.0;
};

// Trains only the named tensors on the given scenes with an L1 objective
// against their ground truth; every other tensor is frozen and left bitwise
// unchanged. Optimizer state starts fresh. On error the model is restored.
AdaptResult adapt(Model& model, std::span<const std::string> mask, std::span<const ScenePair> scenes,
                  const AdaptConfig& config);

// adapt() with every tensor unfrozen.
AdaptResult full_retrain(Model& model, std::span<const ScenePair> scenes, const AdaptConfig& config);

void write_loss_trace(const std::filesystem::path& path, std::span<const double> trace);

}  // namespace swiftpan
