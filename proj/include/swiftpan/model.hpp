#pragma once

#include "swiftpan/datagen.hpp"
#include "swiftpan/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

namespace swiftpan {

enum class Arch { TinyPnn, TinyResidual };

std::string arch_name(Arch arch);
Arch parse_arch(const std::string& name);

struct ModelConfig {
    Arch arch = Arch::TinyResidual;
    int bands = 4;
    int channels = 16;
    int depth = 3;
    int ratio = 4;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// One mini-batch in network layout: ms_up and gt are [N,bands,H,W], pan is
// [N,1,H,W]. ms_up is the bicubic-upsampled LRMS.
struct Batch {
    Tensor ms_up;
    Tensor pan;
    Tensor gt;
};

Batch make_batch(std::span<const ScenePair> scenes, int ratio, bool with_gt = true);
Batch make_batch(std::span<const ScenePair* const> scenes, int ratio, bool with_gt = true);

// Tiny pansharpening CNN. The backbone sees [ms_up ++ pan] and runs `depth`
// 3x3 convolutions with ReLU between them. tiny_pnn outputs the backbone
// directly, tiny_residual adds it to ms_up (detail injection).
class Model {
public:
    static Model build(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ParamRegistry& params() { return graph_.params(); }
    const ParamRegistry& params() const { return graph_.params(); }
    Graph& graph() { return graph_; }

    // lrms [bands,h,w], pan [1,H,W] -> [bands,H,W]
    Tensor predict(const Tensor& lrms, const Tensor& pan);
    Tensor predict(const ScenePair& scene) { return predict(scene.lrms, scene.pan); }
    Tensor predict_batch(const Batch& batch);

    // Mean L1 over the batch, optionally followed by a backward pass whose
    // gradients are then available from graph().grad(...).
    double loss(const Batch& batch);
    double loss_and_backward(const Batch& batch);

    void save(const std::filesystem::path& dir) const;
    // Throws IoError on a missing/corrupt file or checksum mismatch and
    // ConfigError when `expected` is given and differs from the stored config.
    static Model load(const std::filesystem::path& dir, const std::optional<ModelConfig>& expected = std::nullopt);

private:
    ModelConfig config_;
    Graph graph_;
    NodeId out_ = -1;
    NodeId loss_ = -1;
};

std::uint64_t fnv1a64(std::span<const unsigned char> bytes);

}  // namespace swiftpan
