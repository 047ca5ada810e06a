#pragma once

#include "swiftpan/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace swiftpan {

// Contiguous partition of the subset (in subset order) into M non-empty groups;
// the first |t| mod M groups hold one extra scene. M is capped at |t|.
struct MicrobatchPlan {
    std::vector<std::vector<int>> groups;
    int size() const { return static_cast<int>(groups.size()); }
};

MicrobatchPlan plan_microbatches(std::span<const int> subset_ids, int microbatches);

// Per parameter tensor (registry order), one gradient tensor per microbatch.
struct GradientSet {
    std::vector<std::string> names;
    std::vector<std::size_t> scalar_counts;
    std::vector<std::vector<Tensor>> per_microbatch;
};

// Forward/backward of the L1 probe loss for each microbatch. The gradient of
// a microbatch is the gradient of its mean loss, i.e. the mean of the
// per-scene gradients. Parameters and trainable flags are left untouched.
GradientSet collect_gradients(Model& model, std::span<const ScenePair> scenes, const MicrobatchPlan& plan);

// (1/M) sum_i |mean(g_i)|
double compute_mag(std::span<const Tensor> grads);
// (1/M) sum_i max(pos, neg) / (pos + neg); zeros are not counted and a
// microbatch with no nonzero element contributes 0.5.
double compute_gdc(std::span<const Tensor> grads);
// sqrt((1/M) sum_i Var(g_i)), population variance over tensor elements.
double compute_std(std::span<const Tensor> grads);

struct SensitivityConfig {
    double alpha_mag = 1.0 / 3.0;
    double beta_std = 1.0 / 3.0;
    double gamma_gdc = 1.0 / 3.0;
    double eta_min = 0.10;
    double eta_max = 0.60;
    double h_min = 0.0;
    double h_max = 1.5;
    int microbatches = 8;

    void validate() const;
};

struct ParamTensorStats {
    std::string name;
    std::size_t scalar_count = 0;
    double mag = 0.0, gdc = 0.5, std = 0.0;
    double mag_n = 0.0, gdc_n = 0.0, std_n = 0.0;
    double score = 0.0;
};

std::vector<ParamTensorStats> gradient_stats(const GradientSet& grads);

// Min-max normalizes each metric across tensors (all-equal -> 0.5) and sets
// score = alpha * mag_n + beta * (1 - std_n) + gamma * gdc_n.
void composite_score(std::vector<ParamTensorStats>& stats, const SensitivityConfig& config);

// std(values) + (max(values) - median(values)), population std.
double sharpness(std::span<const double> normalized_mag);
double sharpness(std::span<const ParamTensorStats> stats);

// eta_min + (eta_max - eta_min) * clip((H - h_min) / (h_max - h_min), 0, 1)
double dynamic_ratio(double h, const SensitivityConfig& config);

struct SelectionMask {
    std::vector<std::string> selected;  // descending score
    double p_select = 0.0;
    double sharpness = 0.0;
    double scalar_fraction = 0.0;

    bool contains(const std::string& name) const;
};

// Greedy: tensors by descending score (ties keep input order) until the
// selected scalar fraction reaches p_select. Always selects at least one.
SelectionMask select(std::span<const ParamTensorStats> stats, double p_select);

// Baseline: a seeded random tensor order with the same greedy stopping rule.
SelectionMask random_mask(std::span<const ParamTensorStats> stats, double p_select, std::uint64_t seed);

struct SensitivityReport {
    std::vector<ParamTensorStats> stats;
    SelectionMask mask;
};

// Full probe: plan, collect, score, sharpness, dynamic ratio, select.
SensitivityReport analyze(Model& model, std::span<const ScenePair> subset, const SensitivityConfig& config);

void write_mask(const std::filesystem::path& path, const SelectionMask& mask);
SelectionMask read_mask(const std::filesystem::path& path);
void write_stats_csv(const std::filesystem::path& path, std::span<const ParamTensorStats> stats,
                     const SelectionMask& mask);

}  // namespace swiftpan
