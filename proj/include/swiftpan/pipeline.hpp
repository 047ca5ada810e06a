#pragma once

#include "swiftpan/adaptation.hpp"
#include "swiftpan/datagen.hpp"
#include "swiftpan/metrics.hpp"
#include "swiftpan/model.hpp"
#include "swiftpan/sampler.hpp"
#include "swiftpan/sensitivity.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace swiftpan {

struct RunConfig {
    std::filesystem::path out_dir = "swift_run";
    std::uint64_t seed = 7;

    SensorProfile source = source_profile();
    SensorProfile target = target_profile();
    int size = 32;
    int n_source = 256;
    int n_target = 512;
    int n_val = 32;

    // Benchmark defaults: a deeper tiny_residual than the bare model default
    // gives the selector more than six tensors to rank.
    ModelConfig model{Arch::TinyResidual, 4, 16, 5, 4};
    AdaptConfig pretrain{20, 2e-3, 16, OptimizerKind::Adam, 0};

    double sample_ratio = 0.03;
    double alpha_density = 0.5;
    std::optional<double> sigma;  // nullopt = median heuristic

    SensitivityConfig sensitivity;
    AdaptConfig adapt{100, 3e-3, 16, OptimizerKind::Adam, 0};  // shared by every arm, full retrain included

    void validate() const;
};

// Applies `key = value` overrides (same names as the long CLI flags with
// dashes replaced by underscores) on top of `base`.
RunConfig apply_run_config(RunConfig base, const std::map<std::string, std::string>& kv);

// Stage seeds are derived from the global seed; one stream per stage.
enum class Stream : std::uint64_t {
    SourceData = 1, TargetData, ValData, ModelInit, Pretrain, Adapt, RandomMask, RandomSubset,
};
std::uint64_t stage_seed(std::uint64_t seed, Stream s);

double mean_l1(Model& model, std::span<const ScenePair> scenes);

std::vector<ScenePair> gather(std::span<const ScenePair> scenes, std::span<const int> ids);

struct Timing {
    double wall_seconds = 0.0;
    double cpu_seconds = 0.0;
    std::size_t scene_passes = 0;
};

struct ArmResult {
    std::string name;
    std::vector<double> reduced;  // SAM, ERGAS, SCC, Q2N means
    std::vector<double> full;     // D_lambda, D_s, HQNR means
    double val_l1 = 0.0;
    Timing timing;
};

ArmResult evaluate_arm(const std::string& name, Model& model, std::span<const ScenePair> val, const Timing& timing);

// In-memory experiment state shared by the pipeline, ablations and tests.
struct Experiment {
    RunConfig config;
    std::vector<ScenePair> source, target, val;
    Model pretrained;
    AdaptResult pretrain_result;
};

Experiment prepare_experiment(const RunConfig& config);

struct SwiftOutcome {
    EssenceSubset subset;
    std::vector<ScenePair> subset_scenes;
    SensitivityReport report;
    Model model;
    AdaptResult adapt_result;
    Timing timing;  // sampling + analysis + adaptation
};

// DA-FPS on the target training set, sensitivity probe, masked adaptation.
SwiftOutcome run_swift(const Experiment& exp);

// Random tensor mask with the SWIFT scalar budget, adapted on the same subset.
ArmResult run_random_mask_arm(const Experiment& exp, const SwiftOutcome& swift, Model* adapted = nullptr);

ArmResult run_full_retrain_arm(const Experiment& exp, Model* adapted = nullptr);

struct PipelineResult {
    std::vector<ArmResult> arms;  // direct, swift, random_mask, full_retrain
    SelectionMask mask;
    EssenceSubset subset;
};

// gen-data(source) -> pretrain -> gen-data(target) -> sample -> analyze ->
// adapt -> eval, writing every artifact under config.out_dir plus
// summary.csv (deterministic) and timing.csv.
PipelineResult run_pipeline(const RunConfig& config);

std::string summary_csv(std::span<const ArmResult> arms);
std::string timing_csv(std::span<const ArmResult> arms);

struct SamplingAblationRow {
    double ratio = 0.0;
    std::string method;
    std::size_t subset_size = 0;
    double mmd2_mean = 0.0;
    double mmd2_std = 0.0;
    int trials = 0;
};

std::vector<SamplingAblationRow> ablation_sampling(std::span<const SampleFeature> features, std::optional<double> sigma,
                                                   double alpha_density, std::span<const double> ratios,
                                                   int random_trials, std::uint64_t seed);
std::string sampling_ablation_csv(std::span<const SamplingAblationRow> rows);

struct RatioAblationRow {
    std::string selection;  // "fixed" or "dynamic"
    double p_select = 0.0;
    double scalar_fraction = 0.0;
    std::size_t tensors = 0;
    double hqnr = 0.0;
    double q2n = 0.0;
    double val_l1 = 0.0;
    double adapt_seconds = 0.0;
};

// Fixed p_select 0.1 .. 1.0 plus the dynamic ratio, all ranked by the same
// sensitivity scores and adapted on the same subset.
std::vector<RatioAblationRow> ablation_ratio(const Experiment& exp, const SwiftOutcome& swift);
std::string ratio_ablation_csv(std::span<const RatioAblationRow> rows);

}  // namespace swiftpan
