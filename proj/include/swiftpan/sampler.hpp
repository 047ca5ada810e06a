#pragma once

#include "swiftpan/datagen.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace swiftpan {

struct SampleFeature {
    int id = 0;
    std::vector<double> vec;
};

// LRMS average-pooled to 4x4 per band followed by PAN pooled to 8x8,
// flattened: 16*bands + 64 values, not yet normalized.
std::vector<double> raw_features(const ScenePair& scene);

// raw_features of every scene, z-scored per dimension over the dataset.
// Dimensions with zero spread map to 0.
std::vector<SampleFeature> featurize(std::span<const ScenePair> scenes);

double euclidean(std::span<const double> a, std::span<const double> b);

struct DensityLabeledSet {
    std::vector<SampleFeature> features;  // sorted by id
    std::vector<double> rho;
    double sigma = 1.0;
};

// Gaussian KDE rho_i = sum_{j != i} exp(-(d_ij / sigma)^2). With no sigma the
// median pairwise distance is used; a zero median falls back to 1.
DensityLabeledSet compute_density(std::vector<SampleFeature> features, std::optional<double> sigma = std::nullopt);

double median_pairwise_distance(std::span<const SampleFeature> features);

struct EssenceSubset {
    std::vector<int> ids;  // selection order
    double ratio = 0.0;
    double alpha_density = 0.0;
    std::string method;
};

// floor(r * N) with a 1e-9 guard against representation error in r * N.
std::size_t subset_size(double ratio, std::size_t n);

// Relative tolerance under which two densities or weights count as tied.
inline constexpr double kTieTolerance = 1e-12;

// Density-aware farthest point sampling. Seeds at the lowest density, then
// repeatedly adds the unselected point maximizing
//   d_min(x, t) * (1 - alpha * rho / max rho).
// Every argmin/argmax tie (within kTieTolerance) goes to the lowest scene id.
EssenceSubset da_fps(const DensityLabeledSet& labeled, double ratio, double alpha_density);

// Uniform sampling without replacement, deterministic in seed.
EssenceSubset random_sample(std::vector<int> ids, double ratio, std::uint64_t seed);

// Biased MMD^2 with kernel k(x, y) = exp(-|x - y|^2 / sigma^2).
double mmd2(std::span<const SampleFeature> subset, std::span<const SampleFeature> full, double sigma);

std::vector<SampleFeature> select_features(std::span<const SampleFeature> all, std::span<const int> ids);

void write_subset(const std::filesystem::path& path, const EssenceSubset& subset);
std::vector<int> read_subset(const std::filesystem::path& path);

}  // namespace swiftpan
