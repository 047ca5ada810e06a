#pragma once

#include "swiftpan/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace swiftpan {

// Acquisition characteristics of one simulated sensor. Two profiles that
// differ in spectral response, PSF, radiometry or noise define a domain shift.
struct SensorProfile {
    std::string name = "sensor";
    int bands = 4;
    int ratio = 4;
    std::vector<double> spectral_weights;  // PAN mixing weights, sum to 1
    double blur_sigma = 1.0;               // Gaussian PSF width, pixels
    double noise_sigma = 0.0;              // additive noise std
    std::vector<double> gain;              // per-band radiometric gain
    std::vector<double> bias;              // per-band radiometric offset

    void validate() const;
};

SensorProfile parse_profile(const std::string& text, const std::string& origin = "<profile>");
SensorProfile load_profile(const std::filesystem::path& path);
std::string format_profile(const SensorProfile& p);

// Built-in source and target sensors used by the pipeline defaults.
SensorProfile source_profile(int bands = 4);
SensorProfile target_profile(int bands = 4);

struct ScenePair {
    Tensor gt;    // [bands, H, W]
    Tensor lrms;  // [bands, H/ratio, W/ratio]
    Tensor pan;   // [1, H, W]
    std::string sensor;
    int id = 0;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Smooth synthetic multi-band scene in [0,1]: a land-cover class sets the base
// spectrum, Gaussian blobs and a band-correlated ramp add structure, sharp
// field edges and small blobs add detail. Deterministic in seed.
Tensor generate_scene(std::uint64_t seed, int size, int bands, int ratio = 4);

// Normalized 1-D Gaussian kernel truncated at 3 sigma.
std::vector<double> gaussian_kernel(double sigma);
// Separable blur of each [C,H,W] plane with edge replication.
Tensor gaussian_blur(const Tensor& chw, double sigma);
// Keeps pixel (ratio/2 + ratio*i, ratio/2 + ratio*j).
Tensor decimate(const Tensor& chw, int ratio);

ScenePair wald_degrade(const Tensor& gt, const SensorProfile& profile, std::uint64_t seed, int id = 0);

// Scenes of one dataset; scene i draws its streams from (seed, i) only.
std::vector<ScenePair> make_scenes(const SensorProfile& profile, int n, int size, std::uint64_t seed);

struct ManifestEntry {
    int id = 0;
    std::filesystem::path gt, lrms, pan;  // relative to the manifest directory when written
    std::string sensor;
};

// Persists scenes as SWTN files under out_dir plus out_dir/manifest.tsv.
std::vector<ScenePair> make_dataset(const SensorProfile& profile, int n, int size, std::uint64_t seed,
                                    const std::filesystem::path& out_dir);

void write_scenes(const std::vector<ScenePair>& scenes, const std::filesystem::path& out_dir);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
std::vector<ScenePair> load_scenes(const std::filesystem::path& manifest);

}  // namespace swiftpan
