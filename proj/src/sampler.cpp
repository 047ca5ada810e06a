#include "swiftpan/sampler.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace swiftpan {

std::vector<double> raw_features(const ScenePair& scene) {
    const Tensor ms = average_pool(scene.lrms, 4, 4);
    const Tensor pan = average_pool(scene.pan, 8, 8);
    std::vector<double> v(ms.data().begin(), ms.data().end());
    v.insert(v.end(), pan.data().begin(), pan.data().end());
    return v;
}

std::vector<SampleFeature> featurize(std::span<const ScenePair> scenes) {
    std::vector<SampleFeature> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back({s.id, raw_features(s)});
    if (out.empty()) return out;
    const std::size_t dim = out.front().vec.size();
    const double n = static_cast<double>(out.size());
    for (std::size_t k = 0; k < dim; ++k) {
        double mu = 0.0;
        for (const auto& f : out) mu += f.vec[k];
        mu /= n;
        double var = 0.0;
        for (const auto& f : out) var += (f.vec[k] - mu) * (f.vec[k] - mu);
        const double sd = std::sqrt(var / n);
        for (auto& f : out) f.vec[k] = sd > 0.0 ? (f.vec[k] - mu) / sd : 0.0;
    }
    return out;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("euclidean: feature lengths differ");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

namespace {

void check_features(std::span<const SampleFeature> f, const char* who) {
    for (const auto& x : f) {
        if (x.vec.size() != f.front().vec.size()) throw ShapeError(std::string(who) + ": feature dimensions differ");
        for (double v : x.vec)
            if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite feature in scene " + std::to_string(x.id));
    }
}

}  // namespace

double median_pairwise_distance(std::span<const SampleFeature> features) {
    std::vector<double> d;
    d.reserve(features.size() * (features.size() - 1) / 2);
    for (std::size_t i = 0; i < features.size(); ++i)
        for (std::size_t j = i + 1; j < features.size(); ++j) d.push_back(euclidean(features[i].vec, features[j].vec));
    if (d.empty()) return 0.0;
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + mid, d.end());
    const double upper = d[mid];
    if (d.size() % 2 == 1) return upper;
    const double lower = *std::max_element(d.begin(), d.begin() + mid);
    return 0.5 * (lower + upper);
}

DensityLabeledSet compute_density(std::vector<SampleFeature> features, std::optional<double> sigma) {
    if (features.size() < 2) throw ConfigError("compute_density: need at least 2 samples");
    check_features(features, "compute_density");
    std::sort(features.begin(), features.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < features.size(); ++i)
        if (features[i].id == features[i - 1].id) throw ConfigError("compute_density: duplicate id " + std::to_string(features[i].id));

    DensityLabeledSet out;
    if (sigma) {
        if (!(*sigma > 0.0)) throw ConfigError("compute_density: sigma must be > 0");
        out.sigma = *sigma;
    } else {
        out.sigma = median_pairwise_distance(features);
        if (!(out.sigma > 0.0)) {
            warn("all samples identical; median pairwise distance is 0, using sigma = 1");
            out.sigma = 1.0;
        }
    }
    const std::size_t n = features.size();
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = euclidean(features[i].vec, features[j].vec);
    out.rho.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double q = dist[i * n + j] / out.sigma;
            out.rho[i] += std::exp(-q * q);
        }
    }
    out.features = std::move(features);
    return out;
}

std::size_t subset_size(double ratio, std::size_t n) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

EssenceSubset da_fps(const DensityLabeledSet& labeled, double ratio, double alpha_density) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("da_fps: ratio must be in (0, 1]");
    if (!(alpha_density >= 0.0 && alpha_density <= 1.0)) throw ConfigError("da_fps: alpha_density must be in [0, 1]");
    const auto& f = labeled.features;
    const std::size_t n = f.size();
    if (labeled.rho.size() != n) throw ShapeError("da_fps: rho length differs from feature count");
    const std::size_t k = subset_size(ratio, n);
    if (k == 0) throw ConfigError("ratio too small for dataset");

    // Features are sorted by id, so the first index reaching an extremum is
    // the lowest id. Values within a relative 1e-12 count as tied so that
    // summation-order rounding cannot override the id rule.
    auto beats = [](double a, double b) { return a - b > kTieTolerance * std::max(std::abs(a), std::abs(b)); };
    const double max_rho = *std::max_element(labeled.rho.begin(), labeled.rho.end());
    std::vector<double> weight(n);
    for (std::size_t i = 0; i < n; ++i) weight[i] = 1.0 - alpha_density * (max_rho > 0.0 ? labeled.rho[i] / max_rho : 0.0);

    std::size_t seed = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (beats(labeled.rho[seed], labeled.rho[i])) seed = i;

    EssenceSubset out{{}, ratio, alpha_density, "dafps"};
    std::vector<bool> taken(n, false);
    std::vector<double> d_min(n, std::numeric_limits<double>::infinity());
    std::size_t next = seed;
    while (true) {
        taken[next] = true;
        out.ids.push_back(f[next].id);
        if (out.ids.size() == k) break;
        for (std::size_t i = 0; i < n; ++i)
            if (!taken[i]) d_min[i] = std::min(d_min[i], euclidean(f[i].vec, f[next].vec));
        double best = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            const double w = d_min[i] * weight[i];
            if (best < 0.0 || beats(w, best)) {
                best = w;
                next = i;
            }
        }
    }
    return out;
}

EssenceSubset random_sample(std::vector<int> ids, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("random_sample: ratio must be in (0, 1]");
    const std::size_t k = subset_size(ratio, ids.size());
    if (k == 0) throw ConfigError("ratio too small for dataset");
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(k);
    return EssenceSubset{std::move(ids), ratio, 0.0, "random"};
}

double mmd2(std::span<const SampleFeature> subset, std::span<const SampleFeature> full, double sigma) {
    if (subset.empty() || full.empty()) throw ConfigError("mmd2: both sets must be nonempty");
    if (!(sigma > 0.0)) throw ConfigError("mmd2: sigma must be > 0");
    auto mean_kernel = [sigma](std::span<const SampleFeature> a, std::span<const SampleFeature> b) {
        double s = 0.0;
        for (const auto& x : a) {
            for (const auto& y : b) {
                const double q = euclidean(x.vec, y.vec) / sigma;
                s += std::exp(-q * q);
            }
        }
        return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
    };
    return mean_kernel(subset, subset) + mean_kernel(full, full) - 2.0 * mean_kernel(subset, full);
}

std::vector<SampleFeature> select_features(std::span<const SampleFeature> all, std::span<const int> ids) {
    std::vector<SampleFeature> out;
    for (int id : ids) {
        auto it = std::find_if(all.begin(), all.end(), [id](const auto& f) { return f.id == id; });
        if (it == all.end()) throw ConfigError("unknown scene id " + std::to_string(id));
        out.push_back(*it);
    }
    return out;
}

void write_subset(const std::filesystem::path& path, const EssenceSubset& subset) {
    std::ostringstream os;
    for (int id : subset.ids) os << id << '\n';
    write_text(path, os.str());
}

std::vector<int> read_subset(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::vector<int> ids;
    std::set<int> seen;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const int id = static_cast<int>(parse_int(line, path.string()));
        if (!seen.insert(id).second) throw IoError(path.string() + ": duplicate id " + line);
        ids.push_back(id);
    }
    if (ids.empty()) throw IoError(path.string() + ": empty subset");
    return ids;
}

}  // namespace swiftpan
