#include "swiftpan/datagen.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace swiftpan {

namespace fs = std::filesystem;

void SensorProfile::validate() const {
    const std::string who = "profile '" + name + "'";
    if (bands < 1) throw ConfigError(who + ": bands must be >= 1");
    if (ratio < 2) throw ConfigError(who + ": ratio must be >= 2");
    if (!(blur_sigma > 0.0)) throw ConfigError(who + ": blur_sigma must be > 0");
    if (!(noise_sigma >= 0.0)) throw ConfigError(who + ": noise_sigma must be >= 0");
    if (static_cast<int>(spectral_weights.size()) != bands)
        throw ConfigError(who + ": expected " + std::to_string(bands) + " spectral_weights");
    double sum = 0.0;
    for (double w : spectral_weights) {
        if (w < 0.0) throw ConfigError(who + ": spectral_weights must be nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError(who + ": spectral_weights sum to " + format_double(sum));
    if (static_cast<int>(gain.size()) != bands || static_cast<int>(bias.size()) != bands)
        throw ConfigError(who + ": gain and bias need " + std::to_string(bands) + " entries");
}

SensorProfile parse_profile(const std::string& text, const std::string& origin) {
    const auto kv = parse_key_values(text, origin);
    SensorProfile p;
    for (const auto& [key, value] : kv) {
        const std::string what = origin + ": " + key;
        if (key == "name") p.name = value;
        else if (key == "bands") p.bands = static_cast<int>(parse_int(value, what));
        else if (key == "ratio") p.ratio = static_cast<int>(parse_int(value, what));
        else if (key == "spectral_weights") p.spectral_weights = parse_double_list(value, what);
        else if (key == "blur_sigma") p.blur_sigma = parse_double(value, what);
        else if (key == "noise_sigma") p.noise_sigma = parse_double(value, what);
        else if (key == "gain") p.gain = parse_double_list(value, what);
        else if (key == "bias") p.bias = parse_double_list(value, what);
        else throw ConfigError(origin + ": unknown profile key '" + key + "'");
    }
    if (p.gain.empty()) p.gain.assign(p.bands, 1.0);
    if (p.bias.empty()) p.bias.assign(p.bands, 0.0);
    if (p.spectral_weights.empty()) p.spectral_weights.assign(p.bands, 1.0 / p.bands);
    p.validate();
    return p;
}

SensorProfile load_profile(const fs::path& path) { return parse_profile(read_text(path), path.string()); }

std::string format_profile(const SensorProfile& p) {
    auto list = [](const std::vector<double>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
        return s;
    };
    std::ostringstream os;
    os << "name = " << p.name << '\n'
       << "bands = " << p.bands << '\n'
       << "ratio = " << p.ratio << '\n'
       << "spectral_weights = " << list(p.spectral_weights) << '\n'
       << "blur_sigma = " << format_double(p.blur_sigma) << '\n'
       << "noise_sigma = " << format_double(p.noise_sigma) << '\n'
       << "gain = " << list(p.gain) << '\n'
       << "bias = " << list(p.bias) << '\n';
    return os.str();
}

namespace {

// Resamples a 4-anchor spectral curve (blue, green, red, NIR) to n bands.
std::vector<double> resample_curve(const std::array<double, 4>& anchors, int n) {
    std::vector<double> out(n);
    for (int b = 0; b < n; ++b) {
        const double pos = n == 1 ? 0.0 : 3.0 * b / (n - 1);
        const int lo = std::min(static_cast<int>(pos), 2);
        const double f = pos - lo;
        out[b] = anchors[lo] * (1.0 - f) + anchors[lo + 1] * f;
    }
    return out;
}

std::vector<double> normalized(std::vector<double> v) {
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    for (double& x : v) x /= s;
    return v;
}

}  // namespace

SensorProfile source_profile(int bands) {
    SensorProfile p;
    p.name = "source";
    p.bands = bands;
    p.spectral_weights = normalized(resample_curve({0.15, 0.30, 0.30, 0.25}, bands));
    p.blur_sigma = 1.0;
    p.noise_sigma = 0.005;
    p.gain.assign(bands, 1.0);
    p.bias.assign(bands, 0.0);
    return p;
}

SensorProfile target_profile(int bands) {
    SensorProfile p;
    p.name = "target";
    p.bands = bands;
    p.spectral_weights = normalized(resample_curve({0.05, 0.20, 0.30, 0.45}, bands));
    p.blur_sigma = 1.6;
    p.noise_sigma = 0.01;
    p.gain = resample_curve({0.80, 0.85, 1.10, 1.25}, bands);
    p.bias = resample_curve({0.07, 0.00, 0.03, -0.03}, bands);
    return p;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined key
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

Tensor generate_scene(std::uint64_t seed, int size, int bands, int ratio) {
    if (bands < 1) throw ConfigError("generate_scene: bands must be >= 1");
    if (ratio < 1 || size < ratio || size % ratio != 0)
        throw ConfigError("generate_scene: size " + std::to_string(size) + " not divisible by ratio " +
                          std::to_string(ratio));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Land-cover classes: vegetation, built-up, water, bare soil.
    static constexpr std::array<std::array<double, 4>, 4> kClasses{{
        {0.10, 0.18, 0.12, 0.55},
        {0.38, 0.40, 0.42, 0.40},
        {0.16, 0.20, 0.10, 0.04},
        {0.28, 0.34, 0.42, 0.48},
    }};
    static constexpr std::array<double, 4> kClassMass{0.55, 0.25, 0.12, 0.08};
    auto draw_class = [&] {
        double u = uni(rng);
        for (std::size_t c = 0; c < kClassMass.size(); ++c) {
            if (u < kClassMass[c]) return c;
            u -= kClassMass[c];
        }
        return kClassMass.size() - 1;
    };

    const auto base = resample_curve(kClasses[draw_class()], bands);
    Tensor out({bands, size, size});
    std::vector<double> field(static_cast<std::size_t>(bands) * size * size);
    for (int b = 0; b < bands; ++b)
        std::fill_n(field.begin() + static_cast<std::ptrdiff_t>(b) * size * size, size * size, base[b]);

    auto add_plane = [&](const std::vector<double>& signature, auto&& shape) {
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double s = shape(y, x);
                for (int b = 0; b < bands; ++b)
                    field[(static_cast<std::size_t>(b) * size + y) * size + x] += signature[b] * s;
            }
        }
    };

    // band-correlated illumination ramp
    {
        const double theta = 2.0 * M_PI * uni(rng);
        const double amp = 0.12 * uni(rng);
        std::vector<double> sig(bands);
        for (int b = 0; b < bands; ++b) sig[b] = amp * (1.0 + 0.2 * gauss(rng));
        const double c = std::cos(theta), s = std::sin(theta);
        add_plane(sig, [&](int y, int x) { return ((x - size / 2.0) * c + (y - size / 2.0) * s) / size; });
    }

    // large and small Gaussian blobs, each carrying another class's spectrum
    auto blob = [&](double sigma_lo, double sigma_hi, double amp_scale) {
        const double cy = uni(rng) * size, cx = uni(rng) * size;
        const double sigma = sigma_lo + (sigma_hi - sigma_lo) * uni(rng);
        const auto other = resample_curve(kClasses[draw_class()], bands);
        const double amp = amp_scale * (0.5 + 0.5 * uni(rng));
        std::vector<double> sig(bands);
        for (int b = 0; b < bands; ++b) sig[b] = amp * (other[b] - base[b]);
        add_plane(sig, [&](int y, int x) {
            const double dy = y - cy, dx = x - cx;
            return std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        });
    };
    const int n_large = 3 + static_cast<int>(uni(rng) * 4);
    for (int i = 0; i < n_large; ++i) blob(size / 12.0, size / 4.0, 0.9);
    const int n_small = 4 + static_cast<int>(uni(rng) * 8);
    for (int i = 0; i < n_small; ++i) blob(0.6, 1.6, 0.8);

    // sharp field boundaries
    const int n_edges = 1 + static_cast<int>(uni(rng) * 2);
    for (int i = 0; i < n_edges; ++i) {
        const double theta = 2.0 * M_PI * uni(rng);
        const double off = (uni(rng) - 0.5) * size * 0.8;
        const auto other = resample_curve(kClasses[draw_class()], bands);
        std::vector<double> sig(bands);
        for (int b = 0; b < bands; ++b) sig[b] = 0.5 * (other[b] - base[b]) + 0.04 * gauss(rng);
        const double c = std::cos(theta), s = std::sin(theta);
        add_plane(sig, [&](int y, int x) {
            const double d = (x - size / 2.0) * c + (y - size / 2.0) * s - off;
            return 1.0 / (1.0 + std::exp(-d / 0.4));
        });
    }

    for (std::size_t i = 0; i < field.size(); ++i) out[i] = static_cast<float>(std::clamp(field[i], 0.0, 1.0));
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("gaussian_kernel: sigma must be > 0");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

Tensor gaussian_blur(const Tensor& chw, double sigma) {
    if (chw.rank() != 3) throw ShapeError("gaussian_blur expects [C,H,W], got " + dims_to_string(chw.dims()));
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    Tensor out(chw.dims());
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += k[i + r] * chw.at(ch, y, std::clamp(x + i, 0, w - 1));
                tmp[static_cast<std::size_t>(y) * w + x] = s;
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
                out.at(ch, y, x) = static_cast<float>(s);
            }
        }
    }
    return out;
}

Tensor decimate(const Tensor& chw, int ratio) {
    if (chw.rank() != 3) throw ShapeError("decimate expects [C,H,W], got " + dims_to_string(chw.dims()));
    if (ratio < 1 || chw.dim(1) % ratio != 0 || chw.dim(2) % ratio != 0)
        throw ShapeError("decimate: " + dims_to_string(chw.dims()) + " not divisible by ratio " + std::to_string(ratio));
    const int h = chw.dim(1) / ratio, w = chw.dim(2) / ratio, off = ratio / 2;
    Tensor out({chw.dim(0), h, w});
    for (int c = 0; c < chw.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = chw.at(c, y * ratio + off, x * ratio + off);
    return out;
}

ScenePair wald_degrade(const Tensor& gt, const SensorProfile& profile, std::uint64_t seed, int id) {
    profile.validate();
    if (gt.rank() != 3 || gt.dim(0) != profile.bands)
        throw ShapeError("wald_degrade: gt " + dims_to_string(gt.dims()) + " does not have " +
                         std::to_string(profile.bands) + " bands");
    const int bands = gt.dim(0), h = gt.dim(1), w = gt.dim(2);

    Tensor radiometric(gt.dims());
    for (int b = 0; b < bands; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                radiometric.at(b, y, x) = static_cast<float>(profile.gain[b] * gt.at(b, y, x) + profile.bias[b]);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double ns = profile.noise_sigma;

    Tensor lrms = decimate(gaussian_blur(radiometric, profile.blur_sigma), profile.ratio);
    for (auto& v : lrms.data()) v = static_cast<float>(std::clamp(v + ns * noise(rng), 0.0, 1.0));

    Tensor pan({1, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int b = 0; b < bands; ++b) s += profile.spectral_weights[b] * gt.at(b, y, x);
            pan.at(0, y, x) = static_cast<float>(std::clamp(s + ns * noise(rng), 0.0, 1.0));
        }
    }
    return ScenePair{gt, std::move(lrms), std::move(pan), profile.name, id};
}

std::vector<ScenePair> make_scenes(const SensorProfile& profile, int n, int size, std::uint64_t seed) {
    profile.validate();
    if (n < 1) throw ConfigError("dataset size must be >= 1");
    std::vector<ScenePair> out;
    out.reserve(n);
    for (int id = 0; id < n; ++id) {
        const Tensor gt = generate_scene(derive_seed(seed, 2 * static_cast<std::uint64_t>(id)), size, profile.bands,
                                         profile.ratio);
        out.push_back(wald_degrade(gt, profile, derive_seed(seed, 2 * static_cast<std::uint64_t>(id) + 1), id));
    }
    return out;
}

void write_scenes(const std::vector<ScenePair>& scenes, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError(out_dir.string() + ": " + ec.message());
    std::ostringstream manifest;
    for (const auto& s : scenes) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "scene_%05d", s.id);
        const std::string gt = std::string(stem) + "_gt.swtn";
        const std::string lrms = std::string(stem) + "_lrms.swtn";
        const std::string pan = std::string(stem) + "_pan.swtn";
        write_swtn(out_dir / gt, s.gt);
        write_swtn(out_dir / lrms, s.lrms);
        write_swtn(out_dir / pan, s.pan);
        manifest << s.id << '\t' << gt << '\t' << lrms << '\t' << pan << '\t' << s.sensor << '\n';
    }
    write_text(out_dir / "manifest.tsv", manifest.str());
}

std::vector<ScenePair> make_dataset(const SensorProfile& profile, int n, int size, std::uint64_t seed,
                                    const fs::path& out_dir) {
    auto scenes = make_scenes(profile, n, size, seed);
    write_scenes(scenes, out_dir);
    return scenes;
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
    const std::string text = read_text(manifest);
    const fs::path dir = manifest.parent_path();
    std::vector<ManifestEntry> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string col;
        while (std::getline(ls, col, '\t')) cols.push_back(col);
        if (cols.size() != 5)
            throw IoError(manifest.string() + ":" + std::to_string(lineno) + ": expected 5 tab-separated columns");
        ManifestEntry e;
        e.id = static_cast<int>(parse_int(cols[0], manifest.string() + ":" + std::to_string(lineno)));
        auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : dir / p; };
        e.gt = resolve(cols[1]);
        e.lrms = resolve(cols[2]);
        e.pan = resolve(cols[3]);
        e.sensor = cols[4];
        out.push_back(std::move(e));
    }
    if (out.empty()) throw IoError(manifest.string() + ": empty manifest");
    return out;
}

std::vector<ScenePair> load_scenes(const fs::path& manifest) {
    std::vector<ScenePair> out;
    for (const auto& e : read_manifest(manifest)) {
        ScenePair s{read_swtn(e.gt), read_swtn(e.lrms), read_swtn(e.pan), e.sensor, e.id};
        if (s.gt.rank() != 3 || s.lrms.rank() != 3 || s.pan.rank() != 3 || s.pan.dim(0) != 1 ||
            s.lrms.dim(0) != s.gt.dim(0) || s.pan.dim(1) != s.gt.dim(1) || s.pan.dim(2) != s.gt.dim(2))
            throw IoError(e.gt.string() + ": scene " + std::to_string(e.id) + " has inconsistent dims");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace swiftpan
