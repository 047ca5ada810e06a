#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"

#include "swiftpan/datagen.hpp"
#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"

#include <cmath>
#include <fstream>

using namespace swiftpan;

namespace {

SensorProfile clean_profile(int bands) {
    SensorProfile p = source_profile(bands);
    p.noise_sigma = 0.0;
    return p;
}

double band_mean(const std::vector<ScenePair>& scenes, int b, bool lrms) {
    double s = 0.0;
    for (const auto& sc : scenes) s += mean(channel(lrms ? sc.lrms : sc.pan, lrms ? b : 0));
    return s / static_cast<double>(scenes.size());
}

}  // namespace

TEST_CASE("generate_scene is deterministic, shaped and clipped") {
    const Tensor a = generate_scene(42, 32, 4);
    const Tensor b = generate_scene(42, 32, 4);
    CHECK(a.identical(b));
    CHECK(a.dims() == Dims{4, 32, 32});
    CHECK(min_value(a) >= 0.0f);
    CHECK(max_value(a) <= 1.0f);
    CHECK_FALSE(a.identical(generate_scene(43, 32, 4)));
    CHECK(generate_scene(1, 16, 8).dim(0) == 8);
}

TEST_CASE("size must be divisible by the ratio") {
    CHECK_THROWS_AS(generate_scene(1, 30, 4, 4), ConfigError);
}

TEST_CASE("constant field is a fixed point of the clean degradation") {
    const SensorProfile p = clean_profile(4);
    const Tensor gt({4, 32, 32}, 0.4f);
    const ScenePair s = wald_degrade(gt, p, 9);
    CHECK(s.lrms.dims() == Dims{4, 8, 8});
    CHECK(s.pan.dims() == Dims{1, 32, 32});
    for (float v : s.lrms.data()) CHECK(v == doctest::Approx(0.4).epsilon(1e-5));
    for (float v : s.pan.data()) CHECK(v == doctest::Approx(0.4).epsilon(1e-5));
}

TEST_CASE("blur and decimate of a delta match a direct separable Gaussian") {
    const double sigma = 1.3;
    const int size = 32, ratio = 4;
    Tensor delta({1, size, size}, 0.0f);
    const int cy = 14, cx = 18;
    delta.at(0, cy, cx) = 1.0f;
    const Tensor lr = decimate(gaussian_blur(delta, sigma), ratio);

    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) norm += std::exp(-i * i / (2.0 * sigma * sigma));
    auto g = [&](int d) { return std::abs(d) > radius ? 0.0 : std::exp(-d * d / (2.0 * sigma * sigma)) / norm; };
    for (int y = 0; y < size / ratio; ++y)
        for (int x = 0; x < size / ratio; ++x) {
            const int sy = y * ratio + ratio / 2, sx = x * ratio + ratio / 2;
            CHECK(lr.at(0, y, x) == doctest::Approx(g(sy - cy) * g(sx - cx)).epsilon(1e-5));
        }
}

TEST_CASE("gaussian kernel is normalized") {
    double s = 0.0;
    for (double v : gaussian_kernel(1.6)) s += v;
    CHECK(s == doctest::Approx(1.0));
    CHECK(gaussian_kernel(1.6).size() == 2 * 5 + 1);
}

TEST_CASE("degradation is deterministic and stays in range") {
    const Tensor gt = generate_scene(5, 32, 4);
    const ScenePair a = wald_degrade(gt, target_profile(), 77, 3);
    const ScenePair b = wald_degrade(gt, target_profile(), 77, 3);
    CHECK(a.lrms.identical(b.lrms));
    CHECK(a.pan.identical(b.pan));
    CHECK(min_value(a.lrms) >= 0.0f);
    CHECK(max_value(a.lrms) <= 1.0f);
    CHECK(a.sensor == "target");
}

TEST_CASE("make_dataset writes a manifest line per scene and reloads bitwise") {
    TempDir dir("gen");
    const auto scenes = make_dataset(source_profile(), 10, 16, 3, dir.path);
    std::ifstream in(dir / "manifest.tsv");
    std::string line;
    int lines = 0;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#' && line.rfind("id\t", 0) != 0) ++lines;
    CHECK(lines == 10);
    const auto back = load_scenes(dir / "manifest.tsv");
    REQUIRE(back.size() == 10);
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == scenes[i].id);
        CHECK(back[i].gt.identical(scenes[i].gt));
        CHECK(back[i].lrms.identical(scenes[i].lrms));
        CHECK(back[i].pan.identical(scenes[i].pan));
        CHECK(back[i].sensor == "source");
    }

    TempDir again("gen2");
    make_dataset(source_profile(), 10, 16, 3, again.path);
    CHECK(read_text(dir / "manifest.tsv") == read_text(again / "manifest.tsv"));
    CHECK(read_text(dir / "scene_00004_lrms.swtn") == read_text(again / "scene_00004_lrms.swtn"));
}

TEST_CASE("missing scene file is reported with its path") {
    TempDir dir("gen_missing");
    make_dataset(source_profile(), 2, 16, 3, dir.path);
    std::filesystem::remove(dir / "scene_00001_pan.swtn");
    try {
        load_scenes(dir / "manifest.tsv");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("scene_00001_pan.swtn") != std::string::npos);
    }
}

TEST_CASE("profiles differing only in spectral weights give different PAN means") {
    SensorProfile a = clean_profile(4), b = clean_profile(4);
    b.spectral_weights = {0.7, 0.1, 0.1, 0.1};
    const auto sa = make_scenes(a, 16, 32, 11);
    const auto sb = make_scenes(b, 16, 32, 11);
    CHECK(std::abs(band_mean(sa, 0, false) - band_mean(sb, 0, false)) > 1e-3);
    for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].gt.identical(sb[i].gt));
}

TEST_CASE("source and target profiles shift band means by more than the noise level") {
    const auto src = make_scenes(source_profile(), 64, 32, 5);
    const auto tgt = make_scenes(target_profile(), 64, 32, 5);
    const double noise = std::max(source_profile().noise_sigma, target_profile().noise_sigma);
    double worst = 1.0;
    for (int b = 0; b < 4; ++b) worst = std::min(worst, std::abs(band_mean(src, b, true) - band_mean(tgt, b, true)));
    CHECK(worst > noise);
}

TEST_CASE("profile text round trip and validation") {
    const SensorProfile t = target_profile(8);
    const SensorProfile back = parse_profile(format_profile(t));
    CHECK(back.bands == 8);
    CHECK(back.spectral_weights.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(back.gain[i] == t.gain[i]);
    CHECK_THROWS_AS(parse_profile("name = x\nbands = 4\nspectral_weights = 0.5,0.5,0.5,0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_profile(format_profile(t) + "\nblur_sigma = 0\n"), ConfigError);
}

TEST_CASE("derived seeds differ per stream") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(9, 4) == derive_seed(9, 4));
}
