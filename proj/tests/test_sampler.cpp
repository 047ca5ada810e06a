#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "test_util.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/sampler.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace swiftpan;

namespace {

std::vector<SampleFeature> to_features(const std::vector<oracle::Point>& pts) {
    std::vector<SampleFeature> f;
    for (const auto& p : pts) f.push_back({p.id, p.x});
    return f;
}

std::vector<oracle::Point> line(std::initializer_list<double> xs) {
    std::vector<oracle::Point> pts;
    int id = 0;
    for (double x : xs) pts.push_back({id++, {x}});
    return pts;
}

// Integer grid coordinates make equal distances (and so ties) common.
std::vector<oracle::Point> random_grid_points(std::mt19937_64& rng, int n, int dim, int span) {
    std::uniform_int_distribution<int> u(0, span);
    std::vector<oracle::Point> pts;
    std::vector<int> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), 100);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (int i = 0; i < n; ++i) {
        oracle::Vec x;
        for (int d = 0; d < dim; ++d) x.push_back(u(rng));
        pts.push_back({ids[static_cast<std::size_t>(i)], x});
    }
    return pts;
}

}  // namespace

TEST_CASE("density worked examples") {
    const auto two = compute_density(to_features(line({0.0, 2.0})), 2.0);
    CHECK(two.rho[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(two.rho[1] == doctest::Approx(0.367879).epsilon(1e-6));

    const auto three = compute_density(to_features(line({0.0, 1.0, 2.0})), 1.0);
    CHECK(three.rho[1] == doctest::Approx(2.0 * std::exp(-1.0)).epsilon(1e-12));
    CHECK(three.rho[0] == doctest::Approx(std::exp(-1.0) + std::exp(-4.0)).epsilon(1e-12));
    CHECK(three.rho[2] == doctest::Approx(three.rho[0]).epsilon(1e-12));

    const auto dup = compute_density(to_features(line({3.0, 3.0, 3.0})), 1.0);
    for (double r : dup.rho) CHECK(r == doctest::Approx(2.0));
}

TEST_CASE("auto sigma is the median pairwise distance") {
    const auto pts = line({0.0, 1.0, 3.0, 7.0});
    const auto d = compute_density(to_features(pts));
    CHECK(d.sigma == doctest::Approx(oracle::median_distance(pts)));
    CHECK(d.sigma == doctest::Approx(3.5));  // {1,2,3,4,6,7}
    const auto same = compute_density(to_features(line({1.0, 1.0})));
    CHECK(same.sigma == 1.0);
}

TEST_CASE("density requires unique ids and two samples") {
    CHECK_THROWS_AS(compute_density({{1, {0.0}}}), ConfigError);
    CHECK_THROWS_AS(compute_density({{1, {0.0}}, {1, {1.0}}}), ConfigError);
    CHECK_THROWS_AS(compute_density({{1, {0.0}}, {2, {1.0, 2.0}}}), ShapeError);
}

TEST_CASE("worked five point example matches the step-by-step executor") {
    const auto pts = line({0.0, 1.0, 2.0, 10.0, 11.0});
    const auto sub = da_fps(compute_density(to_features(pts)), 0.4, 0.5);
    const auto expect = oracle::brute_dafps(pts, 0.4, 0.5);
    CHECK(sub.ids == expect);
    REQUIRE(sub.ids.size() == 2);
    // sigma = median{1,1,1,2,8,9,9,10,10,11} = 8.5; x=11 (id 4) is the
    // sparsest, then x=0 (id 0) has the largest weighted distance.
    CHECK(sub.ids == std::vector<int>{4, 0});
}

TEST_CASE("da_fps matches the brute-force executor on random sets") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 5 + trial % 46;
        const auto pts = random_grid_points(rng, n, 1 + trial % 3, 6);
        const auto labeled = compute_density(to_features(pts));
        for (double alpha : {0.5, 0.0})
            for (double r : {0.2, 0.5, 1.0}) {
                if (std::floor(r * n + 1e-9) < 1) continue;
                CHECK(da_fps(labeled, r, alpha).ids == oracle::brute_dafps(pts, r, alpha));
            }
    }
}

TEST_CASE("alpha zero is classic farthest point sampling from the sparsest point") {
    const auto pts = line({0.0, 0.5, 1.0, 4.0, 9.0, 9.5});
    const auto labeled = compute_density(to_features(pts));
    const auto sub = da_fps(labeled, 1.0, 0.0);
    // sparsest is x=9.5, then plain farthest-first; x=0.5 and x=9 tie at
    // distance 0.5 in round five and the lower id wins.
    CHECK(sub.ids == std::vector<int>{5, 0, 3, 2, 1, 4});
    CHECK(sub.ids == oracle::brute_dafps(pts, 1.0, 0.0));
}

TEST_CASE("da_fps is invariant to input order") {
    std::mt19937_64 rng(7);
    auto pts = random_grid_points(rng, 40, 2, 20);
    const auto base = da_fps(compute_density(to_features(pts)), 0.25, 0.5).ids;
    for (int k = 0; k < 5; ++k) {
        std::shuffle(pts.begin(), pts.end(), rng);
        CHECK(da_fps(compute_density(to_features(pts)), 0.25, 0.5).ids == base);
    }
}

TEST_CASE("da_fps boundary cases") {
    const auto pts = line({0.0, 1.0, 5.0, 6.0});
    const auto labeled = compute_density(to_features(pts));
    auto all = da_fps(labeled, 1.0, 0.5).ids;
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<int>{0, 1, 2, 3});
    try {
        da_fps(labeled, 0.2, 0.5);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()) == "ratio too small for dataset");
    }
    CHECK_THROWS_AS(da_fps(labeled, 0.5, 1.5), ConfigError);
    CHECK(subset_size(0.03, 100) == 3);
    CHECK(subset_size(0.07, 100) == 7);  // 0.07 * 100 = 7.000000000000001
    CHECK(subset_size(0.29, 100) == 29);  // 0.29 * 100 = 28.999999999999996
}

TEST_CASE("random_sample is uniform and seed stable") {
    std::vector<int> ids(10);
    std::iota(ids.begin(), ids.end(), 0);
    CHECK(random_sample(ids, 0.5, 3).ids == random_sample(ids, 0.5, 3).ids);
    auto all = random_sample(ids, 1.0, 3).ids;
    std::sort(all.begin(), all.end());
    CHECK(all == ids);
    CHECK_THROWS_AS(random_sample(ids, 0.05, 1), ConfigError);

    std::vector<int> hits(10, 0);
    const int trials = 10000;
    for (int t = 0; t < trials; ++t)
        for (int id : random_sample(ids, 0.5, static_cast<std::uint64_t>(t)).ids) ++hits[static_cast<std::size_t>(id)];
    for (int h : hits) CHECK(std::abs(h / static_cast<double>(trials) - 0.5) <= 0.02);
}

TEST_CASE("mmd2 identities and direct double sum") {
    const auto f = to_features(line({0.0, 1.0, 2.5, 4.0}));
    CHECK(std::abs(mmd2(f, f, 1.0)) <= 1e-9);

    const std::vector<SampleFeature> far = {{10, {100.0}}, {11, {101.0}}};
    CHECK(mmd2(far, f, 1.0) > 0.5);

    const std::vector<SampleFeature> sub = {f[0], f[3]};
    const double direct = oracle::brute_mmd2({{0.0}, {4.0}}, {{0.0}, {1.0}, {2.5}, {4.0}}, 1.7);
    CHECK(mmd2(sub, f, 1.7) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(mmd2(sub, f, 1.7) >= -1e-12);
}

TEST_CASE("scene features have the documented layout") {
    const auto scenes = make_scenes(target_profile(), 6, 32, 4);
    CHECK(raw_features(scenes[0]).size() == 16 * 4 + 64);
    const auto f = featurize(scenes);
    REQUIRE(f.size() == 6);
    for (std::size_t d = 0; d < f[0].vec.size(); ++d) {
        double m = 0.0;
        for (const auto& x : f) m += x.vec[d];
        CHECK(std::abs(m / 6.0) < 1e-9);
    }
}

TEST_CASE("subset file round trip keeps selection order") {
    TempDir dir("subset");
    const EssenceSubset s{{7, 3, 11}, 0.03, 0.5, "dafps"};
    write_subset(dir / "subset.txt", s);
    CHECK(read_subset(dir / "subset.txt") == s.ids);
}
