#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "test_util.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"
#include "swiftpan/pipeline.hpp"
#include "swiftpan/sensitivity.hpp"

#include <cmath>
#include <random>

using namespace swiftpan;

namespace {

std::vector<Tensor> grads(std::initializer_list<std::vector<float>> batches) {
    std::vector<Tensor> out;
    for (const auto& b : batches) out.emplace_back(Dims{static_cast<int>(b.size())}, b);
    return out;
}

oracle::Grads as_doubles(const std::vector<Tensor>& g) {
    oracle::Grads out;
    for (const auto& t : g) out.emplace_back(t.data().begin(), t.data().end());
    return out;
}

ParamTensorStats stat(std::string name, std::size_t count, double mag, double std, double gdc) {
    ParamTensorStats s;
    s.name = std::move(name);
    s.scalar_count = count;
    s.mag = mag;
    s.std = std;
    s.gdc = gdc;
    return s;
}

std::vector<ScenePair> small_subset(int n) { return make_scenes(target_profile(), n, 16, 21); }

}  // namespace

TEST_CASE("MAG worked examples") {
    CHECK(compute_mag(grads({{0, 0, 0}, {0, 0, 0}})) == 0.0);
    CHECK(compute_mag(grads({{-0.2f, -0.2f}, {0.4f, 0.4f}})) == doctest::Approx(0.3).epsilon(1e-7));
}

TEST_CASE("GDC worked examples") {
    CHECK(compute_gdc(grads({{1, 2, 3}, {0.5f, 4, 1}})) == 1.0);
    CHECK(compute_gdc(grads({{1, -1, 2, -2}, {-3, 3, 0, 0}})) == 0.5);
    CHECK(compute_gdc(grads({{1, 1, 1, -1}, {1, -1, -1, -1}})) == 0.75);
    CHECK(compute_gdc(grads({{0, 0}, {0, 0}})) == 0.5);  // no sign information
    CHECK(compute_gdc(grads({{0, 0, 2}, {0, 0, 0}})) == 0.75);
}

TEST_CASE("STD worked examples") {
    CHECK(compute_std(grads({{0.3f, 0.3f, 0.3f}, {-1, -1, -1}})) == 0.0);
    CHECK(compute_std(grads({{1, -1}})) == 1.0);
    CHECK(compute_std(grads({{2, -2}, {5, 5}})) == doctest::Approx(std::sqrt(2.0)));
    CHECK(compute_std(grads({{7}})) == 0.0);
}

TEST_CASE("statistics match the scalar oracle on random gradients") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g(0.0, 1e-3);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 1 + trial % 8, n = 1 + trial % 13;
        std::vector<Tensor> gs;
        for (int i = 0; i < m; ++i) {
            Tensor t({n});
            for (auto& v : t.data()) v = static_cast<float>(g(rng) + (trial % 3 == 0 ? 5e-4 : 0.0));
            gs.push_back(t);
        }
        const auto d = as_doubles(gs);
        CHECK(std::abs(compute_mag(gs) - oracle::mag(d)) <= 1e-9);
        CHECK(std::abs(compute_gdc(gs) - oracle::gdc(d)) <= 1e-9);
        CHECK(std::abs(compute_std(gs) - oracle::stdev(d)) <= 1e-9);
    }
}

TEST_CASE("composite score examples") {
    SensitivityConfig cfg;
    SUBCASE("extremal tensor scores one") {
        std::vector<ParamTensorStats> s = {stat("a", 1, 5.0, 0.0, 1.0), stat("b", 1, 1.0, 2.0, 0.5)};
        composite_score(s, cfg);
        CHECK(s[0].score == doctest::Approx(1.0));
        CHECK(s[1].score == doctest::Approx(0.0));
    }
    SUBCASE("all metrics equal gives 0.5 everywhere") {
        std::vector<ParamTensorStats> s = {stat("a", 1, 2.0, 3.0, 0.7), stat("b", 1, 2.0, 3.0, 0.7),
                                           stat("c", 1, 2.0, 3.0, 0.7)};
        composite_score(s, cfg);
        for (const auto& x : s) {
            CHECK(x.mag_n == 0.5);
            CHECK(x.score == doctest::Approx(0.5));
        }
    }
    SUBCASE("direct formula") {
        // mag_n 0.6, std_n 0.3, gdc_n 0.9 for the middle tensor
        std::vector<ParamTensorStats> s = {stat("lo", 1, 0.0, 0.0, 0.5), stat("mid", 1, 0.6, 0.3, 0.5 + 0.9 * 0.5),
                                           stat("hi", 1, 1.0, 1.0, 1.0)};
        composite_score(s, cfg);
        CHECK(s[1].score == doctest::Approx((0.6 + 0.7 + 0.9) / 3.0).epsilon(1e-12));
        CHECK(s[1].score == doctest::Approx(0.7333).epsilon(1e-4));
    }
    SUBCASE("weights must sum to one") {
        std::vector<ParamTensorStats> s = {stat("a", 1, 1, 1, 1), stat("b", 1, 0, 0, 0.5)};
        cfg.gamma_gdc = 0.5;
        CHECK_THROWS_AS(composite_score(s, cfg), ConfigError);
    }
    SUBCASE("needs two tensors") {
        std::vector<ParamTensorStats> s = {stat("a", 1, 1, 1, 1)};
        CHECK_THROWS_AS(composite_score(s, cfg), ConfigError);
    }
}

TEST_CASE("sharpness examples") {
    const std::vector<double> flat = {0.5, 0.5, 0.5};
    CHECK(sharpness(flat) == 0.0);
    const std::vector<double> level = {0.4, 0.4, 0.4};
    CHECK(std::abs(sharpness(level)) <= 1e-12);
    const std::vector<double> two = {0.0, 1.0};
    CHECK(sharpness(two) == doctest::Approx(1.0));
    const std::vector<double> four = {0.0, 0.0, 0.0, 1.0};
    CHECK(sharpness(four) == doctest::Approx(1.4330).epsilon(1e-4));
    CHECK(sharpness(four) == doctest::Approx(std::sqrt(3.0) / 4.0 + 1.0).epsilon(1e-12));
}

TEST_CASE("dynamic ratio clips and interpolates") {
    SensitivityConfig cfg;
    CHECK(dynamic_ratio(-1.0, cfg) == 0.10);
    CHECK(dynamic_ratio(0.0, cfg) == 0.10);
    CHECK(dynamic_ratio(1.5, cfg) == doctest::Approx(0.60));
    CHECK(dynamic_ratio(9.0, cfg) == doctest::Approx(0.60));
    CHECK(dynamic_ratio(0.75, cfg) == doctest::Approx(0.35));
    double prev = 0.0;
    for (double h = -0.5; h < 2.0; h += 0.01) {
        const double p = dynamic_ratio(h, cfg);
        CHECK(p >= prev);
        CHECK(p >= cfg.eta_min);
        CHECK(p <= cfg.eta_max);
        prev = p;
    }
}

TEST_CASE("scores, sharpness and ratio match the oracle on random inputs") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SensitivityConfig cfg;
    cfg.alpha_mag = 0.5;
    cfg.beta_std = 0.2;
    cfg.gamma_gdc = 0.3;
    for (int trial = 0; trial < 40; ++trial) {
        const int t = 2 + trial % 9;
        std::vector<ParamTensorStats> s;
        oracle::Vec mags, stds, gdcs;
        for (int i = 0; i < t; ++i) {
            s.push_back(stat("p" + std::to_string(i), 10, u(rng), u(rng), 0.5 + 0.5 * u(rng)));
            mags.push_back(s.back().mag);
            stds.push_back(s.back().std);
            gdcs.push_back(s.back().gdc);
        }
        composite_score(s, cfg);
        const auto mn = oracle::minmax(mags), sn = oracle::minmax(stds), gn = oracle::minmax(gdcs);
        for (int i = 0; i < t; ++i) {
            const auto k = static_cast<std::size_t>(i);
            CHECK(std::abs(s[k].score - (0.5 * mn[k] + 0.2 * (1.0 - sn[k]) + 0.3 * gn[k])) <= 1e-9);
        }
        const double h = sharpness(std::span<const ParamTensorStats>(s));
        CHECK(std::abs(h - oracle::sharpness(mn)) <= 1e-9);
        CHECK(std::abs(dynamic_ratio(h, cfg) - oracle::p_select(h, 0.1, 0.6, 0.0, 1.5)) <= 1e-9);
    }
}

TEST_CASE("greedy selection") {
    std::vector<ParamTensorStats> s = {stat("a", 100, 0, 0, 0), stat("b", 50, 0, 0, 0), stat("c", 50, 0, 0, 0)};
    s[0].score = 0.9;
    s[1].score = 0.8;
    s[2].score = 0.1;
    const auto m = select(s, 0.6);
    CHECK(m.selected == std::vector<std::string>{"a", "b"});
    CHECK(m.scalar_fraction == doctest::Approx(0.75));
    CHECK(select(s, 1.0).selected.size() == 3);
    CHECK(select(s, 0.01).selected == std::vector<std::string>{"a"});
    CHECK(select(s, 0.5).selected == std::vector<std::string>{"a"});  // exactly 100/200

    s[2].score = 0.8;  // tie with b: registry order
    CHECK(select(s, 0.6).selected == std::vector<std::string>{"a", "b"});

    std::vector<ParamTensorStats> dom = {stat("small", 4, 0, 0, 0), stat("big", 1000, 0, 0, 0)};
    dom[0].score = 0.2;
    dom[1].score = 0.9;
    CHECK(select(dom, 0.1).selected == std::vector<std::string>{"big"});
}

TEST_CASE("random mask uses the same stopping rule and is seeded") {
    std::vector<ParamTensorStats> s;
    for (int i = 0; i < 10; ++i) s.push_back(stat("t" + std::to_string(i), 10, 0, 0, 0));
    const auto a = random_mask(s, 0.3, 4), b = random_mask(s, 0.3, 4);
    CHECK(a.selected == b.selected);
    CHECK(a.selected.size() == 3);
    CHECK(a.scalar_fraction == doctest::Approx(0.3));
}

TEST_CASE("microbatch plans") {
    const std::vector<int> ids = {5, 1, 9, 3, 7, 2, 8};
    const auto p = plan_microbatches(ids, 3);
    REQUIRE(p.size() == 3);
    CHECK(p.groups[0] == std::vector<int>{5, 1, 9});
    CHECK(p.groups[1] == std::vector<int>{3, 7});
    CHECK(p.groups[2] == std::vector<int>{2, 8});
    CHECK(plan_microbatches(ids, 20).size() == 7);
    CHECK_THROWS_AS(plan_microbatches({}, 2), ConfigError);
}

TEST_CASE("collect_gradients is a pure probe") {
    Model model = Model::build({}, 4);
    const Model before = model;
    model.params()[2].trainable = false;
    const auto subset = small_subset(6);
    std::vector<int> ids;
    for (const auto& s : subset) ids.push_back(s.id);
    const auto g = collect_gradients(model, subset, plan_microbatches(ids, 3));
    CHECK(model.params().identical(before.params()));
    CHECK_FALSE(model.params()[2].trainable);
    REQUIRE(g.per_microbatch.size() == model.params().size());
    for (const auto& per : g.per_microbatch) CHECK(per.size() == 3);
    // frozen tensors are still probed
    double s = 0.0;
    for (float v : g.per_microbatch[2][0].data()) s += std::abs(v);
    CHECK(s > 0.0);
}

TEST_CASE("microbatch gradient is the mean of per-scene gradients") {
    Model model = Model::build({}, 4);
    const auto subset = small_subset(4);
    std::vector<int> ids;
    for (const auto& s : subset) ids.push_back(s.id);
    const auto joint = collect_gradients(model, subset, plan_microbatches(ids, 1));
    const auto single = collect_gradients(model, subset, plan_microbatches(ids, 4));
    for (std::size_t p = 0; p < joint.names.size(); ++p) {
        const Tensor& j = joint.per_microbatch[p][0];
        for (std::size_t k = 0; k < j.numel(); ++k) {
            double m = 0.0;
            for (int i = 0; i < 4; ++i) m += single.per_microbatch[p][static_cast<std::size_t>(i)][k];
            CHECK(std::abs(j[k] - m / 4.0) <= 1e-6);
        }
    }
}

TEST_CASE("analyze produces a consistent mask and the files round trip") {
    Model model = Model::build(RunConfig{}.model, 4);
    const auto subset = small_subset(10);
    SensitivityConfig cfg;
    const auto rep = analyze(model, subset, cfg);
    CHECK(rep.stats.size() == model.params().size());
    CHECK(rep.mask.p_select >= cfg.eta_min);
    CHECK(rep.mask.p_select <= cfg.eta_max);
    CHECK(rep.mask.scalar_fraction >= rep.mask.p_select - 1e-12);
    CHECK(rep.mask.scalar_fraction <= 1.0);
    for (const auto& s : rep.stats) {
        CHECK(s.gdc >= 0.5);
        CHECK(s.gdc <= 1.0);
    }

    TempDir dir("mask");
    write_mask(dir / "mask.txt", rep.mask);
    const auto back = read_mask(dir / "mask.txt");
    CHECK(back.selected == rep.mask.selected);
    CHECK(back.p_select == rep.mask.p_select);
    CHECK(back.sharpness == rep.mask.sharpness);
    CHECK(back.scalar_fraction == rep.mask.scalar_fraction);
    CHECK(read_text(dir / "mask.txt").starts_with("p_select="));

    write_stats_csv(dir / "stats.csv", rep.stats, rep.mask);
    CHECK(read_text(dir / "stats.csv").starts_with("name,scalar_count,mag,gdc,std,mag_n,gdc_n,std_n,score,selected\n"));
}

TEST_CASE("statistics do not depend on microbatch order") {
    const auto g = grads({{1, -2, 3}, {0.5f, 0.25f, -1}, {0, 0, 4}});
    const auto r = grads({{0, 0, 4}, {1, -2, 3}, {0.5f, 0.25f, -1}});
    CHECK(compute_mag(g) == doctest::Approx(compute_mag(r)).epsilon(1e-15));
    CHECK(compute_gdc(g) == doctest::Approx(compute_gdc(r)).epsilon(1e-15));
    CHECK(compute_std(g) == doctest::Approx(compute_std(r)).epsilon(1e-15));
}
