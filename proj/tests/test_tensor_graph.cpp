#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "test_util.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/graph.hpp"
#include "swiftpan/tensor.hpp"

#include <cmath>

using namespace swiftpan;

TEST_CASE("tensor construction validates dims") {
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
    Tensor t({2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(t.reshaped({3, 2}).dim(0) == 3);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("pairwise sum is exact on small integers") {
    std::vector<float> v(1000);
    for (int i = 0; i < 1000; ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(i);
    CHECK(pairwise_sum(v) == 499500.0);
}

TEST_CASE("SWTN round trip and header layout") {
    Tensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(i) * 0.25f - 1.0f;
    const auto bytes = encode_swtn(t);
    REQUIRE(bytes.size() == 4 + 3 + 3 * 4 + 24 * 4);
    CHECK(bytes[0] == 'S');
    CHECK(bytes[3] == 'N');
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 3);
    CHECK(bytes[7] == 2);  // first dim, little endian
    CHECK(decode_swtn(bytes).identical(t));

    TempDir dir("swtn");
    write_swtn(dir / "t.swtn", t);
    CHECK(read_swtn(dir / "t.swtn").identical(t));

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_swtn(bad), IoError);
    auto short_payload = bytes;
    short_payload.pop_back();
    CHECK_THROWS_AS(decode_swtn(short_payload), IoError);
}

TEST_CASE("bicubic upsample keeps constants and average pool inverts it on constants") {
    Tensor c({2, 4, 4}, 0.3f);
    const Tensor up = upsample_bicubic(c, 4);
    CHECK(up.dim(1) == 16);
    for (float v : up.data()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));
    const Tensor down = average_pool(up, 4, 4);
    for (float v : down.data()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));
}

TEST_CASE("identity graph returns its input") {
    Graph g;
    const auto x = g.input("x");
    Tensor v({1, 2, 3, 3});
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] = static_cast<float>(i);
    CHECK(g.forward({{"x", v}}, x).identical(v));
}

TEST_CASE("l1 of a tensor with itself is zero") {
    Graph g;
    const auto a = g.input("a");
    const auto l = g.l1_loss(a, a);
    Tensor v({1, 1, 2, 2}, std::vector<float>{1, -2, 3, 4});
    CHECK(g.forward({{"a", v}}, l)[0] == 0.0f);
}

TEST_CASE("conv of ones with a ones kernel gives 9 at the centre") {
    Graph g;
    const auto x = g.input("x");
    const auto w = g.param("w", Tensor({1, 1, 3, 3}, 1.0f));
    const auto b = g.param("b", Tensor({1}, 0.0f));
    const auto y = g.conv2d(x, w, b, 1);
    const Tensor& out = g.forward({{"x", Tensor({1, 1, 5, 5}, 1.0f)}}, y);
    CHECK(out.at(0, 0, 2, 2) == 9.0f);
    CHECK(out.at(0, 0, 0, 0) == 4.0f);
    CHECK(out.at(0, 0, 0, 2) == 6.0f);
}

TEST_CASE("linear and quadratic gradients") {
    Graph g;
    Tensor init({2, 3}, std::vector<float>{1, -2, 3, 0.5f, -0.25f, 4});
    const auto w = g.param("w", init);
    SUBCASE("mean(w) -> 1/n everywhere") {
        const auto l = g.mean(w);
        g.forward({}, l);
        g.backward(l);
        for (float v : g.grad("w").data()) CHECK(v == doctest::Approx(1.0 / 6.0));
    }
    SUBCASE("mean(w*w) -> 2w/n") {
        const auto l = g.mean(g.mul(w, w));
        g.forward({}, l);
        g.backward(l);
        for (std::size_t i = 0; i < init.numel(); ++i) CHECK(g.grad("w")[i] == doctest::Approx(2.0 * init[i] / 6.0));
    }
}

TEST_CASE("backward before forward is a state error") {
    Graph g;
    const auto w = g.param("w", Tensor({2}, 1.0f));
    const auto l = g.mean(w);
    CHECK_THROWS_AS(g.backward(l), StateError);
    g.forward({}, l);
    g.clear_cache();
    CHECK_THROWS_AS(g.backward(l), StateError);
}

TEST_CASE("backward needs a scalar") {
    Graph g;
    const auto w = g.param("w", Tensor({2}, 1.0f));
    const auto r = g.relu(w);
    g.forward({}, r);
    CHECK_THROWS_AS(g.backward(r), StateError);
}

TEST_CASE("dim mismatch names the op") {
    Graph g;
    const auto a = g.input("a");
    const auto b = g.input("b");
    const auto s = g.add(a, b);
    try {
        g.forward({{"a", Tensor({1, 1, 2, 2})}, {"b", Tensor({1, 2, 2, 2})}}, s);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("1x2x2x2") != std::string::npos);
    }
}

TEST_CASE("unreachable leaf gets a zero gradient of its own dims") {
    Graph g;
    const auto w = g.param("w", Tensor({3}, 2.0f));
    g.param("unused", Tensor({2, 2}, 5.0f));
    const auto l = g.mean(g.mul(w, w));
    g.forward({}, l);
    g.backward(l);
    const Tensor& z = g.grad("unused");
    CHECK(z.dims() == Dims{2, 2});
    for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("frozen leaf gets a zero gradient") {
    Graph g;
    const auto w = g.param("w", Tensor({3}, 2.0f));
    g.params()[0].trainable = false;
    const auto l = g.mean(g.mul(w, w));
    g.forward({}, l);
    g.backward(l);
    for (float v : g.grad("w").data()) CHECK(v == 0.0f);
}

TEST_CASE("forward after clearing the cache matches a fresh graph bitwise") {
    auto a = oracle::build_probe_net(11);
    auto b = oracle::build_probe_net(11);
    const Tensor first = a.graph.forward(a.feed, a.loss);
    a.graph.clear_cache();
    const Tensor again = a.graph.forward(a.feed, a.loss);
    CHECK(first.identical(again));
    CHECK(first.identical(b.graph.forward(b.feed, b.loss)));
    a.graph.backward(a.loss);
    b.graph.backward(b.loss);
    for (const auto& e : a.graph.params().entries()) CHECK(a.graph.grad(e.name).identical(b.graph.grad(e.name)));
}

TEST_CASE("analytic gradients match central differences") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto res = oracle::gradient_check(seed, 60);
        CHECK(res.probes == 60);
        CHECK(res.max_rel < 1e-4);
        CHECK(res.per_param.size() == 9);
    }
}

TEST_CASE("parameter registry rejects duplicates and unknown names") {
    ParamRegistry r;
    r.add("a", Tensor({2}));
    CHECK_THROWS_AS(r.add("a", Tensor({2})), ConfigError);
    CHECK_THROWS_AS(r.index_of("b"), ConfigError);
    CHECK(r.total_scalars() == 2);
}
