#include <doctest.h>

#include <cmath>
#include <limits>

#include "depeg/errors.hpp"
#include "depeg/pin.hpp"
#include "depeg/rng.hpp"

using namespace depeg;
using namespace depeg::metrics;

namespace {

double log_poisson(std::uint64_t k, double rate) {
    return static_cast<double>(k) * std::log(rate) - rate - std::lgamma(static_cast<double>(k) + 1.0);
}

std::vector<PinBucket> simulate(const PinParams& p, std::size_t n, std::uint64_t seed) {
    Philox4x32 rng(seed, 0);
    std::vector<PinBucket> out;
    for (std::size_t d = 0; d < n; ++d) {
        double buy_rate = p.eps_b, sell_rate = p.eps_s;
        if (rng.bernoulli(p.alpha)) (rng.bernoulli(p.theta) ? sell_rate : buy_rate) += p.eps_i;
        out.push_back({static_cast<Timestamp>(d + 1) * 86400, rng.poisson(buy_rate), rng.poisson(sell_rate)});
    }
    return out;
}

} // namespace

TEST_CASE("pin formula") {
    CHECK(pin_value({1.0, 0.3, 5.0, 5.0, 5.0}) == 1.0 / 3.0);
    CHECK(pin_value({0.0, 0.3, 5.0, 2.0, 7.0}) == 0.0);
    CHECK(pin_value({0.5, 0.5, 10.0, 20.0, 30.0}) == doctest::Approx(5.0 / 55.0).epsilon(1e-15));
}

TEST_CASE("without information events the likelihood is two independent poissons") {
    const std::vector<PinBucket> b{{0, 3, 7}, {1, 0, 2}, {2, 11, 4}};
    const PinParams p{0.0, 0.4, 9.0, 2.5, 6.0};
    double want = 0.0;
    for (const auto& x : b) want += log_poisson(x.buys, 2.5) + log_poisson(x.sells, 6.0);
    CHECK(pin_likelihood(b, p) == doctest::Approx(want).epsilon(1e-13));

    const std::vector<PinBucket> empty{{0, 0, 0}};
    CHECK(pin_likelihood(empty, {0.0, 0.5, 1.0, 1.0, 1.0}) == doctest::Approx(-2.0).epsilon(1e-15));
}

TEST_CASE("likelihood is symmetric under swapping buys and sells") {
    Philox4x32 rng(1, 0);
    for (int k = 0; k < 50; ++k) {
        std::vector<PinBucket> b, swapped;
        for (int d = 0; d < 10; ++d) {
            const auto buys = rng.poisson(30), sells = rng.poisson(20);
            b.push_back({d, buys, sells});
            swapped.push_back({d, sells, buys});
        }
        const PinParams p{rng.uniform(), rng.uniform(), 1 + 50 * rng.uniform(), 1 + 50 * rng.uniform(),
                          1 + 50 * rng.uniform()};
        const PinParams q{p.alpha, 1.0 - p.theta, p.eps_i, p.eps_s, p.eps_b};
        CHECK(pin_likelihood(b, p) == doctest::Approx(pin_likelihood(swapped, q)).epsilon(1e-12));
    }
}

TEST_CASE("informed selling loads the theta branch") {
    // One bucket with many sells: favoured when theta (informed selling) is high.
    const std::vector<PinBucket> b{{0, 10, 60}};
    CHECK(pin_likelihood(b, {0.5, 0.9, 50, 10, 10}) > pin_likelihood(b, {0.5, 0.1, 50, 10, 10}));
}

TEST_CASE("invalid parameters give negative infinity") {
    const std::vector<PinBucket> b{{0, 1, 1}};
    const double ninf = -std::numeric_limits<double>::infinity();
    CHECK(pin_likelihood(b, {1.5, 0.5, 1, 1, 1}) == ninf);
    CHECK(pin_likelihood(b, {0.5, -0.1, 1, 1, 1}) == ninf);
    CHECK(pin_likelihood(b, {0.5, 0.5, -1, 1, 1}) == ninf);
    CHECK(pin_likelihood(b, {0.5, 0.5, 1, std::nan(""), 1}) == ninf);
}

TEST_CASE("estimate on pure noise gives a small PIN") {
    const auto b = simulate({0.0, 0.5, 0.0, 40.0, 40.0}, 200, 5);
    const auto est = estimate_pin(b);
    CHECK(est.pin < 0.05);
}

TEST_CASE("estimate ascends from every start") {
    const auto b = simulate({0.3, 0.4, 30.0, 20.0, 25.0}, 60, 6);
    const auto est = estimate_pin(b);
    CHECK(est.starts.size() >= 8);
    REQUIRE(est.start_log_likelihoods.size() == est.starts.size());
    for (double ll : est.start_log_likelihoods) CHECK(est.log_likelihood >= ll);
    CHECK(est.log_likelihood == doctest::Approx(pin_likelihood(b, est.params)).epsilon(1e-12));
    CHECK(est.pin == doctest::Approx(pin_value(est.params)).epsilon(1e-15));
}

TEST_CASE("estimate recovers planted parameters") {
    const PinParams truth{0.4, 0.1, 40.0, 50.0, 50.0};
    const auto est = estimate_pin(simulate(truth, 200, 7));
    CHECK(std::abs(est.pin - pin_value(truth)) < 0.05);
}

TEST_CASE("estimate needs two buckets") {
    const std::vector<PinBucket> one{{0, 3, 4}};
    CHECK_THROWS_AS(estimate_pin(one), ValidationError);
}

TEST_CASE("rolling pin") {
    const auto b = simulate({0.2, 0.5, 20.0, 30.0, 30.0}, 12, 8);
    const auto s = rolling_pin(b, 7);
    CHECK(s.size() == 6);
    CHECK(s.points.front().ts == b[6].ts);
    const auto whole = rolling_pin(b, b.size());
    REQUIRE(whole.size() == 1);
    CHECK(whole.points[0].value == estimate_pin(b).pin);
    CHECK(rolling_pin(std::span(b).first(3), 7).empty());

    for (double v : s.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("pin buckets classify by token direction") {
    const TokenId a("A"), b("B");
    const std::vector<TradeEvent> trades{{10, "x", b, 1, a, 1}, {20, "x", a, 1, b, 1}, {30, "x", a, 1, b, 1},
                                         {90000, "x", b, 1, a, 1}};
    const auto buckets = pin_buckets(trades, a, 86400);
    REQUIRE(buckets.size() == 2);
    CHECK(buckets[0].buys == 1);
    CHECK(buckets[0].sells == 2);
    CHECK(buckets[1].buys == 1);
    CHECK(buckets[1].sells == 0);
}
