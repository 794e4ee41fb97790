#include <doctest.h>

#include <cmath>
#include <numeric>

#include "depeg/errors.hpp"
#include "depeg/rng.hpp"
#include "depeg/stableswap.hpp"
#include "oracles/stableswap_bisection.hpp"

using namespace depeg;
using namespace depeg::stableswap;

namespace {

PoolState pool(std::vector<double> b, double amp = 100.0, double fee = 0.0, double supply = 0.0) {
    return PoolState{std::move(b), amp, fee, supply};
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

} // namespace

TEST_CASE("balanced pools have D equal to the sum") {
    for (double amp : {1.0, 100.0, 5000.0}) {
        const auto sol = compute_d(pool({1e6, 1e6, 1e6}, amp));
        CHECK(sol.d == 3e6);
    }
}

TEST_CASE("D satisfies the invariant and matches the bisection oracle") {
    const auto sol = compute_d(pool({2e6, 1e6}, 100));
    CHECK(invariant_residual(std::vector<double>{2e6, 1e6}, 100, sol.d) < 1e-10 * sol.d);
    CHECK(rel(sol.d, static_cast<double>(oracle::solve_d(std::vector<double>{2e6, 1e6}, 100))) < 1e-12);

    const auto small = compute_d(pool({1, 1}, 1));
    CHECK(rel(small.d, static_cast<double>(oracle::solve_d(std::vector<double>{1, 1}, 1))) < 1e-12);
}

TEST_CASE("D matches the oracle on random pools") {
    Philox4x32 rng(17, 0);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(3);
        std::vector<double> x(n);
        for (auto& v : x) v = std::exp(rng.uniform() * 12.0 - 2.0);
        const double amp = std::exp(rng.uniform() * 9.0 - 2.0);
        const auto sol = compute_d(pool(x, amp));
        CHECK(rel(sol.d, static_cast<double>(oracle::solve_d(x, amp))) < 1e-11);
        CHECK(sol.residual < 1e-10 * sol.d);
    }
}

TEST_CASE("extreme imbalance converges through the fallback bracket") {
    const std::vector<double> x{1e9, 1.0};
    for (double amp : {1.0, 10.0, 2000.0}) {
        const auto sol = compute_d(pool(x, amp));
        CHECK(sol.residual < 1e-10 * sol.d);
        CHECK(rel(sol.d, static_cast<double>(oracle::solve_d(x, amp))) < 1e-10);
    }
}

TEST_CASE("D lies between n times the geometric mean and the sum") {
    Philox4x32 rng(18, 0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x{std::exp(rng.uniform() * 10), std::exp(rng.uniform() * 10), std::exp(rng.uniform() * 10)};
        const double d = compute_d(pool(x, 50)).d;
        const double gm = std::cbrt(x[0] * x[1] * x[2]);
        CHECK(d >= 3 * gm * (1 - 1e-12));
        CHECK(d <= (x[0] + x[1] + x[2]) * (1 + 1e-12));
    }
}

TEST_CASE("D can fall below the largest balance at extreme imbalance") {
    const double d = compute_d(pool({1e9, 1.0}, 1.0)).d;
    CHECK(d < 1e9);
}

TEST_CASE("D is homogeneous of degree one") {
    Philox4x32 rng(19, 0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x{1 + rng.uniform() * 1e6, 1 + rng.uniform() * 1e6};
        const double c = std::exp(rng.uniform() * 10 - 5);
        std::vector<double> y{x[0] * c, x[1] * c};
        CHECK(rel(compute_d(pool(y, 30)).d, c * compute_d(pool(x, 30)).d) < 1e-9);
    }
}

TEST_CASE("pool validation") {
    CHECK_THROWS_AS(compute_d(pool({1, 0}, 10)), DomainError);
    CHECK_THROWS_AS(compute_d(pool({1}, 10)), ValidationError);
    CHECK_THROWS_AS(compute_d(pool({1, 1}, 0)), ValidationError);
    CHECK_THROWS_AS(compute_d(pool({1, 1}, 10, 0.02)), ValidationError);
    CHECK_THROWS_AS(compute_d(pool({1, -1}, 10)), ValidationError);
}

TEST_CASE("get_dy basics") {
    const auto s = pool({1e6, 1e6}, 100);
    CHECK(get_dy(s, 0, 1, 0.0) == 0.0);
    double prev_ratio = 0.0;
    for (double dx : {1e5, 1e4, 1e3, 1.0}) {
        const double dy = get_dy(s, 0, 1, dx);
        CHECK(dy <= dx);
        CHECK(dy / dx >= prev_ratio);
        prev_ratio = dy / dx;
    }
    CHECK(prev_ratio == doctest::Approx(1.0).epsilon(1e-8));
    CHECK_THROWS_AS(get_dy(s, 0, 0, 1.0), ValidationError);
    CHECK_THROWS_AS(get_dy(s, 0, 1, -1.0), ValidationError);
}

TEST_CASE("get_dy agrees with the oracle and preserves the invariant") {
    Philox4x32 rng(20, 0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x{1e5 + rng.uniform() * 1e7, 1e5 + rng.uniform() * 1e7, 1e5 + rng.uniform() * 1e7};
        const double amp = 1 + rng.uniform() * 1000;
        const auto s = pool(x, amp);
        const std::size_t i = rng.below(3), j = (i + 1 + rng.below(2)) % 3;
        const double dx = x[i] * rng.uniform() * 2;
        const auto r = apply_swap(s, i, j, dx);
        const double d = compute_d(s).d;
        CHECK(invariant_residual(r.state.balances, amp, d) < 1e-10 * d);
        std::vector<double> moved = x;
        moved[i] += dx;
        const double y = static_cast<double>(oracle::solve_y(moved, j, amp, oracle::solve_d(x, amp)));
        CHECK(std::abs(r.state.balances[j] - y) <= 1e-9 * x[j]);
    }
}

TEST_CASE("large swaps never drain the output token") {
    const auto s = pool({1e6, 1e6}, 100, 0.0004);
    const double dy = get_dy(s, 0, 1, 1e12);
    CHECK(dy < 1e6);
    CHECK(dy > 0.0);
}

TEST_CASE("fees are charged on the output and stay in the pool") {
    const auto s = pool({1e6, 1e6}, 100, 0.004);
    const auto zero_fee = pool({1e6, 1e6}, 100, 0.0);
    CHECK(get_dy(s, 0, 1, 1e4) == doctest::Approx(get_dy(zero_fee, 0, 1, 1e4) * 0.996).epsilon(1e-14));
    const auto r = apply_swap(s, 0, 1, 1e4);
    CHECK(compute_d(r.state).d > compute_d(s).d);
}

TEST_CASE("virtual price") {
    const auto s = pool({1e6, 1e6, 1e6}, 100, 0.0004, 3e6);
    CHECK(virtual_price(s) == 1.0);
    const auto there = apply_swap(s, 0, 1, 5e4);
    const auto back = apply_swap(there.state, 1, 0, there.dy);
    CHECK(virtual_price(back.state) > virtual_price(s));

    auto scaled = s;
    for (auto& b : scaled.balances) b *= 7.5;
    scaled.lp_supply *= 7.5;
    CHECK(virtual_price(scaled) == doctest::Approx(virtual_price(s)).epsilon(1e-14));
    CHECK_THROWS_AS(virtual_price(pool({1, 1}, 10, 0, 0)), DomainError);
}

TEST_CASE("virtual price never decreases under fee-charging swaps") {
    Philox4x32 rng(21, 0);
    auto s = pool({1e6, 2e6, 1.5e6}, 200, 0.0004, 4.5e6);
    double vp = virtual_price(s);
    for (int k = 0; k < 1000; ++k) {
        const std::size_t i = rng.below(3), j = (i + 1 + rng.below(2)) % 3;
        s = apply_swap(s, i, j, s.balances[i] * 0.05 * rng.uniform()).state;
        const double next = virtual_price(s);
        CHECK(next >= vp);
        vp = next;
    }
}

TEST_CASE("lp share price") {
    CHECK(lp_share_price(pool({100, 100}, 10, 0, 200), std::vector<double>{1, 1}) == 1.0);
    CHECK(lp_share_price(pool({100, 100}, 10, 0, 200), std::vector<double>{1, 0.5}) == 0.75);
    CHECK(lp_share_price(pool({0, 0}, 10, 0, 200), std::vector<double>{1, 1}) == 0.0);
    const std::vector<TokenId> tokens{TokenId("A"), TokenId("B")};
    try {
        lp_share_price(pool({1, 1}, 10, 0, 2), tokens, {{TokenId("A"), 1.0}});
        FAIL("expected an error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("B") != std::string::npos);
    }
    CHECK(lp_share_price(pool({1, 3}, 10, 0, 2), tokens, {{TokenId("A"), 1.0}, {TokenId("B"), 0.5}}) == 1.25);
}

TEST_CASE("leverage chi") {
    CHECK(leverage_chi(pool({5e5, 5e5, 5e5}, 250)) == doctest::Approx(250).epsilon(1e-12));
    Philox4x32 rng(22, 0);
    for (int k = 0; k < 50; ++k) {
        const auto s = pool({1 + rng.uniform() * 1e6, 1 + rng.uniform() * 1e6}, 80);
        CHECK(leverage_chi(s) < 80.0);
    }
}

TEST_CASE("marginal price") {
    CHECK(marginal_price(pool({1e6, 1e6}, 100), 0, 1) == doctest::Approx(1.0).epsilon(1e-6));
    const auto lo = marginal_price(pool({4e6, 1e6}, 10), 0, 1);
    const auto hi = marginal_price(pool({4e6, 1e6}, 1000), 0, 1);
    CHECK(lo < hi);
    CHECK(hi < 1.0);
    const auto s = pool({3e6, 1e6, 2e6}, 60, 0.003);
    CHECK(marginal_price(s, 0, 1) * marginal_price(s, 1, 0) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("finite-difference and analytic marginal prices agree") {
    Philox4x32 rng(23, 0);
    for (int k = 0; k < 100; ++k) {
        const auto s = pool({1e4 + rng.uniform() * 1e6, 1e4 + rng.uniform() * 1e6, 1e4 + rng.uniform() * 1e6},
                            1 + rng.uniform() * 500, 0.0004);
        CHECK(marginal_price(s, 0, 2) == doctest::Approx(spot_price(s, 0, 2)).epsilon(1e-7));
    }
}

TEST_CASE("balanced liquidity keeps virtual price") {
    const auto s = pool({1e6, 3e6}, 100, 0, 3.9e6);
    const auto up = apply_balanced_liquidity(s, 0.25);
    CHECK(up.lp_supply == doctest::Approx(3.9e6 * 1.25));
    CHECK(virtual_price(up) == doctest::Approx(virtual_price(s)).epsilon(1e-13));
    CHECK_THROWS_AS(apply_balanced_liquidity(s, -1.0), ValidationError);
}
