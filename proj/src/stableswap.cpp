#include "depeg/stableswap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "depeg/errors.hpp"

namespace depeg::stableswap {

namespace {

constexpr int kMaxIterations = 255;
constexpr double kRelTol = 1e-10;

double ann(double amp, std::size_t n) { return amp * std::pow(static_cast<double>(n), static_cast<double>(n)); }

// D^{n+1} / (n^n prod(x)), accumulated as D * prod(D / (n x_i)) to stay in range.
double d_product(std::span<const double> x, double d) {
    const double n = static_cast<double>(x.size());
    double dp = d;
    for (double xi : x) dp *= d / (n * xi);
    return dp;
}

void check_index(const PoolState& s, std::size_t i, std::size_t j) {
    if (i >= s.n() || j >= s.n()) throw ValidationError("token index out of range");
    if (i == j) throw ValidationError("swap requires distinct token indices");
}

} // namespace

void validate(const PoolState& s) {
    if (s.n() < 2) throw ValidationError("pool needs at least two tokens");
    if (!(s.amp > 0.0) || !std::isfinite(s.amp)) throw ValidationError("amplification A must be > 0");
    if (!(s.fee >= 0.0 && s.fee <= 0.01)) throw ValidationError("fee must lie in [0, 0.01]");
    if (!(s.lp_supply >= 0.0)) throw ValidationError("lp_supply must be >= 0");
    for (double b : s.balances) {
        if (!(b >= 0.0) || !std::isfinite(b)) throw ValidationError("balances must be finite and >= 0");
    }
}

double invariant_residual(std::span<const double> x, double amp, double d) {
    const double a = ann(amp, x.size());
    const double sum = std::accumulate(x.begin(), x.end(), 0.0);
    return std::abs(a * sum + d - a * d - d_product(x, d)) / a;
}

InvariantSolution compute_d(const PoolState& s) {
    validate(s);
    for (double b : s.balances) {
        if (!(b > 0.0)) throw DomainError("compute_d: zero balance");
    }
    const std::span<const double> x = s.balances;
    const double n = static_cast<double>(s.n());
    const double a = ann(s.amp, s.n());
    const double sum = std::accumulate(x.begin(), x.end(), 0.0);

    InvariantSolution sol;
    double d = sum;
    bool converged = false;
    double prev_step = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= kMaxIterations; ++it) {
        const double dp = d_product(x, d);
        const double next = (a * sum + n * dp) * d / ((a - 1.0) * d + (n + 1.0) * dp);
        const double step = std::abs(next - d);
        sol.iterations = it;
        if (!std::isfinite(next) || next <= 0.0 || (it > 8 && step >= prev_step)) break; // oscillating
        d = next;
        prev_step = step;
        if (step <= kRelTol * d) {
            converged = true;
            break;
        }
    }

    if (!converged) {
        // f(D) is >= 0 at n * geomean(x) and <= 0 at sum(x).
        double log_prod = 0.0;
        for (double xi : x) log_prod += std::log(xi);
        double lo = n * std::exp(log_prod / n);
        double hi = sum;
        auto f = [&](double dd) { return sum + dd / a - dd - d_product(x, dd) / a; };
        for (int it = 0; it < 400 && hi - lo > kRelTol * 1e-3 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (f(mid) >= 0.0 ? lo : hi) = mid;
            ++sol.iterations;
        }
        d = 0.5 * (lo + hi);
    }

    sol.d = d;
    sol.residual = invariant_residual(x, s.amp, d);
    if (!std::isfinite(d) || !(sol.residual < kRelTol * d)) {
        throw NumericalError("compute_d did not converge: residual " + std::to_string(sol.residual) + " at D=" +
                             std::to_string(d));
    }
    return sol;
}

double solve_balance(const PoolState& s, std::size_t i, std::size_t j, double x_i_new, double d) {
    check_index(s, i, j);
    const std::size_t nt = s.n();
    const double n = static_cast<double>(nt);
    const double a = ann(s.amp, nt);
    // y^2 + b y - c = 0 with the other balances fixed.
    double s_other = 0.0;
    double c = d;
    for (std::size_t k = 0; k < nt; ++k) {
        if (k == j) continue;
        const double xk = k == i ? x_i_new : s.balances[k];
        if (!(xk > 0.0)) throw DomainError("solve_balance: non-positive balance for token " + std::to_string(k));
        s_other += xk;
        c *= d / (n * xk);
    }
    c *= d / (n * a);
    const double b = s_other + d / a - d;
    const double disc = std::sqrt(b * b + 4.0 * c);
    double y = b >= 0.0 ? 2.0 * c / (b + disc) : 0.5 * (disc - b);
    // Newton polish on the quadratic.
    for (int it = 0; it < 3; ++it) {
        const double g = y * y + b * y - c;
        const double dg = 2.0 * y + b;
        if (dg == 0.0) break;
        y -= g / dg;
    }
    if (!(y > 0.0) || !std::isfinite(y)) throw DomainError("solve_balance: infeasible balance");
    return y;
}

double get_dy(const PoolState& s, std::size_t i, std::size_t j, double dx) {
    check_index(s, i, j);
    if (!(dx >= 0.0) || !std::isfinite(dx)) throw ValidationError("get_dy: dx must be >= 0");
    if (dx == 0.0) return 0.0;
    const double d = compute_d(s).d;
    const double y = solve_balance(s, i, j, s.balances[i] + dx, d);
    const double gross = s.balances[j] - y;
    if (!(y > 0.0) || !(gross >= 0.0)) throw DomainError("get_dy: swap drains the pool");
    return gross * (1.0 - s.fee);
}

SwapResult apply_swap(const PoolState& s, std::size_t i, std::size_t j, double dx) {
    SwapResult r{s, get_dy(s, i, j, dx)};
    if (!(r.dy < s.balances[j])) throw DomainError("apply_swap: swap drains the pool");
    r.state.balances[i] += dx;
    r.state.balances[j] -= r.dy;
    return r;
}

PoolState apply_balanced_liquidity(const PoolState& s, double fraction) {
    if (!(fraction > -1.0) || !std::isfinite(fraction)) throw ValidationError("liquidity fraction must be > -1");
    PoolState out = s;
    for (double& b : out.balances) b += b * fraction;
    out.lp_supply += s.lp_supply * fraction;
    return out;
}

double virtual_price(const PoolState& s) {
    if (!(s.lp_supply > 0.0)) throw DomainError("virtual_price: lp_supply is zero");
    return compute_d(s).d / s.lp_supply;
}

double lp_share_price(const PoolState& s, std::span<const double> prices) {
    if (!(s.lp_supply > 0.0)) throw DomainError("lp_share_price: lp_supply is zero");
    if (prices.size() != s.n()) throw ValidationError("lp_share_price: one price per pool token required");
    double value = 0.0;
    for (std::size_t k = 0; k < s.n(); ++k) value += s.balances[k] * prices[k];
    return value / s.lp_supply;
}

double lp_share_price(const PoolState& s, std::span<const TokenId> tokens, const std::map<TokenId, double>& prices) {
    if (tokens.size() != s.n()) throw ValidationError("lp_share_price: token list does not match balances");
    std::vector<double> p;
    p.reserve(tokens.size());
    for (const auto& t : tokens) {
        auto it = prices.find(t);
        if (it == prices.end()) throw ValidationError("lp_share_price: missing price for token " + t.symbol);
        p.push_back(it->second);
    }
    return lp_share_price(s, p);
}

double leverage_chi(const PoolState& s) {
    const double d = compute_d(s).d;
    const double per = d / static_cast<double>(s.n());
    double ratio = 1.0;
    for (double xi : s.balances) ratio *= xi / per;
    return s.amp * ratio;
}

double marginal_price(const PoolState& s, std::size_t i, std::size_t j) {
    check_index(s, i, j);
    PoolState nofee = s;
    nofee.fee = 0.0;
    const double d = compute_d(nofee).d;
    const double h = 1e-6 * s.balances[i];
    const double y_up = solve_balance(nofee, i, j, s.balances[i] + h, d);
    const double y_dn = solve_balance(nofee, i, j, s.balances[i] - h, d);
    return (y_dn - y_up) / (2.0 * h);
}

double spot_price(const PoolState& s, std::size_t i, std::size_t j) {
    check_index(s, i, j);
    const double d = compute_d(s).d;
    const double a = ann(s.amp, s.n());
    const double dp = d_product(s.balances, d);
    return (a + dp / s.balances[i]) / (a + dp / s.balances[j]);
}

} // namespace depeg::stableswap
