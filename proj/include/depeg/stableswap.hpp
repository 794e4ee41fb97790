#pragma once

#include <map>
#include <span>
#include <vector>

#include "depeg/types.hpp"

namespace depeg::stableswap {

// Pool balances and parameters in token units (float64, not contract fixed point).
struct PoolState {
    std::vector<double> balances;
    double amp = 100.0;     // A, strictly positive
    double fee = 0.0;       // fraction of the output amount, in [0, 0.01]
    double lp_supply = 0.0;

    std::size_t n() const { return balances.size(); }
};

// Throws ValidationError when n < 2, A <= 0, fee outside [0, 0.01], or a negative amount.
void validate(const PoolState& s);

struct InvariantSolution {
    double d = 0.0;
    int iterations = 0;
    double residual = 0.0;
};

// |A n^n S + D - A D n^n - D^{n+1} / (n^n P)| / (A n^n), in token units, for balances x
// at invariant value d.
double invariant_residual(std::span<const double> x, double amp, double d);

// Solves the canonical invariant for D. Newton from D0 = sum(x) with a bisection
// fallback on [n * geomean(x), sum(x)].
InvariantSolution compute_d(const PoolState& s);

// New balance of token j when token i's balance becomes x_i_new, holding D fixed.
double solve_balance(const PoolState& s, std::size_t i, std::size_t j, double x_i_new, double d);

// Output amount of token j for dx of token i, after the output fee.
double get_dy(const PoolState& s, std::size_t i, std::size_t j, double dx);

struct SwapResult {
    PoolState state;
    double dy = 0.0;
};

// Executes a swap on a copy of the state; the fee stays in the pool.
SwapResult apply_swap(const PoolState& s, std::size_t i, std::size_t j, double dx);

// Balanced deposit (fraction > 0) or withdrawal (fraction < 0) of `fraction` of every
// balance and of the LP supply. Virtual price is unchanged.
PoolState apply_balanced_liquidity(const PoolState& s, double fraction);

// D / lp_supply.
double virtual_price(const PoolState& s);

// <balances, prices> / lp_supply. Throws ValidationError naming a token without a price.
double lp_share_price(const PoolState& s, std::span<const TokenId> tokens, const std::map<TokenId, double>& prices);
double lp_share_price(const PoolState& s, std::span<const double> prices);

// chi = A * prod(x) / (D/n)^n.
double leverage_chi(const PoolState& s);

// d(dy)/d(dx) at dx = 0 with the fee removed, by central finite difference
// with step 1e-6 * x_i. Units of token j per token i.
double marginal_price(const PoolState& s, std::size_t i, std::size_t j);

// Same quantity by implicit differentiation of the invariant.
double spot_price(const PoolState& s, std::size_t i, std::size_t j);

} // namespace depeg::stableswap
