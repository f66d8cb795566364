#ifndef UEDPO_THEORY_LAB_HPP
#define UEDPO_THEORY_LAB_HPP

// Single-state ("soft bandit") form of the KL-regularized objective with a
// per-action entropy weight lambda:
//
//   F(pi) = sum_a pi_a * (q_a - beta * (lambda_a * log pi_a - log p_ref_a))
//
// Stationarity gives log pi_a = (q_a + beta*log p_ref_a + eta - beta*lambda_a) / (beta*lambda_a)
// where eta is the normalization multiplier. With non-uniform lambda eta does
// not factor out of the sum, so it is found numerically.

#include <optional>

#include "core.hpp"
#include "rng.hpp"

namespace uedpo::theory {

struct SingleStateProblem {
    Vector q;
    Vector p_ref;
    double beta = 1.0;
    Vector lam;

    std::size_t actions() const noexcept { return q.size(); }

    void validate() const {
        require(q.size() >= 2 && q.size() <= 64, "SingleStateProblem: action count must be in [2, 64]");
        require(p_ref.size() == q.size() && lam.size() == q.size(), "SingleStateProblem: length mismatch");
        require(beta > 0.0, "SingleStateProblem: beta must be positive");
        require(all_finite(q), "SingleStateProblem: q must be finite");
        double s = 0.0;
        for (std::size_t a = 0; a < q.size(); ++a) {
            require(p_ref[a] > 0.0, "SingleStateProblem: p_ref must be strictly positive");
            require(lam[a] > 0.0 && std::isfinite(lam[a]), "SingleStateProblem: lambda must be positive");
            s += p_ref[a];
        }
        require(std::abs(s - 1.0) <= 1e-12, "SingleStateProblem: p_ref must sum to 1");
    }
};

struct ExplorationSolution {
    Vector pi_star;
    double eta = 0.0;
    double v_star = 0.0;
    Vector a_e;
};

/// Objective value F(pi).
inline double exploration_objective(const SingleStateProblem& p, std::span<const double> pi) {
    double f = 0.0;
    for (std::size_t a = 0; a < p.actions(); ++a) {
        if (pi[a] <= 0.0) continue; // 0 log 0 = 0
        f += pi[a] * (p.q[a] - p.beta * (p.lam[a] * std::log(pi[a]) - std::log(p.p_ref[a])));
    }
    return f;
}

namespace detail {

/// Unnormalized log pi_a for a given eta.
inline double log_policy_term(const SingleStateProblem& p, std::size_t a, double eta) {
    const double bl = p.beta * p.lam[a];
    return std::log(p.p_ref[a]) / p.lam[a] + (p.q[a] + eta - bl) / bl;
}

/// log of the normalization sum; strictly increasing in eta.
inline double log_normalizer(const SingleStateProblem& p, double eta) {
    Vector terms(p.actions());
    for (std::size_t a = 0; a < p.actions(); ++a) terms[a] = log_policy_term(p, a, eta);
    return log_sum_exp(terms);
}

} // namespace detail

struct EtaBracket {
    double lo;
    double hi;
};

/// Root of the normalization condition by bisection. The bracket is widened by
/// doubling until it straddles the root, then halved until no representable
/// midpoint remains.
inline double solve_eta(const SingleStateProblem& p, std::optional<EtaBracket> initial = std::nullopt) {
    p.validate();
    EtaBracket br = initial.value_or(EtaBracket{-1.0, 1.0});
    require(br.lo < br.hi, "solve_eta: empty initial bracket");
    double width = br.hi - br.lo;
    int doublings = 0;
    while (detail::log_normalizer(p, br.lo) > 0.0) {
        if (++doublings > 200) throw NumericFailure("solve_eta: bracket expansion failed");
        br.lo -= width;
        width *= 2.0;
    }
    while (detail::log_normalizer(p, br.hi) < 0.0) {
        if (++doublings > 200) throw NumericFailure("solve_eta: bracket expansion failed");
        br.hi += width;
        width *= 2.0;
    }
    for (int it = 0; it < 4000; ++it) {
        const double mid = 0.5 * (br.lo + br.hi);
        if (mid <= br.lo || mid >= br.hi) break;
        const double g = detail::log_normalizer(p, mid);
        if (g == 0.0) return mid;
        (g < 0.0 ? br.lo : br.hi) = mid;
    }
    const double glo = std::abs(detail::log_normalizer(p, br.lo));
    const double ghi = std::abs(detail::log_normalizer(p, br.hi));
    const double eta = glo <= ghi ? br.lo : br.hi;
    if (!std::isfinite(eta)) throw NumericFailure("solve_eta: non-finite root");
    return eta;
}

/// E_pi[lambda], accumulated as offsets from lambda_0 so a constant lambda comes back exactly.
inline double expected_lambda(const SingleStateProblem& p, std::span<const double> pi) {
    double off = 0.0;
    for (std::size_t a = 0; a < p.actions(); ++a) off += pi[a] * (p.lam[a] - p.lam[0]);
    return p.lam[0] + off;
}

inline Vector generalized_advantage(const SingleStateProblem& p, const ExplorationSolution& s) {
    const double mean_lam = expected_lambda(p, s.pi_star);
    Vector adv(p.actions());
    for (std::size_t a = 0; a < p.actions(); ++a) adv[a] = p.q[a] - s.v_star - p.beta * (p.lam[a] - mean_lam);
    return adv;
}

inline ExplorationSolution optimal_policy(const SingleStateProblem& p, std::optional<EtaBracket> bracket = std::nullopt) {
    ExplorationSolution s;
    s.eta = solve_eta(p, bracket);
    Vector logs(p.actions());
    for (std::size_t a = 0; a < p.actions(); ++a) logs[a] = detail::log_policy_term(p, a, s.eta);
    // The bisection residual is ~1e-16 in log space; renormalize so the policy sums to 1 to rounding.
    const double lz = log_sum_exp(logs);
    s.pi_star.resize(p.actions());
    for (std::size_t a = 0; a < p.actions(); ++a) s.pi_star[a] = std::exp(logs[a] - lz);
    s.v_star = p.beta * expected_lambda(p, s.pi_star) - s.eta;
    s.a_e = generalized_advantage(p, s);
    return s;
}

/// Max over actions of |beta*log(pi^lambda / p_ref) - a_e|.
inline double advantage_identity_residual(const SingleStateProblem& p, const ExplorationSolution& s) {
    double worst = 0.0;
    for (std::size_t a = 0; a < p.actions(); ++a) {
        const double lhs = p.beta * (p.lam[a] * std::log(s.pi_star[a]) - std::log(p.p_ref[a]));
        worst = std::max(worst, std::abs(lhs - s.a_e[a]));
    }
    return worst;
}

/// Max over actions of |beta*log(pi*/p_ref) - (q - V*)|; requires lambda == 1.
inline double verify_dpo_advantage(const SingleStateProblem& p) {
    for (double l : p.lam) require(l == 1.0, "verify_dpo_advantage: lambda must be identically 1");
    const ExplorationSolution s = optimal_policy(p);
    double worst = 0.0;
    for (std::size_t a = 0; a < p.actions(); ++a) {
        const double lhs = p.beta * std::log(s.pi_star[a] / p.p_ref[a]);
        worst = std::max(worst, std::abs(lhs - (p.q[a] - s.v_star)));
    }
    return worst;
}

struct BruteForceOptions {
    std::size_t restarts = 50;
    std::size_t iterations = 10000;
    std::uint64_t seed = 0;
};

/// Direct maximization of F over the simplex by entropic mirror ascent from
/// random interior starts. Uses only F and its gradient. The step starts at
/// the curvature scale 1/(beta*max lambda) and is halved whenever an update
/// fails to increase F.
inline Vector brute_force_optimum(const SingleStateProblem& p, const BruteForceOptions& opt = {}) {
    p.validate();
    const std::size_t n = p.actions();
    Stream rng(opt.seed, 0xB0F0ULL);
    double max_lam = 0.0;
    for (double l : p.lam) max_lam = std::max(max_lam, l);

    Vector best;
    double best_f = -std::numeric_limits<double>::infinity();
    Vector logpi(n), cand(n), pi(n);

    const auto normalize = [&](Vector& lp) {
        const double z = log_sum_exp(lp);
        for (double& v : lp) v -= z;
    };
    const auto value = [&](const Vector& lp) {
        for (std::size_t a = 0; a < n; ++a) pi[a] = std::exp(lp[a]);
        return exploration_objective(p, pi);
    };

    for (std::size_t r = 0; r < std::max<std::size_t>(opt.restarts, 1); ++r) {
        for (double& v : logpi) v = rng.uniform(-2.0, 2.0);
        normalize(logpi);
        double f = value(logpi);
        double step = 1.0 / (p.beta * max_lam);
        for (std::size_t it = 0; it < opt.iterations && step > 1e-12; ++it) {
            for (std::size_t a = 0; a < n; ++a) {
                const double grad = p.q[a] - p.beta * p.lam[a] * (logpi[a] + 1.0) + p.beta * std::log(p.p_ref[a]);
                cand[a] = logpi[a] + step * grad;
            }
            normalize(cand);
            const double fc = value(cand);
            if (fc >= f) {
                double moved = 0.0;
                for (std::size_t a = 0; a < n; ++a) moved = std::max(moved, std::abs(cand[a] - logpi[a]));
                logpi.swap(cand);
                f = fc;
                if (moved < 1e-15) break;
            } else {
                step *= 0.5;
            }
        }
        if (f > best_f) {
            best_f = f;
            best.resize(n);
            for (std::size_t a = 0; a < n; ++a) best[a] = std::exp(logpi[a]);
        }
    }
    return best;
}

struct SignReport {
    double empirical = 0.0; ///< central difference of log pi*(action) in lambda_action
    double predicted = 0.0; ///< -log p_ref / lambda^2 - (q + eta) / (beta * lambda^2)
    int empirical_sign = 0;
    int predicted_sign = 0;
    bool dead_zone = false;
    bool agree = true;
};

inline constexpr double kSignDeadZone = 1e-6;

/// Re-solves with lambda_action +/- delta and compares the sign of the change
/// in log pi*(action) with the sign of the partial-derivative expression at
/// fixed eta. Re-solving also moves eta, but only rescales the derivative by a
/// factor in (0, 1), so the signs must agree outside the dead zone.
inline SignReport derivative_sign_probe(const SingleStateProblem& p, std::size_t action, double delta = 1e-4) {
    p.validate();
    require(action < p.actions(), "derivative_sign_probe: action out of range");
    require(delta > 0.0 && delta < p.lam[action], "derivative_sign_probe: delta must be positive and below lambda");
    const ExplorationSolution base = optimal_policy(p);
    SingleStateProblem up = p, down = p;
    up.lam[action] += delta;
    down.lam[action] -= delta;
    const double lp_up = std::log(optimal_policy(up).pi_star[action]);
    const double lp_down = std::log(optimal_policy(down).pi_star[action]);

    SignReport r;
    const double l = p.lam[action];
    r.empirical = (lp_up - lp_down) / (2.0 * delta);
    r.predicted = -std::log(p.p_ref[action]) / (l * l) - (p.q[action] + base.eta) / (p.beta * l * l);
    const auto sgn = [](double x) { return (x > 0.0) - (x < 0.0); };
    r.empirical_sign = sgn(r.empirical);
    r.predicted_sign = sgn(r.predicted);
    r.dead_zone = std::abs(r.predicted) <= kSignDeadZone;
    r.agree = r.dead_zone || r.empirical_sign == r.predicted_sign;
    return r;
}

/// True when p_ref(action) < exp(-(q_action + eta) / beta), i.e. raising lambda raises pi*(action).
inline bool below_correction_threshold(const SingleStateProblem& p, std::size_t action, double eta) {
    return std::log(p.p_ref[action]) < -(p.q[action] + eta) / p.beta;
}

/// Random problem with q ~ U[-1, 1], log-uniform reference weights and lambda ~ U[lam_lo, lam_hi].
inline SingleStateProblem random_problem(Stream& rng, std::size_t actions, double beta, double lam_lo = 0.5,
                                         double lam_hi = 2.0) {
    SingleStateProblem p;
    p.beta = beta;
    p.q.resize(actions);
    p.p_ref.resize(actions);
    p.lam.resize(actions);
    double z = 0.0;
    for (std::size_t a = 0; a < actions; ++a) {
        p.q[a] = rng.uniform(-1.0, 1.0);
        p.p_ref[a] = std::exp(rng.uniform(-2.0, 2.0));
        z += p.p_ref[a];
        p.lam[a] = rng.uniform(lam_lo, lam_hi);
    }
    for (double& v : p.p_ref) v /= z;
    return p;
}

} // namespace uedpo::theory

#endif // UEDPO_THEORY_LAB_HPP
