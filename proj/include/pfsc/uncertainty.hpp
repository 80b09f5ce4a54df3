#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pfsc/noise.hpp"
#include "pfsc/sensitivity.hpp"

namespace pfsc {

/// Variances of the real and imaginary parts of every admittance element.
struct AdmittanceUncertainty {
    RealMatrix re_variance;
    RealMatrix im_variance;
    /// Set when built from a percentage; the branch-parameter Monte-Carlo mode needs it.
    std::optional<double> relative_level;

    /// sigma_Re = pct/100 |Re Y_lm|, sigma_Im = pct/100 |Im Y_lm|.
    static AdmittanceUncertainty from_percent(const AdmittanceMatrix& y, double percent);
    static AdmittanceUncertainty zero(std::size_t nodes);

    RealMatrix re_std() const { return re_variance.cwiseSqrt(); }
    RealMatrix im_std() const { return im_variance.cwiseSqrt(); }
    bool is_zero() const;
};

/// Per-entry variance of H.
struct HVariance {
    RealMatrix variance;
};

struct PropagationOptions {
    /// Add the sigma^2_Theta sigma^2_Phi term of the product rule.
    bool second_order = false;
};

/// One product Y-part x E-part of an H entry: `coef * y_var * e_var`. Y variables are
/// numbered 2 (row N + col) + part, E variables 2 n + part (part 0 = Re, 1 = Im).
struct BilinearTerm {
    std::size_t row;
    std::size_t col;
    double coef;
    std::size_t y_var;
    std::size_t e_var;
};

/// H written as a sum of bilinear terms in Re/Im parts of Y and E, grouped by entry
/// (row-major). Evaluating the terms reproduces assemble_jacobian.
std::vector<BilinearTerm> jacobian_terms(const ReducedIndex& index, std::size_t nodes);

/// First-order variance of every H entry from independent Y and E errors: the gradient of
/// each entry with respect to every input it contains, squared and weighted by that
/// input's variance (the product rule Theta^2 s_Phi^2 + Phi^2 s_Theta^2 plus the sum rule,
/// with terms that share an input merged first). Throws on negative input variances.
HVariance propagate_to_h(const SensitivityProblem& problem, const AdmittanceMatrix& y,
                         const AdmittanceUncertainty& yu, const CartesianNoiseSpec& en,
                         const PropagationOptions& options = {});

/// Self-variances of the entries of H^-1, plus the inputs needed for cross terms.
struct InverseVariance {
    RealMatrix variance;
    RealMatrix h_inverse;
    RealMatrix h_variance;

    /// cov(Hinv_mn, Hinv_ab), computed on demand.
    double covariance(std::pair<std::size_t, std::size_t> mn,
                      std::pair<std::size_t, std::size_t> ab) const;
};

/// var(Hinv_mn) = sum_i sum_j Hinv_mi^2 var(H_ij) Hinv_jn^2, as (A o A) var(H) (A o A).
InverseVariance inverse_self_variance(const RealMatrix& h_inverse, const HVariance& hv);
/// The same sum as an explicit quadruple loop.
RealMatrix inverse_self_variance_reference(const RealMatrix& h_inverse, const HVariance& hv);

/// cov(Hinv_mn, Hinv_ab) = sum_i sum_j Hinv_mi Hinv_ai var(H_ij) Hinv_jn Hinv_jb.
double inverse_cross_covariance(const RealMatrix& h_inverse, const HVariance& hv,
                                std::pair<std::size_t, std::size_t> mn,
                                std::pair<std::size_t, std::size_t> ab);

enum class UncertaintyMethod { analytical, joint_first_order, monte_carlo };

std::string to_string(UncertaintyMethod method);

/// Per-coefficient variance aligned with SensitivityResult::x.
struct UncertaintyResult {
    RealMatrix variance;
    UncertaintyMethod method = UncertaintyMethod::analytical;
    std::string description;
    std::chrono::system_clock::time_point created = std::chrono::system_clock::now();
    double runtime_s = 0.0;

    RealMatrix std_dev() const { return variance.cwiseSqrt(); }
};

/// var(x_i) = sum_j var(Hinv_ij) z_j^2 for every column of z. Since every column of z has
/// a single +-1 entry, each column equals the matching column of var(Hinv); this is
/// checked and a NumericalError raised if it does not hold.
UncertaintyResult coefficient_variance(const RealMatrix& h_inverse, const InverseVariance& iv,
                                       const RealMatrix& z);

/// var(x_i) = sum_j (Hinv_ij^2 var(z_j) + var(Hinv_ij) z_j^2).
UncertaintyResult general_variance(const RealMatrix& h_inverse, const InverseVariance& iv,
                                   const RealMatrix& z, const RealMatrix& z_variance);

/// propagate_to_h -> inverse_self_variance -> coefficient_variance, timed.
UncertaintyResult analytical_uncertainty(const SensitivityProblem& problem,
                                         const SensitivityResult& solution,
                                         const AdmittanceMatrix& y,
                                         const AdmittanceUncertainty& yu,
                                         const CartesianNoiseSpec& en,
                                         const PropagationOptions& options = {});

/// First-order propagation that keeps the covariance between H entries induced by shared
/// inputs: var(x) = sum_v (Hinv dH/dv x)^2 var(v) over every independent input v.
UncertaintyResult joint_first_order_uncertainty(const SensitivityProblem& problem,
                                                const SensitivityResult& solution,
                                                const AdmittanceMatrix& y,
                                                const AdmittanceUncertainty& yu,
                                                const CartesianNoiseSpec& en);

}  // namespace pfsc
