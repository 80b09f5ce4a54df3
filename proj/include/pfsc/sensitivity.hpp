#pragma once

#include <cstddef>
#include <optional>

#include "pfsc/load_flow.hpp"
#include "pfsc/network.hpp"

namespace pfsc {

enum class Injection { P = 0, Q = 1 };
enum class Part { Re = 0, Im = 1 };

/// Non-slack nodes in bus-major, phase-minor order, and the real row/column layout built
/// on them. Reduced node k owns rows 2k (Re) and 2k+1 (Im) of H and x, and columns
/// 2k (P) and 2k+1 (Q) of z and x.
class ReducedIndex {
public:
    ReducedIndex() = default;
    ReducedIndex(std::size_t bus_count, int phases, std::size_t slack_position);

    /// p(N_b - 1).
    std::size_t size() const noexcept { return flat_.size(); }
    /// 2p(N_b - 1): order of H.
    std::size_t dimension() const noexcept { return 2 * flat_.size(); }
    int phases() const noexcept { return phases_; }
    std::size_t slack_position() const noexcept { return slack_; }

    std::size_t flat(std::size_t k) const { return flat_.at(k); }
    std::size_t bus_position(std::size_t k) const { return flat(k) / static_cast<std::size_t>(phases_); }
    int phase(std::size_t k) const { return static_cast<int>(flat(k) % static_cast<std::size_t>(phases_)); }
    /// Reduced position of a flat node; empty for slack nodes.
    std::optional<std::size_t> reduced(std::size_t flat_node) const;
    std::optional<std::size_t> reduced(std::size_t bus_pos, int phase) const {
        return reduced(bus_pos * static_cast<std::size_t>(phases_) + static_cast<std::size_t>(phase));
    }

    static std::size_t row(std::size_t k, Part part) noexcept { return 2 * k + static_cast<std::size_t>(part); }
    static std::size_t column(std::size_t k, Injection inj) noexcept { return 2 * k + static_cast<std::size_t>(inj); }

private:
    std::vector<std::size_t> flat_;
    std::vector<std::ptrdiff_t> reduced_;
    int phases_ = 1;
    std::size_t slack_ = 0;
};

/// Realified derivative of conj(S) with respect to the non-slack voltages.
///
/// Row pair (k, Re/Im) is the real/imaginary part of
///   d conj(S_i) = conj(dE_i) * sum_n Y_in E_n + conj(E_i) * sum_n Y_in dE_n,
/// column pair (k, Re/Im) multiplies Re(dE)/Im(dE) of reduced node k. The same matrix is
/// the Newton Jacobian of the load flow and the system matrix of the sensitivity problem.
/// No convergence check: noisy voltages are accepted.
RealMatrix assemble_jacobian(const ComplexMatrix& y, const ComplexVector& voltages,
                             const ReducedIndex& index);

/// Indicator right-hand sides: +1 at (l, Re) for P columns, -1 at (l, Im) for Q columns.
RealMatrix indicator_rhs(const ReducedIndex& index);

/// z = H x for all voltage sensitivities.
struct SensitivityProblem {
    RealMatrix h;
    RealMatrix z;
    ReducedIndex index;
    /// Operating point used for H (full length pN_b).
    ComplexVector voltages;
};

/// Throws NumericalError when the state is not converged and DimensionError when the
/// state and Y disagree.
SensitivityProblem assemble_problem(const AdmittanceMatrix& y, const GridState& state,
                                    std::size_t slack_position);

/// Unchecked variant for perturbed inputs.
SensitivityProblem assemble_problem(const ComplexMatrix& y, const ComplexVector& voltages,
                                    const ReducedIndex& index);

struct SensitivityResult {
    /// x = H^-1 z; row layout of H, column layout of z.
    RealMatrix x;
    RealMatrix h_inverse;
    ReducedIndex index;
    ComplexVector voltages;
    double rcond = 0.0;

    /// dE(node)/dP or dE(node)/dQ of `wrt`, both reduced positions.
    Complex voltage_sensitivity(std::size_t node, std::size_t wrt, Injection inj) const;
    /// d|E(node)| / d(injection) = (Re E Re dE + Im E Im dE) / |E|.
    double magnitude_sensitivity(std::size_t node, std::size_t wrt, Injection inj) const;
    /// Real coefficient at (node, part) for (wrt, inj).
    double coefficient(std::size_t node, Part part, std::size_t wrt, Injection inj) const;
};

/// Throws NumericalError("Jacobian not invertible ...") when H is singular or
/// numerically rank deficient.
SensitivityResult solve_coefficients(const SensitivityProblem& problem);

/// 2-norm condition number of H (SVD based).
double condition_number(const RealMatrix& h);

/// Central difference of the full load-flow solution with respect to one injection of a
/// non-slack node, h in per unit. Returns dE for every reduced node. Throws
/// NumericalError for h <= 0 and ConvergenceError when a perturbed load flow fails.
ComplexVector finite_difference_oracle(const NetworkModel& network, const AdmittanceMatrix& y,
                                       std::size_t bus_pos, int phase, Injection which,
                                       double h);

}  // namespace pfsc
