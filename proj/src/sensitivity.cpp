#include "pfsc/sensitivity.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "pfsc/errors.hpp"

namespace pfsc {

namespace {

// Below this reciprocal condition estimate H is treated as not invertible.
constexpr double kMinRcond = 1e-13;

Eigen::Index idx(std::size_t k) { return static_cast<Eigen::Index>(k); }

}  // namespace

ReducedIndex::ReducedIndex(std::size_t bus_count, int phases, std::size_t slack_position)
    : phases_(phases), slack_(slack_position) {
    const std::size_t n = bus_count * static_cast<std::size_t>(phases);
    reduced_.assign(n, -1);
    for (std::size_t f = 0; f < n; ++f) {
        if (f / static_cast<std::size_t>(phases) == slack_position) {
            continue;
        }
        reduced_[f] = static_cast<std::ptrdiff_t>(flat_.size());
        flat_.push_back(f);
    }
}

std::optional<std::size_t> ReducedIndex::reduced(std::size_t flat_node) const {
    if (flat_node >= reduced_.size() || reduced_[flat_node] < 0) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(reduced_[flat_node]);
}

RealMatrix assemble_jacobian(const ComplexMatrix& y, const ComplexVector& voltages,
                             const ReducedIndex& index) {
    const std::size_t ns = index.size();
    RealMatrix h = RealMatrix::Zero(idx(2 * ns), idx(2 * ns));
    for (std::size_t r = 0; r < ns; ++r) {
        const Eigen::Index i = idx(index.flat(r));
        const Complex e_conj = std::conj(voltages(i));
        // Injected current sum_n Y_in E_n, slack included.
        const Complex a = (y.row(i) * voltages).value();
        const Eigen::Index re = idx(2 * r);
        const Eigen::Index im = re + 1;

        // conj(dE_i) * a: (u - jv)(ar + j ai)
        h(re, re) += a.real();
        h(re, im) += a.imag();
        h(im, re) += a.imag();
        h(im, im) -= a.real();

        // conj(E_i) Y_in dE_n: (cr + j ci)(u + jv)
        for (std::size_t c = 0; c < ns; ++c) {
            const Complex coef = e_conj * y(i, idx(index.flat(c)));
            const Eigen::Index cu = idx(2 * c);
            const Eigen::Index cv = cu + 1;
            h(re, cu) += coef.real();
            h(re, cv) -= coef.imag();
            h(im, cu) += coef.imag();
            h(im, cv) += coef.real();
        }
    }
    return h;
}

RealMatrix indicator_rhs(const ReducedIndex& index) {
    const std::size_t ns = index.size();
    RealMatrix z = RealMatrix::Zero(idx(2 * ns), idx(2 * ns));
    for (std::size_t k = 0; k < ns; ++k) {
        // d conj(S_l)/dP_l = 1, d conj(S_l)/dQ_l = -j.
        z(idx(ReducedIndex::row(k, Part::Re)), idx(ReducedIndex::column(k, Injection::P))) = 1.0;
        z(idx(ReducedIndex::row(k, Part::Im)), idx(ReducedIndex::column(k, Injection::Q))) = -1.0;
    }
    return z;
}

SensitivityProblem assemble_problem(const ComplexMatrix& y, const ComplexVector& voltages,
                                    const ReducedIndex& index) {
    return SensitivityProblem{assemble_jacobian(y, voltages, index), indicator_rhs(index), index,
                              voltages};
}

SensitivityProblem assemble_problem(const AdmittanceMatrix& y, const GridState& state,
                                    std::size_t slack_position) {
    if (!state.converged) {
        throw NumericalError("sensitivity problem needs a converged operating point");
    }
    if (static_cast<std::size_t>(state.voltages.size()) != y.size()) {
        throw DimensionError(fmt::format("state has {} nodes, admittance matrix {}",
                                         state.voltages.size(), y.size()));
    }
    const std::size_t p = static_cast<std::size_t>(y.phases);
    if (y.size() % p != 0 || slack_position >= y.size() / p) {
        throw DimensionError("slack bus position outside the admittance matrix");
    }
    return assemble_problem(y.values, state.voltages,
                            ReducedIndex(y.size() / p, y.phases, slack_position));
}

SensitivityResult solve_coefficients(const SensitivityProblem& problem) {
    const RealMatrix& h = problem.h;
    if (h.rows() != h.cols() || h.rows() != problem.z.rows()) {
        throw DimensionError("H must be square and match z");
    }
    Eigen::PartialPivLU<RealMatrix> lu(h);
    const double rcond = lu.rcond();
    if (!(rcond > kMinRcond) || !h.allFinite()) {
        throw NumericalError(fmt::format(
            "Jacobian not invertible (reciprocal condition {:.3e}); the sensitivity system "
            "has a unique solution only at a regular load-flow point",
            rcond));
    }

    SensitivityResult result;
    result.h_inverse = lu.inverse();
    result.x = lu.solve(problem.z);
    result.index = problem.index;
    result.voltages = problem.voltages;
    result.rcond = rcond;

    const double zscale = problem.z.cwiseAbs().maxCoeff();
    const double residual = (h * result.x - problem.z).cwiseAbs().maxCoeff();
    if (!(residual <= 1e-10 * std::max(zscale, std::numeric_limits<double>::min()))) {
        throw NumericalError(fmt::format(
            "Jacobian not invertible: residual {:.3e} exceeds solve tolerance", residual));
    }
    return result;
}

Complex SensitivityResult::voltage_sensitivity(std::size_t node, std::size_t wrt,
                                               Injection inj) const {
    const Eigen::Index col = idx(ReducedIndex::column(wrt, inj));
    return {x(idx(ReducedIndex::row(node, Part::Re)), col),
            x(idx(ReducedIndex::row(node, Part::Im)), col)};
}

double SensitivityResult::magnitude_sensitivity(std::size_t node, std::size_t wrt,
                                                Injection inj) const {
    const Complex e = voltages(idx(index.flat(node)));
    const Complex de = voltage_sensitivity(node, wrt, inj);
    return (e.real() * de.real() + e.imag() * de.imag()) / std::abs(e);
}

double SensitivityResult::coefficient(std::size_t node, Part part, std::size_t wrt,
                                      Injection inj) const {
    return x(idx(ReducedIndex::row(node, part)), idx(ReducedIndex::column(wrt, inj)));
}

double condition_number(const RealMatrix& h) {
    Eigen::JacobiSVD<RealMatrix> svd(h);
    const RealVector& s = svd.singularValues();
    if (s.size() == 0) {
        return 0.0;
    }
    const double smallest = s(s.size() - 1);
    return smallest > 0.0 ? s(0) / smallest : std::numeric_limits<double>::infinity();
}

ComplexVector finite_difference_oracle(const NetworkModel& network, const AdmittanceMatrix& y,
                                       std::size_t bus_pos, int phase, Injection which,
                                       double h) {
    if (!(h > 0.0) || !std::isfinite(h)) {
        throw NumericalError(fmt::format("finite difference step must be positive, got {}", h));
    }
    if (bus_pos >= network.bus_count() || phase < 0 || phase >= network.phase_count()) {
        throw DimensionError("finite difference: node outside the network");
    }
    if (bus_pos == network.slack_position()) {
        throw DimensionError("finite difference: the slack bus has no specified injection");
    }

    LoadFlowOptions options;
    options.tolerance = 1e-13;
    const GridState nominal = solve_load_flow(network, y, options);
    options.initial = nominal.voltages;

    const ComplexVector base = network.injections_pu();
    const auto f = idx(network.flat_index(bus_pos, phase));
    const Complex step = which == Injection::P ? Complex(h, 0.0) : Complex(0.0, h);

    ComplexVector plus = base;
    plus(f) += step;
    ComplexVector minus = base;
    minus(f) -= step;
    const GridState up = solve_load_flow(network, y, plus, options);
    const GridState down = solve_load_flow(network, y, minus, options);

    const ReducedIndex index(network.bus_count(), network.phase_count(),
                             network.slack_position());
    ComplexVector d(idx(index.size()));
    for (std::size_t k = 0; k < index.size(); ++k) {
        const Eigen::Index n = idx(index.flat(k));
        d(idx(k)) = (up.voltages(n) - down.voltages(n)) / (2.0 * h);
    }
    return d;
}

}  // namespace pfsc
