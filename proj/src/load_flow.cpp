#include "pfsc/load_flow.hpp"

#include <cmath>

#include <fmt/format.h>

#include "pfsc/errors.hpp"
#include "pfsc/sensitivity.hpp"

namespace pfsc {

ComplexVector nodal_power(const ComplexVector& voltages, const AdmittanceMatrix& y) {
    if (static_cast<std::size_t>(voltages.size()) != y.size()) {
        throw DimensionError(fmt::format("voltage vector has {} entries, admittance matrix is {}x{}",
                                         voltages.size(), y.size(), y.size()));
    }
    const ComplexVector current = y.values * voltages;
    return voltages.cwiseProduct(current.conjugate());
}

ComplexVector nodal_power(const GridState& state, const AdmittanceMatrix& y) {
    return nodal_power(state.voltages, y);
}

GridState solve_load_flow(const NetworkModel& network, const AdmittanceMatrix& y,
                          const LoadFlowOptions& options) {
    return solve_load_flow(network, y, network.injections_pu(), options);
}

GridState solve_load_flow(const NetworkModel& network, const AdmittanceMatrix& y,
                          const ComplexVector& injections, const LoadFlowOptions& options) {
    const std::size_t n = network.node_count();
    if (y.size() != n || static_cast<std::size_t>(injections.size()) != n) {
        throw DimensionError("load flow: network, admittance matrix and injections disagree");
    }
    const int p = network.phase_count();
    const std::size_t slack = network.slack_position();
    const ReducedIndex index(network.bus_count(), p, slack);
    const ComplexVector slack_v = network.slack_voltage_pu();

    GridState state;
    if (options.initial) {
        if (static_cast<std::size_t>(options.initial->size()) != n) {
            throw DimensionError("load flow: initial state has the wrong length");
        }
        state.voltages = *options.initial;
    } else {
        state.voltages.resize(static_cast<Eigen::Index>(n));
        for (std::size_t b = 0; b < network.bus_count(); ++b) {
            for (int ph = 0; ph < p; ++ph) {
                state.voltages(static_cast<Eigen::Index>(network.flat_index(b, ph))) = slack_v(ph);
            }
        }
    }
    for (int ph = 0; ph < p; ++ph) {
        state.voltages(static_cast<Eigen::Index>(network.flat_index(slack, ph))) = slack_v(ph);
    }

    const auto m = static_cast<Eigen::Index>(index.dimension());
    RealVector rhs(m);
    for (int iter = 0;; ++iter) {
        state.mismatch = injections - nodal_power(state.voltages, y);
        for (int ph = 0; ph < p; ++ph) {
            state.mismatch(static_cast<Eigen::Index>(network.flat_index(slack, ph))) = 0.0;
        }
        const double worst = state.mismatch.cwiseAbs().maxCoeff();
        state.mismatch_history.push_back(worst);
        state.iterations = iter;
        if (!std::isfinite(worst)) {
            throw ConvergenceError("load flow diverged (non-finite mismatch)", worst, iter);
        }
        if (worst <= options.tolerance) {
            state.converged = true;
            return state;
        }
        if (iter == options.max_iterations) {
            throw ConvergenceError(
                fmt::format("load flow did not converge in {} iterations, last mismatch {:.3e} pu",
                            iter, worst),
                worst, iter);
        }

        // d conj(S) = conj(mismatch) -> [Re, -Im] right-hand side.
        for (std::size_t k = 0; k < index.size(); ++k) {
            const Complex s = state.mismatch(static_cast<Eigen::Index>(index.flat(k)));
            rhs(static_cast<Eigen::Index>(2 * k)) = s.real();
            rhs(static_cast<Eigen::Index>(2 * k + 1)) = -s.imag();
        }
        const RealMatrix jac = assemble_jacobian(y.values, state.voltages, index);
        Eigen::PartialPivLU<RealMatrix> lu(jac);
        if (!(lu.rcond() > 1e-14)) {
            throw NumericalError(fmt::format("load flow: singular Jacobian at iteration {}", iter));
        }
        const RealVector step = lu.solve(rhs);
        for (std::size_t k = 0; k < index.size(); ++k) {
            state.voltages(static_cast<Eigen::Index>(index.flat(k))) +=
                Complex(step(static_cast<Eigen::Index>(2 * k)), step(static_cast<Eigen::Index>(2 * k + 1)));
        }
    }
}

}  // namespace pfsc
