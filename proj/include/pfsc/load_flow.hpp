#pragma once

#include <optional>
#include <vector>

#include "pfsc/network.hpp"

namespace pfsc {

/// Operating point of the network: nodal voltage phasors in per unit, indexed like the
/// admittance matrix.
struct GridState {
    ComplexVector voltages;
    bool converged = false;
    /// Specified minus computed injection per node; zero at slack nodes.
    ComplexVector mismatch;
    int iterations = 0;
    /// Max nodal mismatch magnitude before each Newton update and after the last one.
    std::vector<double> mismatch_history;
};

struct LoadFlowOptions {
    double tolerance = 1e-8;
    int max_iterations = 50;
    /// Starting voltages; flat start (slack voltage of the phase at every bus) when empty.
    std::optional<ComplexVector> initial;
};

/// S_i = E_i * sum_n conj(Y_in) conj(E_n) for every node.
ComplexVector nodal_power(const ComplexVector& voltages, const AdmittanceMatrix& y);
ComplexVector nodal_power(const GridState& state, const AdmittanceMatrix& y);

/// Newton-Raphson in rectangular form. Throws ConvergenceError when the mismatch is
/// still above tolerance after `max_iterations`, NumericalError on a singular Jacobian.
GridState solve_load_flow(const NetworkModel& network, const AdmittanceMatrix& y,
                          const LoadFlowOptions& options = {});

/// Same, with explicit per-unit injections (length pN_b) replacing the network's.
GridState solve_load_flow(const NetworkModel& network, const AdmittanceMatrix& y,
                          const ComplexVector& injections, const LoadFlowOptions& options = {});

}  // namespace pfsc
