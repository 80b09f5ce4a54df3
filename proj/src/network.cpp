#include "pfsc/network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "pfsc/errors.hpp"

namespace pfsc {

namespace {

bool same_matrix(const RealMatrix& a, const RealMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

double phase_value(const std::vector<double>& values, int phase) {
    return values.empty() ? 0.0 : values[static_cast<std::size_t>(phase)];
}

void check_phase_list(const std::vector<double>& values, int phases, int bus, const char* field) {
    if (!values.empty() && values.size() != static_cast<std::size_t>(phases)) {
        throw ValidationError(fmt::format("bus {}: {} has {} entries, expected {} (one per phase)",
                                          bus, field, values.size(), phases));
    }
}

void check_block(const RealMatrix& m, int phases, const std::string& branch, const char* field,
                 bool optional) {
    if (optional && m.size() == 0) {
        return;
    }
    if (m.rows() != phases || m.cols() != phases) {
        throw DimensionError(fmt::format("branch {}: {} is {}x{}, expected {}x{} for p = {}",
                                          branch, field, m.rows(), m.cols(), phases, phases,
                                          phases));
    }
}

}  // namespace

bool Branch::operator==(const Branch& other) const {
    return name == other.name && from == other.from && to == other.to &&
           length == other.length && same_matrix(r_ohm, other.r_ohm) &&
           same_matrix(x_ohm, other.x_ohm) && same_matrix(g_siemens, other.g_siemens) &&
           same_matrix(b_siemens, other.b_siemens);
}

NetworkModel::NetworkModel(int phases, Bases bases, std::vector<Bus> buses,
                           std::vector<Branch> branches, SlackSetpoint slack, std::string name,
                           std::vector<std::string> notes)
    : phases_(phases),
      bases_(bases),
      buses_(std::move(buses)),
      branches_(std::move(branches)),
      slack_(slack),
      name_(std::move(name)),
      notes_(std::move(notes)) {
    validate();
}

void NetworkModel::validate() {
    if (phases_ != 1 && phases_ != 3) {
        throw ValidationError(fmt::format("phase count must be 1 or 3, got {}", phases_));
    }
    if (!(bases_.power_va > 0.0) || !(bases_.voltage_v > 0.0)) {
        throw ValidationError("base power and base voltage must be positive");
    }
    if (buses_.size() < 2) {
        throw ValidationError("network needs at least two buses");
    }
    if (!(slack_.magnitude_pu > 0.0)) {
        throw ValidationError("slack voltage magnitude must be positive");
    }

    std::unordered_set<int> seen;
    std::size_t slack_count = 0;
    for (std::size_t k = 0; k < buses_.size(); ++k) {
        const Bus& bus = buses_[k];
        if (!seen.insert(bus.index).second) {
            throw ValidationError(fmt::format("duplicate bus index {}", bus.index));
        }
        if (bus.base_voltage_v < 0.0) {
            throw ValidationError(fmt::format("bus {}: negative base voltage", bus.index));
        }
        check_phase_list(bus.load_p_kw, phases_, bus.index, "load P_kW");
        check_phase_list(bus.load_q_kvar, phases_, bus.index, "load Q_kVar");
        check_phase_list(bus.pv_p_kw, phases_, bus.index, "pv P_kW");
        check_phase_list(bus.pv_q_kvar, phases_, bus.index, "pv Q_kVar");
        if (bus.kind == BusKind::slack) {
            ++slack_count;
            slack_pos_ = k;
            auto nonzero = [](const std::vector<double>& v) {
                return std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; });
            };
            if (nonzero(bus.load_p_kw) || nonzero(bus.load_q_kvar) || nonzero(bus.pv_p_kw) ||
                nonzero(bus.pv_q_kvar)) {
                throw ValidationError(
                    fmt::format("slack bus {} must not carry a specified injection", bus.index));
            }
        }
    }
    if (slack_count != 1) {
        throw ValidationError(
            fmt::format("exactly one slack bus required, found {}", slack_count));
    }

    for (const Branch& br : branches_) {
        if (!seen.contains(br.from) || !seen.contains(br.to)) {
            throw ValidationError(
                fmt::format("branch {}: unknown bus {} -> {}", br.name, br.from, br.to));
        }
        if (br.from == br.to) {
            throw ValidationError(
                fmt::format("branch {} connects bus {} to itself", br.name, br.from));
        }
        if (!(br.length > 0.0)) {
            throw ValidationError(fmt::format("branch {}: length must be positive", br.name));
        }
        check_block(br.r_ohm, phases_, br.name, "R_ohm", false);
        check_block(br.x_ohm, phases_, br.name, "X_ohm", false);
        check_block(br.g_siemens, phases_, br.name, "G_S", true);
        check_block(br.b_siemens, phases_, br.name, "B_S", true);
    }

    // Connectivity from the slack bus.
    std::unordered_map<int, std::vector<int>> adjacency;
    for (const Branch& br : branches_) {
        adjacency[br.from].push_back(br.to);
        adjacency[br.to].push_back(br.from);
    }
    std::unordered_set<int> reached{buses_[slack_pos_].index};
    std::queue<int> frontier;
    frontier.push(buses_[slack_pos_].index);
    while (!frontier.empty()) {
        const int bus = frontier.front();
        frontier.pop();
        for (int next : adjacency[bus]) {
            if (reached.insert(next).second) {
                frontier.push(next);
            }
        }
    }
    if (reached.size() != buses_.size()) {
        throw ValidationError("graph not connected");
    }
}

std::size_t NetworkModel::position_of(int index) const {
    for (std::size_t k = 0; k < buses_.size(); ++k) {
        if (buses_[k].index == index) {
            return k;
        }
    }
    throw ValidationError(fmt::format("no bus with index {}", index));
}

double NetworkModel::base_voltage_v(std::size_t bus_pos) const noexcept {
    const double v = buses_[bus_pos].base_voltage_v;
    return v > 0.0 ? v : bases_.voltage_v;
}

double NetworkModel::base_impedance_ohm(std::size_t bus_pos) const noexcept {
    const double v = base_voltage_v(bus_pos);
    return v * v / bases_.power_va;
}

ComplexVector NetworkModel::injections_pu() const {
    ComplexVector s = ComplexVector::Zero(static_cast<Eigen::Index>(node_count()));
    // p = 1 carries three-phase totals on the three-phase base; p = 3 carries
    // per-phase values on the per-phase base.
    const double phase_base_kva = bases_.power_va / 1e3 / static_cast<double>(phases_);
    for (std::size_t k = 0; k < buses_.size(); ++k) {
        const Bus& bus = buses_[k];
        for (int ph = 0; ph < phases_; ++ph) {
            const double p = phase_value(bus.pv_p_kw, ph) - phase_value(bus.load_p_kw, ph);
            const double q = phase_value(bus.pv_q_kvar, ph) - phase_value(bus.load_q_kvar, ph);
            s(static_cast<Eigen::Index>(flat_index(k, ph))) =
                Complex(p / phase_base_kva, q / phase_base_kva);
        }
    }
    return s;
}

ComplexVector NetworkModel::slack_voltage_pu() const {
    ComplexVector v(phases_);
    const double base = slack_.angle_deg * std::numbers::pi / 180.0;
    for (int ph = 0; ph < phases_; ++ph) {
        v(ph) = std::polar(slack_.magnitude_pu, base - 2.0 * std::numbers::pi / 3.0 * ph);
    }
    return v;
}

ComplexMatrix NetworkModel::branch_impedance_pu(std::size_t branch) const {
    const Branch& br = branches_[branch];
    const double zb = base_impedance_ohm(position_of(br.from));
    ComplexMatrix z(phases_, phases_);
    z.real() = br.r_ohm * (br.length / zb);
    z.imag() = br.x_ohm * (br.length / zb);
    return z;
}

ComplexMatrix NetworkModel::branch_shunt_pu(std::size_t branch) const {
    const Branch& br = branches_[branch];
    const double zb = base_impedance_ohm(position_of(br.from));
    ComplexMatrix y = ComplexMatrix::Zero(phases_, phases_);
    if (br.g_siemens.size() != 0) {
        y.real() = br.g_siemens * (br.length * zb);
    }
    if (br.b_siemens.size() != 0) {
        y.imag() = br.b_siemens * (br.length * zb);
    }
    return y;
}

bool NetworkModel::operator==(const NetworkModel& other) const {
    return phases_ == other.phases_ && bases_.power_va == other.bases_.power_va &&
           bases_.voltage_v == other.bases_.voltage_v &&
           slack_.magnitude_pu == other.slack_.magnitude_pu &&
           slack_.angle_deg == other.slack_.angle_deg && name_ == other.name_ &&
           notes_ == other.notes_ && buses_ == other.buses_ && branches_ == other.branches_;
}

AdmittanceMatrix build_admittance(const NetworkModel& network) {
    const int p = network.phase_count();
    const auto n = static_cast<Eigen::Index>(network.node_count());
    AdmittanceMatrix y{ComplexMatrix::Zero(n, n), p};

    for (std::size_t b = 0; b < network.branches().size(); ++b) {
        const Branch& br = network.branches()[b];
        const ComplexMatrix z = network.branch_impedance_pu(b);
        Eigen::FullPivLU<ComplexMatrix> lu(z);
        if (!lu.isInvertible()) {
            throw ValidationError(fmt::format("degenerate branch {} ({} -> {}): impedance matrix "
                                              "is singular",
                                              br.name, br.from, br.to));
        }
        const ComplexMatrix series = lu.inverse();
        const ComplexMatrix half_shunt = network.branch_shunt_pu(b) * 0.5;

        const auto i = static_cast<Eigen::Index>(y.index(network.position_of(br.from), 0));
        const auto k = static_cast<Eigen::Index>(y.index(network.position_of(br.to), 0));
        y.values.block(i, i, p, p) += series + half_shunt;
        y.values.block(k, k, p, p) += series + half_shunt;
        y.values.block(i, k, p, p) -= series;
        y.values.block(k, i, p, p) -= series;
    }
    return y;
}

}  // namespace pfsc
