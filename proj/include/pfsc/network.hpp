#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pfsc {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

enum class BusKind { slack, pq };

/// Per-unit normalisation. `power_va` is the three-phase base; voltages are line-to-line.
struct Bases {
    double power_va = 1e6;
    double voltage_v = 1e3;
};

/// Fixed voltage of the slack bus, positive sequence. For p = 3 phases b and c
/// are placed at -120 and +120 degrees from phase a.
struct SlackSetpoint {
    double magnitude_pu = 1.0;
    double angle_deg = 0.0;
};

/// One bus. Power lists hold one entry per phase. For p = 1 the single entry is the
/// three-phase total of the balanced equivalent; for p = 3 each entry is that phase's share.
struct Bus {
    int index = 0;
    BusKind kind = BusKind::pq;
    std::vector<double> load_p_kw;
    std::vector<double> load_q_kvar;
    std::vector<double> pv_p_kw;
    std::vector<double> pv_q_kvar;
    /// Line-to-line base voltage of the bus' level; 0 means "use Bases::voltage_v".
    double base_voltage_v = 0.0;

    bool operator==(const Bus&) const = default;
};

/// A series element between two buses with optional shunt admittance.
/// `r_ohm`, `x_ohm`, `g_siemens`, `b_siemens` are per unit length and p x p;
/// series impedance is referred to the voltage level of the `from` bus.
/// The shunt is the total line charging, split evenly between both ends.
struct Branch {
    std::string name;
    int from = 0;
    int to = 0;
    RealMatrix r_ohm;
    RealMatrix x_ohm;
    RealMatrix g_siemens;
    RealMatrix b_siemens;
    double length = 1.0;

    bool operator==(const Branch& other) const;
};

/// Polyphase distribution network with a single slack bus. Validated on construction
/// and immutable afterwards.
class NetworkModel {
public:
    NetworkModel(int phases, Bases bases, std::vector<Bus> buses, std::vector<Branch> branches,
                 SlackSetpoint slack = {}, std::string name = {},
                 std::vector<std::string> notes = {});

    int phase_count() const noexcept { return phases_; }
    std::size_t bus_count() const noexcept { return buses_.size(); }
    /// pN_b: length of voltage and injection vectors.
    std::size_t node_count() const noexcept { return buses_.size() * static_cast<std::size_t>(phases_); }

    std::span<const Bus> buses() const noexcept { return buses_; }
    std::span<const Branch> branches() const noexcept { return branches_; }
    const Bases& bases() const noexcept { return bases_; }
    const SlackSetpoint& slack_setpoint() const noexcept { return slack_; }
    const std::string& name() const noexcept { return name_; }
    const std::vector<std::string>& notes() const noexcept { return notes_; }

    /// Position of the slack bus in `buses()`.
    std::size_t slack_position() const noexcept { return slack_pos_; }
    /// Position in `buses()` of the bus labelled `index`; throws ValidationError if absent.
    std::size_t position_of(int index) const;

    /// Bus-major, phase-minor flat index: (bus0,a),(bus0,b),(bus0,c),(bus1,a),...
    std::size_t flat_index(std::size_t bus_pos, int phase) const noexcept {
        return bus_pos * static_cast<std::size_t>(phases_) + static_cast<std::size_t>(phase);
    }

    double base_voltage_v(std::size_t bus_pos) const noexcept;
    double base_impedance_ohm(std::size_t bus_pos) const noexcept;

    /// Net specified injection (generation minus load) per node, per unit; zero at the slack.
    ComplexVector injections_pu() const;
    /// Slack voltage phasors, one per phase, per unit.
    ComplexVector slack_voltage_pu() const;
    /// Series impedance of a branch in per unit (p x p).
    ComplexMatrix branch_impedance_pu(std::size_t branch) const;
    /// Total shunt admittance of a branch in per unit (p x p).
    ComplexMatrix branch_shunt_pu(std::size_t branch) const;

    bool operator==(const NetworkModel& other) const;

private:
    void validate();

    int phases_;
    Bases bases_;
    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    SlackSetpoint slack_;
    std::string name_;
    std::vector<std::string> notes_;
    std::size_t slack_pos_ = 0;
};

/// Dense compound admittance matrix, per unit, indexed like NetworkModel::flat_index.
struct AdmittanceMatrix {
    ComplexMatrix values;
    int phases = 1;

    std::size_t size() const noexcept { return static_cast<std::size_t>(values.rows()); }
    std::size_t index(std::size_t bus_pos, int phase) const noexcept {
        return bus_pos * static_cast<std::size_t>(phases) + static_cast<std::size_t>(phase);
    }
};

/// Assemble Y from branch data. Throws ValidationError("degenerate branch ...") when a
/// branch impedance matrix cannot be inverted.
AdmittanceMatrix build_admittance(const NetworkModel& network);

/// Read a network description (JSON, SI units). Throws ParseError or ValidationError.
NetworkModel load_network(const std::filesystem::path& path);
NetworkModel parse_network(const std::string& text);

/// Write a network description that load_network reads back to an equal model.
std::string emit_network(const NetworkModel& network);
void save_network(const NetworkModel& network, const std::filesystem::path& path);

}  // namespace pfsc
