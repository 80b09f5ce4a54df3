// JSON network description. All quantities are SI; conversion to per unit happens
// in NetworkModel.
//
// {
//   "name": "...", "notes": ["..."],
//   "phases": 1 | 3,
//   "bases": {"S_base_VA": 1e7, "V_base_V": 24900},
//   "slack": {"voltage_pu": 1.0, "angle_deg": 0.0},          (optional)
//   "buses": [{"index": 1, "kind": "slack" | "pq", "V_base_V": 4160,   (V_base_V optional)
//              "load": {"P_kW": [..], "Q_kVar": [..]},                  (optional)
//              "pv":   {"P_kW": [..], "Q_kVar": [..]}}],                (optional)
//   "branches": [{"name": "...", "from": 1, "to": 2,
//                 "R_ohm": [[..]], "X_ohm": [[..]],    per unit length, p x p (scalar if p = 1)
//                 "G_S": [[..]], "B_S": [[..]],        optional total shunt per unit length
//                 "length": 1.0}]                      optional
// }

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "pfsc/errors.hpp"
#include "pfsc/network.hpp"

namespace pfsc {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string join(const std::string& base, const std::string& key) { return base + "/" + key; }

void reject_unknown(const json& obj, const std::string& where,
                    const std::set<std::string>& allowed) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) {
            throw ParseError(join(where, key), "unknown field");
        }
    }
}

const json& require(const json& obj, const std::string& where, const char* key) {
    if (!obj.is_object()) {
        throw ParseError(where, "expected an object");
    }
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw ParseError(join(where, key), "missing required field");
    }
    return *it;
}

double as_number(const json& value, const std::string& where) {
    if (!value.is_number()) {
        throw ParseError(where, "expected a number");
    }
    return value.get<double>();
}

int as_int(const json& value, const std::string& where) {
    if (!value.is_number_integer()) {
        throw ParseError(where, "expected an integer");
    }
    return value.get<int>();
}

std::vector<double> as_list(const json& value, const std::string& where) {
    if (value.is_number()) {
        return {value.get<double>()};
    }
    if (!value.is_array()) {
        throw ParseError(where, "expected a number or an array of numbers");
    }
    std::vector<double> out;
    for (std::size_t k = 0; k < value.size(); ++k) {
        out.push_back(as_number(value[k], fmt::format("{}/{}", where, k)));
    }
    return out;
}

RealMatrix as_matrix(const json& value, const std::string& where) {
    if (value.is_number()) {
        return RealMatrix::Constant(1, 1, value.get<double>());
    }
    if (!value.is_array() || value.empty()) {
        throw ParseError(where, "expected a square array of rows");
    }
    const auto rows = static_cast<Eigen::Index>(value.size());
    RealMatrix m;
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::string row_where = fmt::format("{}/{}", where, r);
        const std::vector<double> row = as_list(value[static_cast<std::size_t>(r)], row_where);
        if (r == 0) {
            m.resize(rows, static_cast<Eigen::Index>(row.size()));
        } else if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
            throw ParseError(row_where, "ragged matrix row");
        }
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = row[static_cast<std::size_t>(c)];
        }
    }
    return m;
}

void read_powers(const json& bus, const std::string& where, const char* key,
                 std::vector<double>& p, std::vector<double>& q) {
    auto it = bus.find(key);
    if (it == bus.end()) {
        return;
    }
    const std::string at = join(where, key);
    if (!it->is_object()) {
        throw ParseError(at, "expected an object");
    }
    reject_unknown(*it, at, {"P_kW", "Q_kVar"});
    if (it->contains("P_kW")) {
        p = as_list((*it)["P_kW"], join(at, "P_kW"));
    }
    if (it->contains("Q_kVar")) {
        q = as_list((*it)["Q_kVar"], join(at, "Q_kVar"));
    }
}

NetworkModel from_json(const json& doc) {
    if (!doc.is_object()) {
        throw ParseError("", "network description must be a JSON object");
    }
    reject_unknown(doc, "", {"name", "notes", "phases", "bases", "slack", "buses", "branches"});

    std::string name;
    if (doc.contains("name")) {
        if (!doc["name"].is_string()) {
            throw ParseError("/name", "expected a string");
        }
        name = doc["name"].get<std::string>();
    }
    std::vector<std::string> notes;
    if (doc.contains("notes")) {
        const json& n = doc["notes"];
        if (!n.is_array()) {
            throw ParseError("/notes", "expected an array of strings");
        }
        for (std::size_t k = 0; k < n.size(); ++k) {
            if (!n[k].is_string()) {
                throw ParseError(fmt::format("/notes/{}", k), "expected a string");
            }
            notes.push_back(n[k].get<std::string>());
        }
    }

    const int phases = as_int(require(doc, "", "phases"), "/phases");

    const json& jb = require(doc, "", "bases");
    reject_unknown(jb, "/bases", {"S_base_VA", "V_base_V"});
    Bases bases{as_number(require(jb, "/bases", "S_base_VA"), "/bases/S_base_VA"),
                as_number(require(jb, "/bases", "V_base_V"), "/bases/V_base_V")};

    SlackSetpoint slack;
    if (doc.contains("slack")) {
        const json& js = doc["slack"];
        if (!js.is_object()) {
            throw ParseError("/slack", "expected an object");
        }
        reject_unknown(js, "/slack", {"voltage_pu", "angle_deg"});
        if (js.contains("voltage_pu")) {
            slack.magnitude_pu = as_number(js["voltage_pu"], "/slack/voltage_pu");
        }
        if (js.contains("angle_deg")) {
            slack.angle_deg = as_number(js["angle_deg"], "/slack/angle_deg");
        }
    }

    const json& jbuses = require(doc, "", "buses");
    if (!jbuses.is_array()) {
        throw ParseError("/buses", "expected an array");
    }
    std::vector<Bus> buses;
    for (std::size_t k = 0; k < jbuses.size(); ++k) {
        const std::string where = fmt::format("/buses/{}", k);
        const json& jbus = jbuses[k];
        if (!jbus.is_object()) {
            throw ParseError(where, "expected an object");
        }
        reject_unknown(jbus, where, {"index", "kind", "V_base_V", "load", "pv"});
        Bus bus;
        bus.index = as_int(require(jbus, where, "index"), join(where, "index"));
        const json& kind = require(jbus, where, "kind");
        if (kind == "slack") {
            bus.kind = BusKind::slack;
        } else if (kind == "pq") {
            bus.kind = BusKind::pq;
        } else {
            throw ParseError(join(where, "kind"), "expected \"slack\" or \"pq\"");
        }
        if (jbus.contains("V_base_V")) {
            bus.base_voltage_v = as_number(jbus["V_base_V"], join(where, "V_base_V"));
        }
        read_powers(jbus, where, "load", bus.load_p_kw, bus.load_q_kvar);
        read_powers(jbus, where, "pv", bus.pv_p_kw, bus.pv_q_kvar);
        buses.push_back(std::move(bus));
    }

    const json& jbranches = require(doc, "", "branches");
    if (!jbranches.is_array()) {
        throw ParseError("/branches", "expected an array");
    }
    std::vector<Branch> branches;
    for (std::size_t k = 0; k < jbranches.size(); ++k) {
        const std::string where = fmt::format("/branches/{}", k);
        const json& jbr = jbranches[k];
        if (!jbr.is_object()) {
            throw ParseError(where, "expected an object");
        }
        reject_unknown(jbr, where,
                       {"name", "from", "to", "R_ohm", "X_ohm", "G_S", "B_S", "length"});
        Branch br;
        br.from = as_int(require(jbr, where, "from"), join(where, "from"));
        br.to = as_int(require(jbr, where, "to"), join(where, "to"));
        if (jbr.contains("name")) {
            if (!jbr["name"].is_string()) {
                throw ParseError(join(where, "name"), "expected a string");
            }
            br.name = jbr["name"].get<std::string>();
        } else {
            br.name = fmt::format("{}-{}", br.from, br.to);
        }
        br.r_ohm = as_matrix(require(jbr, where, "R_ohm"), join(where, "R_ohm"));
        br.x_ohm = as_matrix(require(jbr, where, "X_ohm"), join(where, "X_ohm"));
        if (jbr.contains("G_S")) {
            br.g_siemens = as_matrix(jbr["G_S"], join(where, "G_S"));
        }
        if (jbr.contains("B_S")) {
            br.b_siemens = as_matrix(jbr["B_S"], join(where, "B_S"));
        }
        if (jbr.contains("length")) {
            br.length = as_number(jbr["length"], join(where, "length"));
        }
        branches.push_back(std::move(br));
    }

    return NetworkModel(phases, bases, std::move(buses), std::move(branches), slack,
                        std::move(name), std::move(notes));
}

ordered_json matrix_json(const RealMatrix& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

NetworkModel parse_network(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // Translate the byte offset into a line number.
        std::size_t line = 1;
        const std::size_t end = std::min<std::size_t>(e.byte, text.size());
        for (std::size_t k = 0; k < end; ++k) {
            if (text[k] == '\n') {
                ++line;
            }
        }
        throw ParseError(fmt::format("line {}", line), e.what());
    }
    return from_json(doc);
}

NetworkModel load_network(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path.string(), "cannot open network file");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    try {
        return parse_network(buffer.str());
    } catch (const ParseError& e) {
        throw ParseError(path.string() + (e.where().empty() ? "" : ":" + e.where()), e.message());
    }
}

std::string emit_network(const NetworkModel& network) {
    ordered_json doc;
    if (!network.name().empty()) {
        doc["name"] = network.name();
    }
    if (!network.notes().empty()) {
        doc["notes"] = network.notes();
    }
    doc["phases"] = network.phase_count();
    doc["bases"] = {{"S_base_VA", network.bases().power_va},
                    {"V_base_V", network.bases().voltage_v}};
    doc["slack"] = {{"voltage_pu", network.slack_setpoint().magnitude_pu},
                    {"angle_deg", network.slack_setpoint().angle_deg}};

    ordered_json buses = ordered_json::array();
    for (const Bus& bus : network.buses()) {
        ordered_json jb;
        jb["index"] = bus.index;
        jb["kind"] = bus.kind == BusKind::slack ? "slack" : "pq";
        if (bus.base_voltage_v > 0.0) {
            jb["V_base_V"] = bus.base_voltage_v;
        }
        auto powers = [&](const char* key, const std::vector<double>& p,
                          const std::vector<double>& q) {
            if (p.empty() && q.empty()) {
                return;
            }
            ordered_json block = ordered_json::object();
            if (!p.empty()) {
                block["P_kW"] = p;
            }
            if (!q.empty()) {
                block["Q_kVar"] = q;
            }
            jb[key] = std::move(block);
        };
        powers("load", bus.load_p_kw, bus.load_q_kvar);
        powers("pv", bus.pv_p_kw, bus.pv_q_kvar);
        buses.push_back(std::move(jb));
    }
    doc["buses"] = std::move(buses);

    ordered_json branches = ordered_json::array();
    for (const Branch& br : network.branches()) {
        ordered_json jb;
        jb["name"] = br.name;
        jb["from"] = br.from;
        jb["to"] = br.to;
        jb["R_ohm"] = matrix_json(br.r_ohm);
        jb["X_ohm"] = matrix_json(br.x_ohm);
        if (br.g_siemens.size() != 0) {
            jb["G_S"] = matrix_json(br.g_siemens);
        }
        if (br.b_siemens.size() != 0) {
            jb["B_S"] = matrix_json(br.b_siemens);
        }
        jb["length"] = br.length;
        branches.push_back(std::move(jb));
    }
    doc["branches"] = std::move(branches);
    return doc.dump(2) + "\n";
}

void save_network(const NetworkModel& network, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error(fmt::format("cannot write {}", path.string()));
    }
    out << emit_network(network);
}

}  // namespace pfsc
