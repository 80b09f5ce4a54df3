#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "pfsc/errors.hpp"
#include "pfsc/network.hpp"
#include "support/oracles.hpp"

using namespace pfsc;

namespace {

const char* kTwoBus = R"({
  "phases": 1,
  "bases": {"S_base_VA": 1e6, "V_base_V": 1000},
  "buses": [{"index": 1, "kind": "slack"},
            {"index": 2, "kind": "pq", "load": {"P_kW": 100, "Q_kVar": 50}}],
  "branches": [{"from": 1, "to": 2, "R_ohm": 0.0, "X_ohm": 0.1}]
})";

std::string replace(std::string s, const std::string& from, const std::string& to) {
    const auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    return s.replace(pos, from.size(), to);
}

}  // namespace

TEST_CASE("two-bus lossless branch gives the analytic admittance matrix") {
    const NetworkModel net = parse_network(kTwoBus);
    const AdmittanceMatrix y = build_admittance(net);
    REQUIRE(y.size() == 2);
    const Complex j10(0.0, 10.0);
    CHECK(std::abs(y.values(0, 0) + j10) < 1e-12);
    CHECK(std::abs(y.values(0, 1) - j10) < 1e-12);
    CHECK(std::abs(y.values(1, 0) - j10) < 1e-12);
    CHECK(std::abs(y.values(1, 1) + j10) < 1e-12);
}

TEST_CASE("bundled IEEE-4 model") {
    const NetworkModel net = oracle::bundled_ieee4();
    CHECK(net.bus_count() == 4);
    CHECK(net.phase_count() == 1);
    CHECK(net.slack_position() == 0);
    for (int b : {2, 3, 4}) {
        const Bus& bus = net.buses()[net.position_of(b)];
        CHECK(bus.load_p_kw == std::vector<double>{300.0});
        CHECK(bus.load_q_kvar == std::vector<double>{150.0});
    }
    CHECK(net.buses()[net.position_of(2)].pv_p_kw == std::vector<double>{480.0});
    CHECK(net.buses()[net.position_of(3)].pv_p_kw == std::vector<double>{600.0});
    CHECK(net.buses()[net.position_of(4)].pv_p_kw.empty());

    SUBCASE("per-unit injections use the three-phase base") {
        const ComplexVector s = net.injections_pu();
        CHECK(s(0) == Complex(0.0, 0.0));
        CHECK(std::abs(s(1) - Complex(0.018, -0.015)) < 1e-15);
        CHECK(std::abs(s(2) - Complex(0.030, -0.015)) < 1e-15);
        CHECK(std::abs(s(3) - Complex(-0.030, -0.015)) < 1e-15);
    }

    SUBCASE("Y[1,2] is minus the inverse of the 1-2 series impedance in per unit") {
        const AdmittanceMatrix y = build_admittance(net);
        // Hand computation: 0.7225001208 + j0.7835572668 ohm/km * 0.6096 km on 62.001 ohm.
        const double zbase = 24900.0 * 24900.0 / 1e7;
        const Complex z12 = Complex(0.7225001208, 0.7835572668) * 0.6096 / zbase;
        CHECK(std::abs(y.values(0, 1) + 1.0 / z12) < 1e-9 * std::abs(1.0 / z12));
        // Transformer referred to 24.9 kV, line 3-4 on the 4.16 kV base.
        const double zbase_lv = 4160.0 * 4160.0 / 1e7;
        const Complex z34 = Complex(0.01971553017, 0.02542142894) * 0.762 / zbase_lv;
        CHECK(std::abs(y.values(2, 3) + 1.0 / z34) < 1e-9 * std::abs(1.0 / z34));
        CHECK(std::abs(z12 - Complex(0.0071037, 0.0077040)) < 1e-7);
    }
}

TEST_CASE("admittance invariants on random networks") {
    std::mt19937_64 rng(7);
    for (int phases : {1, 3}) {
        for (int trial = 0; trial < 5; ++trial) {
            const NetworkModel net = oracle::random_network(rng, 5, phases);
            const AdmittanceMatrix y = build_admittance(net);
            const auto n = static_cast<Eigen::Index>(net.node_count());
            REQUIRE(y.values.rows() == n);
            REQUIRE(y.values.cols() == n);
            const double scale = y.values.cwiseAbs().maxCoeff();
            // Reciprocal network: symmetric.
            CHECK((y.values - y.values.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale);
            // No shunts: every row of every phase block sums to zero.
            for (Eigen::Index r = 0; r < n; ++r) {
                for (int ph = 0; ph < phases; ++ph) {
                    Complex sum = 0.0;
                    for (Eigen::Index c = ph; c < n; c += phases) {
                        sum += y.values(r, c);
                    }
                    CHECK(std::abs(sum) <= 1e-12 * scale);
                }
            }
        }
    }
}

TEST_CASE("diagonal blocks equal the negated incident blocks plus shunts") {
    std::string text = kTwoBus;
    text = replace(text, R"("X_ohm": 0.1})", R"("X_ohm": 0.1, "B_S": 0.02})");
    const NetworkModel net = parse_network(text);
    const AdmittanceMatrix y = build_admittance(net);
    // Half of the 0.02 pu line charging at each end.
    CHECK(std::abs(y.values(0, 0) + y.values(0, 1) - Complex(0.0, 0.01)) < 1e-12);
    CHECK(std::abs(y.values(1, 1) + y.values(1, 0) - Complex(0.0, 0.01)) < 1e-12);
}

TEST_CASE("build_admittance is permutation equivariant") {
    std::mt19937_64 rng(11);
    const NetworkModel net = oracle::random_network(rng, 5, 3);
    const AdmittanceMatrix y = build_admittance(net);

    std::vector<std::size_t> order(net.bus_count());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Bus> buses;
    for (std::size_t k : order) {
        buses.push_back(net.buses()[k]);
    }
    std::vector<Branch> branches(net.branches().begin(), net.branches().end());
    const NetworkModel permuted(3, net.bases(), buses, branches);
    const AdmittanceMatrix yp = build_admittance(permuted);

    for (std::size_t a = 0; a < order.size(); ++a) {
        for (std::size_t b = 0; b < order.size(); ++b) {
            for (int pa = 0; pa < 3; ++pa) {
                for (int pb = 0; pb < 3; ++pb) {
                    const Complex v = yp.values(static_cast<Eigen::Index>(yp.index(a, pa)),
                                                static_cast<Eigen::Index>(yp.index(b, pb)));
                    const Complex w =
                        y.values(static_cast<Eigen::Index>(y.index(order[a], pa)),
                                 static_cast<Eigen::Index>(y.index(order[b], pb)));
                    CHECK(v == w);
                }
            }
        }
    }
}

TEST_CASE("flat index is bus-major, phase-minor") {
    const NetworkModel net = oracle::ieee4_three_phase();
    CHECK(net.flat_index(0, 0) == 0);
    CHECK(net.flat_index(0, 2) == 2);
    CHECK(net.flat_index(1, 0) == 3);
    CHECK(net.flat_index(3, 1) == 10);
    const ComplexVector slack = net.slack_voltage_pu();
    CHECK(std::abs(std::arg(slack(1)) + 2.0 * std::numbers::pi / 3.0) < 1e-12);
    CHECK(std::abs(std::arg(slack(2)) - 2.0 * std::numbers::pi / 3.0) < 1e-12);
}

TEST_CASE("round trip through the file format") {
    std::mt19937_64 rng(3);
    for (const NetworkModel& net :
         {oracle::bundled_ieee4(), oracle::ieee4_three_phase(), oracle::random_network(rng, 4, 3)}) {
        const std::string text = emit_network(net);
        const NetworkModel back = parse_network(text);
        CHECK(back == net);
        CHECK(emit_network(back) == text);
    }
    const auto path = std::filesystem::temp_directory_path() / "pfsc_roundtrip.json";
    save_network(oracle::bundled_ieee4(), path);
    CHECK(load_network(path) == oracle::bundled_ieee4());
    std::filesystem::remove(path);
}

TEST_CASE("invalid networks are rejected") {
    SUBCASE("two slack buses") {
        const std::string text = replace(kTwoBus, R"("kind": "pq")", R"("kind": "slack")");
        CHECK_THROWS_AS(parse_network(replace(text, R"(, "load": {"P_kW": 100, "Q_kVar": 50})", "")),
                        ValidationError);
    }
    SUBCASE("p = 3 with a 2x2 impedance block") {
        std::string text = replace(kTwoBus, R"("phases": 1)", R"("phases": 3)");
        text = replace(text, R"("P_kW": 100, "Q_kVar": 50)", R"("P_kW": [1,1,1], "Q_kVar": [1,1,1])");
        text = replace(text, R"("R_ohm": 0.0, "X_ohm": 0.1)",
                       R"("R_ohm": [[0.1,0],[0,0.1]], "X_ohm": [[0.1,0],[0,0.1]])");
        CHECK_THROWS_AS(parse_network(text), DimensionError);
    }
    SUBCASE("disconnected graph") {
        std::string text = replace(kTwoBus, R"({"index": 2, "kind": "pq")",
                                   R"({"index": 3, "kind": "pq"}, {"index": 2, "kind": "pq")");
        CHECK_THROWS_WITH_AS(parse_network(text), "graph not connected", ValidationError);
    }
    SUBCASE("self loop") {
        const std::string text = replace(kTwoBus, R"("to": 2)", R"("to": 1)");
        CHECK_THROWS_AS(parse_network(text), ValidationError);
    }
    SUBCASE("unknown bus in a branch") {
        const std::string text = replace(kTwoBus, R"("to": 2)", R"("to": 9)");
        CHECK_THROWS_AS(parse_network(text), ValidationError);
    }
    SUBCASE("slack bus with a load") {
        const std::string text =
            replace(kTwoBus, R"("kind": "slack"})", R"("kind": "slack", "load": {"P_kW": 1}})");
        CHECK_THROWS_AS(parse_network(text), ValidationError);
    }
    SUBCASE("degenerate branch names the branch") {
        const std::string text = replace(kTwoBus, R"("X_ohm": 0.1)", R"("X_ohm": 0.0, "name": "dead")");
        const NetworkModel net = parse_network(text);
        try {
            build_admittance(net);
            FAIL("expected an exception");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("degenerate branch dead") != std::string::npos);
        }
    }
}

TEST_CASE("parse errors carry the location") {
    SUBCASE("unknown field") {
        try {
            parse_network(replace(kTwoBus, R"("phases": 1)", R"("phases": 1, "bogus": 2)"));
            FAIL("expected an exception");
        } catch (const ParseError& e) {
            CHECK(e.where() == "/bogus");
        }
    }
    SUBCASE("wrong type in a branch") {
        try {
            parse_network(replace(kTwoBus, R"("X_ohm": 0.1)", R"("X_ohm": "big")"));
            FAIL("expected an exception");
        } catch (const ParseError& e) {
            CHECK(e.where() == "/branches/0/X_ohm");
        }
    }
    SUBCASE("syntax error reports the line") {
        try {
            parse_network("{\n\"phases\": 1,\n,\n}");
            FAIL("expected an exception");
        } catch (const ParseError& e) {
            CHECK(e.where() == "line 3");
        }
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_network("/nonexistent/network.json"), ParseError);
    }
}
