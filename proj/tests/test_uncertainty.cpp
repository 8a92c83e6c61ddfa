#include <catch2/catch_amalgamated.hpp>

#include "glevy/rng.hpp"
#include "glevy/uncertainty.hpp"

#include "support/stats.hpp"

using namespace glevy;

namespace {

bool has_violation(const std::vector<Violation>& vs, const std::string& needle) {
    for (const auto& v : vs)
        if (v.message.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_CASE("validate accepts the unit-jump singleton") {
    const auto u = singleton_set(JumpMeasure::single_atom(1.0, 1.0), {0.0}, Mat::scalar(0.0));
    CHECK(validate(u).empty());
}

TEST_CASE("validate reports an atom at the origin") {
    auto u = singleton_set(JumpMeasure::single_atom(1.0, 1.0), {0.0}, Mat::scalar(0.0));
    u.triples[0].measure.atoms.push_back({Vec{0.0}, 0.2});
    const auto vs = validate(u);
    REQUIRE_FALSE(vs.empty());
    CHECK(has_violation(vs, "atom at origin"));
    CHECK(vs[0].triple_index == 0);
}

TEST_CASE("validate reports super-unit mass") {
    const auto u = singleton_set(JumpMeasure::single_atom(1.0, 1.3), {0.0}, Mat::scalar(0.0));
    const auto vs = validate(u);
    REQUIRE(vs.size() == 1);
    CHECK(has_violation(vs, "mass exceeds normalized lambda=1"));
}

TEST_CASE("validate reports an empty set") {
    UncertaintySet u;
    CHECK(has_violation(validate(u), "empty"));
}

TEST_CASE("transport map: partial-mass atom maps the leading cell, residual to zero") {
    const auto g = build_transport_map(JumpMeasure::single_atom(1.0, 0.6));
    CHECK(g.apply(0.3)[0] == 1.0);
    CHECK(g.apply(0.6)[0] == 1.0);
    CHECK(g.apply(0.6000000001)[0] == 0.0);
    CHECK(g.apply(1.0)[0] == 0.0);
    CHECK(g.apply(0.0)[0] == 0.0);
}

TEST_CASE("transport map: full-mass atom covers the whole interval") {
    const auto g = build_transport_map(JumpMeasure::single_atom(1.0, 1.0));
    CHECK(g.apply(1e-9)[0] == 1.0);
    CHECK(g.apply(0.5)[0] == 1.0);
    CHECK(g.apply(1.0)[0] == 1.0);
    CHECK(g.apply(0.0)[0] == 0.0);  // g(0) = 0 always
}

TEST_CASE("transport map: zero measure maps everything to the origin") {
    const auto g = build_transport_map(JumpMeasure::zero(1));
    CHECK(g.apply(0.2)[0] == 0.0);
    CHECK(g.apply(1.0)[0] == 0.0);
}

TEST_CASE("transport map rejects super-unit mass") {
    CHECK_THROWS_AS(build_transport_map(JumpMeasure::single_atom(1.0, 1.2)), std::invalid_argument);
}

TEST_CASE("pushforward is exact on half-open boxes off the origin") {
    JumpMeasure v{1, {{Vec{-0.5}, 0.25}, {Vec{1.0}, 0.4}, {Vec{2.5}, 0.15}}};
    const auto g = build_transport_map(v);

    // cell lengths landing in a box must reproduce the box mass exactly
    auto pushforward_box = [&](double lo, double hi) {
        double mass = 0.0;
        double prev = 0.0;
        for (std::size_t k = 0; k < g.breakpoints.size(); ++k) {
            const double z = g.values[k][0];
            if (lo < z && z <= hi) mass += g.breakpoints[k] - prev;
            prev = g.breakpoints[k];
        }
        return mass;
    };
    const std::vector<std::pair<double, double>> boxes = {
        {-1.0, -0.25}, {-1.0, 1.0}, {0.5, 3.0}, {1.5, 3.0}, {3.0, 4.0}, {-0.75, 2.5}};
    for (const auto& [lo, hi] : boxes) {
        const Vec lov{lo}, hiv{hi};
        const double expected = v.box_mass(lov, hiv);
        CHECK(std::abs(pushforward_box(lo, hi) - expected) < 1e-12);
    }
}

TEST_CASE("Monte Carlo pushforward matches the target measure") {
    JumpMeasure v{1, {{Vec{-0.5}, 0.25}, {Vec{1.0}, 0.4}, {Vec{2.5}, 0.15}}};
    const auto g = build_transport_map(v);
    const long n = 100000;
    Rng rng(20240501);
    std::vector<double> sample;
    sample.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) sample.push_back(g.apply(rng.uniform01())[0]);

    // discrete target including the residual no-jump atom at 0
    std::vector<std::pair<double, double>> dist = {
        {-0.5, 0.25}, {0.0, 0.2}, {1.0, 0.4}, {2.5, 0.15}};
    const double ks = testsupport::ks_distance_discrete(sample, dist);
    CHECK(ks <= 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("expand_family: intensity endpoints") {
    FamilyDescriptor f;
    f.base_measure = JumpMeasure::single_atom(1.0, 1.0);
    f.intensity = FamilyDescriptor::Interval{0.5, 1.0};
    const auto u = expand_family(f, 2);
    REQUIRE(u.triples.size() == 2);
    CHECK(u.triples[0].measure.total_mass() == Catch::Approx(0.5));
    CHECK(u.triples[1].measure.total_mass() == Catch::Approx(1.0));
    CHECK(validate(u).empty());
}

TEST_CASE("expand_family: sigma grid of three points") {
    FamilyDescriptor f;
    f.base_measure = JumpMeasure::zero(1);
    f.sigma = FamilyDescriptor::Interval{0.5, 1.0};
    const auto u = expand_family(f, 3);
    REQUIRE(u.triples.size() == 3);
    CHECK(u.triples[0].volatility(0, 0) == Catch::Approx(0.5));
    CHECK(u.triples[1].volatility(0, 0) == Catch::Approx(0.75));
    CHECK(u.triples[2].volatility(0, 0) == Catch::Approx(1.0));
    CHECK(validate(u).empty());
}

TEST_CASE("expand_family: degenerate interval collapses to a singleton") {
    FamilyDescriptor f;
    f.base_measure = JumpMeasure::single_atom(1.0, 1.0);
    f.intensity = FamilyDescriptor::Interval{1.0, 1.0};
    const auto u = expand_family(f, 2);
    CHECK(u.triples.size() == 1);
    CHECK(validate(u).empty());
}

TEST_CASE("expand_family rejects bad descriptors") {
    FamilyDescriptor f;
    f.base_measure = JumpMeasure::single_atom(1.0, 1.0);
    f.intensity = FamilyDescriptor::Interval{1.0, 0.5};
    CHECK_THROWS_AS(expand_family(f, 2), std::invalid_argument);
    f.intensity = FamilyDescriptor::Interval{0.5, 1.0};
    CHECK_THROWS_AS(expand_family(f, 1), std::invalid_argument);
}

TEST_CASE("validate after expand_family never reports violations") {
    // a small sweep over well-formed descriptors
    for (int res = 2; res <= 5; ++res) {
        FamilyDescriptor f;
        f.base_measure = JumpMeasure{1, {{Vec{1.0}, 0.5}, {Vec{-2.0}, 0.3}}};
        f.intensity = FamilyDescriptor::Interval{0.25, 1.0};
        f.sigma = FamilyDescriptor::Interval{0.0, 2.0};
        CHECK(validate(expand_family(f, res)).empty());
    }
}
