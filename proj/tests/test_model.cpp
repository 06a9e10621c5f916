#include "doctest.h"

#include <random>

#include "cme/errors.hpp"
#include "cme/model.hpp"

using namespace cme;

TEST_CASE("parse_model handles a trivial document") {
    const ReactionNetwork net = parse_model(R"({"species":["A"],"reactions":[]})");
    CHECK(net.num_species() == 1);
    CHECK(net.num_reactions() == 0);
}

TEST_CASE("parse_model validation errors") {
    CHECK_THROWS_AS(parse_model("{not json"), ParseError);
    // factor naming species 7 in a 5-species model
    CHECK_THROWS_AS(parse_model(R"({"species":["a","b","c","d","e"],"reactions":[
        {"stoich":[1,0,0,0,0],"constant":1.0,
         "factors":[{"species":[7],"form":"poly","params":[0,1]}]}]})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_model(R"({"species":["a"],"reactions":[
        {"stoich":[1],"constant":-2.0,"factors":[]}]})"),
                    ValidationError);
    // same species in two factors of one reaction
    CHECK_THROWS_AS(parse_model(R"({"species":["a"],"reactions":[
        {"stoich":[1],"constant":1.0,
         "factors":[{"species":[0],"form":"poly","params":[0,1]},
                    {"species":[0],"form":"mm","params":[1,1]}]}]})"),
                    ValidationError);
}

TEST_CASE("builtins round-trip through serialize/parse") {
    for (const ReactionNetwork& net :
         {builtin_schloegl(), builtin_lambda_phage(), builtin_cascade(4)}) {
        const ReactionNetwork back = parse_model(serialize_model(net));
        CHECK(serialize_model(back) == serialize_model(net));
        CHECK(back.num_species() == net.num_species());
        CHECK(back.num_reactions() == net.num_reactions());
    }
}

TEST_CASE("Schloegl propensities") {
    const ReactionNetwork net = builtin_schloegl();
    CHECK(net.num_species() == 1);
    CHECK(net.num_reactions() == 4);
    // k0 x(x-1)(x-2) at x=3
    CHECK(propensity_eval(net, 0, {3}) == doctest::Approx(1.5e-3).epsilon(1e-14));
    CHECK(propensity_eval(net, 0, {2}) == 0.0);
    CHECK(propensity_eval(net, 1, {2}) == doctest::Approx(0.36).epsilon(1e-14));
    CHECK(propensity_eval(net, 2, {5}) == doctest::Approx(187.5).epsilon(1e-14));
    CHECK(propensity_eval(net, 3, {5}) == 2200.0);
    CHECK_THROWS_AS(propensity_eval(net, 4, {0}), ValidationError);
}

TEST_CASE("lambda phage propensities at reference points") {
    const ReactionNetwork net = builtin_lambda_phage();
    CHECK(net.num_species() == 5);
    CHECK(net.num_reactions() == 10);
    CHECK(propensity_eval(net, 0, {0, 0, 0, 0, 0}) == doctest::Approx(0.5).epsilon(1e-14));
    // production of S1: (1 + x4) * 0.6/(0.6 + x0)
    CHECK(propensity_eval(net, 1, {2, 0, 0, 0, 3}) ==
          doctest::Approx(4.0 * 0.6 / 2.6).epsilon(1e-14));
    // decay of S4: 0.01 * x4
    CHECK(propensity_eval(net, 9, {0, 0, 0, 0, 7}) == doctest::Approx(0.07).epsilon(1e-14));
}

TEST_CASE("cascade propensities") {
    CHECK(builtin_cascade(20).num_species() == 20);
    CHECK(builtin_cascade(20).num_reactions() == 40);
    const ReactionNetwork net = builtin_cascade(2);
    CHECK(net.num_species() == 2);
    CHECK(net.num_reactions() == 4);
    CHECK(propensity_eval(net, 0, {0, 0}) == doctest::Approx(0.7).epsilon(1e-14));
    // production of S1 driven by x0/(5 + x0)
    for (long x0 : {0L, 1L, 3L, 12L})
        CHECK(propensity_eval(net, 1, {x0, 0}) ==
              doctest::Approx(double(x0) / (5.0 + double(x0))).epsilon(1e-14));
    CHECK(propensity_eval(net, 3, {0, 4}) == doctest::Approx(0.28).epsilon(1e-14));
    CHECK_THROWS_AS(builtin_cascade(1), ValidationError);
}

TEST_CASE("propensities are nonnegative over random admissible states") {
    std::mt19937_64 rng(7);
    auto sweep = [&](const ReactionNetwork& net, long cap) {
        std::uniform_int_distribution<long> u(0, cap);
        for (int rep = 0; rep < 200; ++rep) {
            std::vector<long> x(static_cast<size_t>(net.num_species()));
            for (long& xi : x) xi = u(rng);
            for (int mu = 0; mu < net.num_reactions(); ++mu)
                CHECK(propensity_eval(net, mu, x) >= 0.0);
        }
    };
    sweep(builtin_schloegl(), 799);
    sweep(builtin_lambda_phage(), 10);
    sweep(builtin_cascade(5), 63);
}

TEST_CASE("factorization assignment on the toggle-style partition") {
    const ReactionNetwork net = builtin_lambda_phage();
    const PartitionTree p0 = parse_partition("((0 1)((2 3)(4)))", {5, 5});
    const FactorAssignment assign = validate_factorization(net, p0);
    // reaction 1 has its x4 factor on leaf {4} (index 2) and its x0 factor
    // on leaf {0,1} (index 0)
    CHECK(assign.factors[1][2] == std::vector<int>{0});
    CHECK(assign.factors[1][0] == std::vector<int>{1});
    CHECK(assign.factors[1][1].empty());
    CHECK(assign.constant_leaf == 0);
}

TEST_CASE("one-leaf tree accepts any network") {
    const ReactionNetwork net = builtin_lambda_phage();
    const PartitionTree t = parse_partition("((0 1 2 3 4))", {});
    const FactorAssignment assign = validate_factorization(net, t);
    for (int mu = 0; mu < net.num_reactions(); ++mu)
        CHECK(assign.factors[static_cast<size_t>(mu)][0].size() ==
              net.reactions[static_cast<size_t>(mu)].factors.size());
}

TEST_CASE("a factor spanning a leaf boundary is rejected") {
    ReactionNetwork net;
    net.species = {"a", "b", "c"};
    PropensityFactor f;
    f.species = {0, 2};
    f.form = FactorForm::Poly;
    f.params = {0.0, 1.0};
    net.reactions.push_back({{1, 0, 0}, 1.0, {f}});
    const PartitionTree t = parse_partition("((0 1)(2))", {2});
    CHECK_THROWS_AS(validate_factorization(net, t), ValidationError);
}

TEST_CASE("leaf factor products reproduce the full propensity") {
    std::mt19937_64 rng(11);
    auto verify = [&](const ReactionNetwork& net, const PartitionTree& tree, long cap) {
        const FactorAssignment assign = validate_factorization(net, tree);
        const std::vector<int> leaves = tree.leaves();
        std::uniform_int_distribution<long> u(0, cap);
        for (int rep = 0; rep < 1000; ++rep) {
            std::vector<long> x(static_cast<size_t>(net.num_species()));
            for (long& xi : x) xi = u(rng);
            for (int mu = 0; mu < net.num_reactions(); ++mu) {
                double prod = 1.0;
                for (size_t l = 0; l < leaves.size(); ++l) {
                    const std::vector<int>& sp = tree.nodes[static_cast<size_t>(leaves[l])].species;
                    std::vector<long> counts;
                    for (int s : sp) counts.push_back(x[static_cast<size_t>(s)]);
                    prod *= assign.leaf_value(net, mu, static_cast<int>(l), counts, sp);
                }
                const double direct = propensity_eval(net, mu, x);
                CHECK(prod == doctest::Approx(direct).epsilon(1e-14));
            }
        }
    };
    verify(builtin_lambda_phage(), parse_partition("((0 1)((2 3)(4)))", {5, 5}), 10);
    verify(builtin_lambda_phage(), parse_partition("(((0 1)(2 3))(4))", {5, 5}), 10);
    verify(builtin_lambda_phage(), parse_partition("(((0 1)(2))(3 4))", {5, 5}), 10);
    verify(builtin_cascade(4), parse_partition("((0 1)(2 3))", {4}), 63);
    verify(builtin_schloegl(), parse_partition("((0))", {}), 799);
}
