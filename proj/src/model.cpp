#include "cme/model.hpp"

#include <cassert>
#include <cmath>
#include <set>
#include <sstream>

#include "cme/errors.hpp"
#include "json.hpp"

namespace cme {

double PropensityFactor::eval(const std::vector<long>& counts) const {
    switch (form) {
    case FactorForm::Const:
        return params.at(0);
    case FactorForm::Poly: {
        assert(counts.size() == 1);
        const double x = static_cast<double>(counts[0]);
        double v = 0.0;
        for (auto it = params.rbegin(); it != params.rend(); ++it)
            v = v * x + *it;
        return v;
    }
    case FactorForm::MM: {
        assert(counts.size() == 1);
        const double x = static_cast<double>(counts[0]);
        return params.at(0) * params.at(1) / (params.at(1) + x);
    }
    case FactorForm::Hill: {
        assert(counts.size() == 1);
        const double x = static_cast<double>(counts[0]);
        return params.at(0) * params.at(1) * x / (params.at(1) * x + 1.0);
    }
    }
    return 0.0;
}

double propensity_eval(const ReactionNetwork& net, int mu, const std::vector<long>& x) {
    if (mu < 0 || mu >= net.num_reactions())
        throw ValidationError("reaction index " + std::to_string(mu) + " out of range");
    const Reaction& r = net.reactions[static_cast<size_t>(mu)];
    double v = r.constant;
    std::vector<long> counts;
    for (const PropensityFactor& f : r.factors) {
        counts.clear();
        for (int s : f.species) counts.push_back(x.at(static_cast<size_t>(s)));
        v *= f.eval(counts);
    }
    return v;
}

namespace {

const char* form_name(FactorForm f) {
    switch (f) {
    case FactorForm::Poly: return "poly";
    case FactorForm::MM: return "mm";
    case FactorForm::Hill: return "hill";
    case FactorForm::Const: return "const";
    }
    return "?";
}

FactorForm form_from_name(const std::string& s) {
    if (s == "poly") return FactorForm::Poly;
    if (s == "mm") return FactorForm::MM;
    if (s == "hill") return FactorForm::Hill;
    if (s == "const") return FactorForm::Const;
    throw ParseError("unknown propensity form '" + s + "'");
}

void validate_network(const ReactionNetwork& net) {
    const int d = net.num_species();
    for (int mu = 0; mu < net.num_reactions(); ++mu) {
        const Reaction& r = net.reactions[static_cast<size_t>(mu)];
        const std::string where = "reaction " + std::to_string(mu);
        if (static_cast<int>(r.stoich.size()) != d)
            throw ValidationError(where + ": stoichiometry length " +
                                  std::to_string(r.stoich.size()) + " != species count " +
                                  std::to_string(d));
        if (r.constant < 0.0)
            throw ValidationError(where + ": negative rate constant");
        std::set<int> seen;
        for (size_t fi = 0; fi < r.factors.size(); ++fi) {
            const PropensityFactor& f = r.factors[fi];
            for (int s : f.species) {
                if (s < 0 || s >= d)
                    throw ValidationError(where + ": factor references undeclared species " +
                                          std::to_string(s));
                if (!seen.insert(s).second)
                    throw ValidationError(where + ": species " + std::to_string(s) +
                                          " appears in more than one factor");
            }
            const size_t want = (f.form == FactorForm::Const) ? 0 : 1;
            if (f.species.size() != want)
                throw ValidationError(where + ": form '" + form_name(f.form) + "' takes " +
                                      std::to_string(want) + " species, got " +
                                      std::to_string(f.species.size()));
        }
    }
}

} // namespace

ReactionNetwork parse_model(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("model document: ") + e.what());
    }
    ReactionNetwork net;
    try {
        for (const auto& s : doc.at("species")) net.species.push_back(s.get<std::string>());
        for (const auto& jr : doc.at("reactions")) {
            Reaction r;
            r.stoich = jr.at("stoich").get<std::vector<int>>();
            r.constant = jr.at("constant").get<double>();
            for (const auto& jf : jr.value("factors", nlohmann::json::array())) {
                PropensityFactor f;
                f.species = jf.at("species").get<std::vector<int>>();
                f.form = form_from_name(jf.at("form").get<std::string>());
                f.params = jf.at("params").get<std::vector<double>>();
                r.factors.push_back(std::move(f));
            }
            net.reactions.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model document: ") + e.what());
    }
    validate_network(net);
    return net;
}

std::string serialize_model(const ReactionNetwork& net) {
    nlohmann::json doc;
    doc["species"] = net.species;
    doc["reactions"] = nlohmann::json::array();
    for (const Reaction& r : net.reactions) {
        nlohmann::json jr;
        jr["stoich"] = r.stoich;
        jr["constant"] = r.constant;
        jr["factors"] = nlohmann::json::array();
        for (const PropensityFactor& f : r.factors) {
            nlohmann::json jf;
            jf["species"] = f.species;
            jf["form"] = form_name(f.form);
            jf["params"] = f.params;
            jr["factors"].push_back(jf);
        }
        doc["reactions"].push_back(jr);
    }
    return doc.dump(2);
}

ReactionNetwork builtin_schloegl() {
    ReactionNetwork net;
    net.species = {"S"};
    const double k0 = 2.5e-4, k1 = 0.18, k2 = 37.5, k3 = 2200.0;
    // 3S -> 2S, alpha = k0 x(x-1)(x-2) = k0 (2x - 3x^2 + x^3)
    net.reactions.push_back({{-1}, k0, {{{0}, FactorForm::Poly, {0.0, 2.0, -3.0, 1.0}}}});
    // 2S -> 3S, alpha = k1 x(x-1)
    net.reactions.push_back({{+1}, k1, {{{0}, FactorForm::Poly, {0.0, -1.0, 1.0}}}});
    // S -> *, alpha = k2 x
    net.reactions.push_back({{-1}, k2, {{{0}, FactorForm::Poly, {0.0, 1.0}}}});
    // * -> S, alpha = k3
    net.reactions.push_back({{+1}, k3, {}});
    return net;
}

ReactionNetwork builtin_lambda_phage() {
    ReactionNetwork net;
    net.species = {"S0", "S1", "S2", "S3", "S4"};
    const double a[5] = {0.5, 1.0, 0.15, 0.3, 0.3};
    const double b[5] = {0.12, 0.6, 1.0, 1.0, 1.0};
    const double c[5] = {0.0025, 0.0007, 0.0231, 0.01, 0.01};
    auto stoich = [](int s, int delta) {
        std::vector<int> v(5, 0);
        v[static_cast<size_t>(s)] = delta;
        return v;
    };
    // R0: * -> S0, a0 b0 / (b0 + x1)
    net.reactions.push_back({stoich(0, +1), 1.0, {{{1}, FactorForm::MM, {a[0], b[0]}}}});
    // R1: * -> S1, (a1 + x4) b1 / (b1 + x0)
    net.reactions.push_back({stoich(1, +1), 1.0,
                             {{{4}, FactorForm::Poly, {a[1], 1.0}},
                              {{0}, FactorForm::MM, {1.0, b[1]}}}});
    // R2..R4: * -> Si, ai bi x_dep / (bi x_dep + 1)
    net.reactions.push_back({stoich(2, +1), 1.0, {{{1}, FactorForm::Hill, {a[2], b[2]}}}});
    net.reactions.push_back({stoich(3, +1), 1.0, {{{2}, FactorForm::Hill, {a[3], b[3]}}}});
    net.reactions.push_back({stoich(4, +1), 1.0, {{{2}, FactorForm::Hill, {a[4], b[4]}}}});
    // R5..R9: Si -> *, ci xi
    for (int i = 0; i < 5; ++i)
        net.reactions.push_back({stoich(i, -1), c[static_cast<size_t>(i)],
                                 {{{i}, FactorForm::Poly, {0.0, 1.0}}}});
    return net;
}

ReactionNetwork builtin_cascade(int n) {
    if (n < 2) throw ValidationError("cascade needs at least 2 species");
    ReactionNetwork net;
    for (int i = 0; i < n; ++i) net.species.push_back("S" + std::to_string(i));
    const double a = 0.7, b = 5.0, c = 0.07;
    auto stoich = [n](int s, int delta) {
        std::vector<int> v(static_cast<size_t>(n), 0);
        v[static_cast<size_t>(s)] = delta;
        return v;
    };
    // R0: * -> S0, alpha = a
    net.reactions.push_back({stoich(0, +1), a, {}});
    // Ri: * -> Si, alpha = x_{i-1} / (b + x_{i-1}) expressed in Hill form
    // with parameters (1, 1/b): 1*(1/b)*x / ((1/b)*x + 1) = x / (x + b).
    for (int i = 1; i < n; ++i)
        net.reactions.push_back({stoich(i, +1), 1.0,
                                 {{{i - 1}, FactorForm::Hill, {1.0, 1.0 / b}}}});
    // R_{n+j}: Sj -> *, alpha = c xj
    for (int j = 0; j < n; ++j)
        net.reactions.push_back({stoich(j, -1), c, {{{j}, FactorForm::Poly, {0.0, 1.0}}}});
    return net;
}

double FactorAssignment::leaf_value(const ReactionNetwork& net, int mu, int leaf,
                                    const std::vector<long>& leaf_counts,
                                    const std::vector<int>& leaf_species) const {
    const Reaction& r = net.reactions[static_cast<size_t>(mu)];
    double v = (leaf == constant_leaf) ? r.constant : 1.0;
    std::vector<long> counts;
    for (int fi : factors[static_cast<size_t>(mu)][static_cast<size_t>(leaf)]) {
        const PropensityFactor& f = r.factors[static_cast<size_t>(fi)];
        counts.clear();
        for (int s : f.species) {
            size_t pos = 0;
            while (leaf_species[pos] != s) ++pos;
            counts.push_back(leaf_counts[pos]);
        }
        v *= f.eval(counts);
    }
    return v;
}

FactorAssignment validate_factorization(const ReactionNetwork& net, const PartitionTree& tree) {
    const std::vector<int> leaves = tree.leaves();
    std::vector<int> leaf_of_species(static_cast<size_t>(net.num_species()), -1);
    for (size_t l = 0; l < leaves.size(); ++l)
        for (int s : tree.nodes[static_cast<size_t>(leaves[l])].species)
            leaf_of_species[static_cast<size_t>(s)] = static_cast<int>(l);

    FactorAssignment out;
    out.constant_leaf = 0;
    out.factors.resize(static_cast<size_t>(net.num_reactions()));
    for (int mu = 0; mu < net.num_reactions(); ++mu) {
        auto& per_leaf = out.factors[static_cast<size_t>(mu)];
        per_leaf.resize(leaves.size());
        const Reaction& r = net.reactions[static_cast<size_t>(mu)];
        for (size_t fi = 0; fi < r.factors.size(); ++fi) {
            const PropensityFactor& f = r.factors[fi];
            if (f.species.empty()) {
                per_leaf[static_cast<size_t>(out.constant_leaf)].push_back(static_cast<int>(fi));
                continue;
            }
            const int leaf = leaf_of_species[static_cast<size_t>(f.species[0])];
            for (int s : f.species)
                if (leaf_of_species[static_cast<size_t>(s)] != leaf)
                    throw ValidationError(
                        "reaction " + std::to_string(mu) + ": factor " + std::to_string(fi) +
                        " depends on species in different leaves (factorization violated)");
            per_leaf[static_cast<size_t>(leaf)].push_back(static_cast<int>(fi));
        }
    }
    return out;
}

} // namespace cme
