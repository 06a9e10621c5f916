#pragma once

#include <string>
#include <vector>

#include "cme/tree.hpp"

namespace cme {

/// Closed set of propensity factor shapes. Every factor depends on the
/// population count x of a single species (or none, for Const):
///   Poly : params are polynomial coefficients c0 + c1*x + c2*x^2 + ...
///   MM   : a*b / (b + x)        params = {a, b}
///   Hill : a*b*x / (b*x + 1)    params = {a, b}
///   Const: params = {v}
enum class FactorForm { Poly, MM, Hill, Const };

struct PropensityFactor {
    std::vector<int> species; // dependent species indices
    FactorForm form = FactorForm::Const;
    std::vector<double> params;

    /// Evaluate at the dependent species' counts (same order as `species`).
    double eval(const std::vector<long>& counts) const;
};

struct Reaction {
    std::vector<int> stoich;   // length d, change in counts
    double constant = 1.0;     // nonnegative rate multiplier
    std::vector<PropensityFactor> factors;
};

struct ReactionNetwork {
    std::vector<std::string> species;
    std::vector<Reaction> reactions;

    int num_species() const { return static_cast<int>(species.size()); }
    int num_reactions() const { return static_cast<int>(reactions.size()); }
};

/// alpha_mu(x) = constant * prod of factor values.
double propensity_eval(const ReactionNetwork& net, int mu, const std::vector<long>& x);

/// JSON model document <-> network.
ReactionNetwork parse_model(const std::string& text);
std::string serialize_model(const ReactionNetwork& net);

ReactionNetwork builtin_schloegl();
ReactionNetwork builtin_lambda_phage();
ReactionNetwork builtin_cascade(int n);

/// Per-reaction, per-leaf factor assignment: for reaction mu and leaf l,
/// factors[mu][l] lists the indices of the reaction's factors whose species
/// lie in that leaf. The reaction constant is absorbed into the first leaf.
struct FactorAssignment {
    std::vector<std::vector<std::vector<int>>> factors; // [mu][leaf] -> factor ids
    int constant_leaf = 0;                              // first leaf in tree order

    /// Value of the leaf-restricted propensity alpha^leaf_mu at the given
    /// leaf-local counts (order = leaf species order).
    double leaf_value(const ReactionNetwork& net, int mu, int leaf,
                      const std::vector<long>& leaf_counts,
                      const std::vector<int>& leaf_species) const;
};

/// Check the factorization property against a partition: every factor's
/// species must lie within a single leaf. Throws ValidationError naming the
/// reaction and the offending factor otherwise.
FactorAssignment validate_factorization(const ReactionNetwork& net, const PartitionTree& tree);

} // namespace cme
