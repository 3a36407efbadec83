#pragma once

#include <optional>
#include <vector>

#include "bnnp/gaussian.hpp"
#include "bnnp/params.hpp"

namespace bnnp {

// Per-layer decoded prior: independent per-unit blocks for the factorised
// structures, or one dense block over vec(W^l).
struct LayerPriorVars {
    std::vector<gauss::Gaussian> units;
    std::optional<gauss::Gaussian> dense;
};

// The learnable weight-prior parameters across all layers. Means are stored
// raw, variances in log space, dense covariances as unconstrained Cholesky
// factors with log diagonal. A per-element mask controls which parameters the
// optimizer may move.
struct PriorSet {
    Structure structure = Structure::UnitwiseFull;
    std::vector<int> widths;  // d0..dL
    bool bias = true;

    std::vector<ParamId> layer_mean;               // all structures except GlobalFull
    std::vector<ParamId> layer_log_var;            // Diagonal
    std::vector<std::vector<ParamId>> unit_chol;   // UnitwiseFull, [layer][unit]
    std::vector<ParamId> layer_chol;               // LayerwiseFull
    ParamId global_mean, global_chol;              // GlobalFull

    int num_layers() const { return static_cast<int>(widths.size()) - 1; }
    int fan_in(int l) const { return widths[l] + (bias ? 1 : 0); }
    int layer_weight_count(int l) const { return fan_in(l) * widths[l + 1]; }
    int total_weight_count() const {
        int n = 0;
        for (int l = 0; l < num_layers(); ++l) n += layer_weight_count(l);
        return n;
    }
    std::vector<int> layer_block_dims() const {
        std::vector<int> dims(num_layers());
        for (int l = 0; l < num_layers(); ++l) dims[l] = layer_weight_count(l);
        return dims;
    }
};

// Zero means, per-weight variance 1/fan-in (bias column counted); dense
// structures start diagonal with those variances.
PriorSet standard_init(ParamStore& store, const std::vector<int>& widths, Structure structure,
                       bool bias = true, const std::string& name_prefix = "prior");

// Marks the prior parameters of the first round(p * |W|) weights trainable
// (first-layer-first enumeration, ties rounded to even); everything else is
// frozen at its current value. All parameters tied to one weight (mean,
// variance row, covariance row) move together.
void apply_learnability(PriorSet& prior, ParamStore& store, double proportion);

// Decoded Cholesky factor of a raw parameter block: strict lower triangle
// passes through, the diagonal is exponentiated.
ad::Var decode_chol(ad::Tape& tape, ad::Var raw);
// Inverse of decode_chol for a plain lower factor (used to seed raw storage).
Eigen::MatrixXd encode_chol(const Eigen::MatrixXd& lower);

LayerPriorVars decode_layer_prior(ad::Tape& tape, const std::vector<ad::Var>& vars,
                                  const PriorSet& prior, int layer);
gauss::Gaussian decode_global_prior(ad::Tape& tape, const std::vector<ad::Var>& vars,
                                    const PriorSet& prior);

// round-half-to-even of p * total.
int learnable_count(double proportion, int total);

}  // namespace bnnp
