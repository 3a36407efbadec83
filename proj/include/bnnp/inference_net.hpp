#pragma once

#include "bnnp/config.hpp"
#include "bnnp/params.hpp"
#include "bnnp/rng.hpp"

namespace bnnp {

struct InferenceNetConfig {
    std::vector<int> hidden{50, 50};
    Nonlinearity act = Nonlinearity::Tanh;
};

// MLP mapping one (x, y) pair to a pseudo-target and log-noise per output
// unit of the layer it serves.
struct InferenceNet {
    std::vector<ParamId> weights;  // in x out per linear map
    std::vector<ParamId> biases;   // 1 x out
    Nonlinearity act = Nonlinearity::Tanh;
    int in_dim = 0;
    int out_units = 0;  // network emits 2 * out_units values per point
};

InferenceNet build_inference_net(ParamStore& store, int in_dim, int out_units,
                                 const InferenceNetConfig& cfg, rng::Stream init,
                                 const std::string& name_prefix);

// Pseudo-likelihood parameters for a batch of context points. Row n depends
// only on (x_n, y_n). log-noise is clamped to [-10, 5] before exponentiation
// so precisions are finite and strictly positive.
struct PseudoLikelihood {
    ad::Var targets;     // N x d_l
    ad::Var precisions;  // N x d_l
    int n = 0;
    int units = 0;
};

PseudoLikelihood encode(ad::Tape& tape, const std::vector<ad::Var>& vars,
                        const InferenceNet& net, ad::Var x, ad::Var y);

}  // namespace bnnp
