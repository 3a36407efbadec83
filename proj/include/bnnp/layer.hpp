#pragma once

#include "bnnp/inference_net.hpp"
#include "bnnp/priors.hpp"

namespace bnnp {

// A layer's posterior has the same shape as its prior: independent per-unit
// blocks, or one dense block over vec(W^l).
using LayerGaussians = LayerPriorVars;

// Closed-form conditional posterior of one amortised linear layer.
// `activations` is the N x (fan-in [+1]) design matrix with the nonlinearity
// and bias column already applied. Factorised structures run one conjugate
// update per output unit; dense structures run a single vec-form update.
// An empty batch returns the prior unchanged.
LayerGaussians layer_posterior(const LayerGaussians& prior, ad::Var activations,
                               const PseudoLikelihood& pseudo, int layer_index);

// Treats `current` as the prior for a further batch of evidence (sequential
// Bayesian inference).
inline LayerGaussians sequential_posterior(const LayerGaussians& current, ad::Var activations,
                                           const PseudoLikelihood& pseudo, int layer_index) {
    return layer_posterior(current, activations, pseudo, layer_index);
}

}  // namespace bnnp
