#pragma once

#include <optional>

#include "bnnp/layer.hpp"

namespace bnnp {

// All parameters of one BNNP: the weight prior Psi, the per-layer inference
// networks Theta, and the likelihood noise.
struct Model {
    NetworkConfig config;
    InferenceNetConfig net_config;
    PriorSet prior;
    std::vector<InferenceNet> nets;  // one per layer
    ParamId log_sigma_y;             // 1 x d_out
    ParamStore store;
};

Model build_model(const NetworkConfig& config, const InferenceNetConfig& net_config,
                  uint64_t seed);

// One weight realisation: per-layer (fan-in [+1]) x d_l matrices, bias row
// last.
using WeightSample = std::vector<Eigen::MatrixXd>;

struct LayerPosterior {
    std::vector<GaussianFactor> units;
    std::optional<GaussianFactor> dense;
};

// Posterior state of one sample path: the conditional layer posteriors and
// the weights that conditioned each subsequent layer.
struct PosteriorPath {
    std::vector<LayerPosterior> layers;
    WeightSample weights;
};

struct PosteriorState {
    NetworkConfig config;
    std::vector<PosteriorPath> paths;
};

struct InferOptions {
    int num_batches = 1;                      // contiguous partition of the context
    std::vector<std::vector<int>> partition;  // explicit partition (overrides num_batches)
    int grad_batch = -1;  // when >= 0, detach every batch except this one
};

// ---- tape-level API (used by objectives and the trainer) ----

struct PathVars {
    std::vector<LayerGaussians> priors;  // conditionals for a global prior
    std::vector<LayerGaussians> posts;
    std::vector<ad::Var> weights;  // per layer
};

struct InferResult {
    std::vector<PathVars> paths;
};

// Amortised inference over the weights: encodes the context once per batch,
// then (per sample path) builds each layer's conditional posterior by
// sequential updates over the batches, samples that layer, and moves on —
// the minibatched procedure yields exactly the full-batch posterior.
InferResult infer_vars(ad::Tape& tape, const Model& model, const std::vector<ad::Var>& vars,
                       const Eigen::MatrixXd& xc, const Eigen::MatrixXd& yc, int num_samples,
                       rng::Stream noise, const InferOptions& opts = {});

// Forward pass through sampled weights on the tape; returns N x d_out.
ad::Var forward_vars(const NetworkConfig& config, const std::vector<ad::Var>& weights,
                     ad::Var x);

// ---- plain API ----

PosteriorState infer(const Model& model, const Eigen::MatrixXd& xc, const Eigen::MatrixXd& yc,
                     int num_samples, uint64_t seed, const InferOptions& opts = {});

inline PosteriorState infer_minibatched(const Model& model, const Eigen::MatrixXd& xc,
                                        const Eigen::MatrixXd& yc, int num_batches,
                                        int num_samples, uint64_t seed) {
    InferOptions opts;
    opts.num_batches = num_batches;
    return infer(model, xc, yc, num_samples, seed, opts);
}

Eigen::MatrixXd forward_plain(const NetworkConfig& config, const WeightSample& weights,
                              const Eigen::MatrixXd& x);

// Per-sample predictive means at the target inputs, one N x d_out matrix per
// weight sample.
std::vector<Eigen::MatrixXd> predict(const NetworkConfig& config,
                                     const std::vector<WeightSample>& samples,
                                     const Eigen::MatrixXd& xt);

// Sequential update of the last layer only: new data are propagated through
// each path's stored earlier-layer samples, the last-layer posterior absorbs
// them, and its weights are redrawn. Earlier layers are untouched.
PosteriorState online_update(const Model& model, const PosteriorState& state,
                             const Eigen::MatrixXd& xu, const Eigen::MatrixXd& yu,
                             uint64_t seed);

// Weight draws from the prior (no conditioning) pushed through the network.
std::vector<Eigen::MatrixXd> prior_predictive_sample(const Model& model,
                                                     const Eigen::MatrixXd& xt, int num_samples,
                                                     uint64_t seed);

// Snapshot of the decoded prior, for sampling-heavy evaluation loops.
struct PriorSnapshot {
    std::vector<std::vector<GaussianFactor>> layer_units;  // factorised structures
    std::vector<GaussianFactor> layer_dense;               // layerwise structure
    std::optional<GaussianFactor> global;                  // global structure
};
PriorSnapshot snapshot_prior(const Model& model);

// Draws one WeightSample from a prior snapshot.
WeightSample sample_prior_weights(const NetworkConfig& config, const PriorSnapshot& prior,
                                  rng::Stream& noise);

double sigma_y_of(const Model& model, int dim = 0);

}  // namespace bnnp
