// The stacked amortised model: conditional layerwise posteriors, sampling,
// minibatched inference, online last-layer updates, and the prior
// predictive.

#include "bnnp/model.hpp"

#include <numeric>

namespace bnnp {

using ad::Mat;
using ad::Tape;
using ad::Var;

Model build_model(const NetworkConfig& config, const InferenceNetConfig& net_config,
                  uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    m.net_config = net_config;
    m.prior = standard_init(m.store, config.widths, config.prior_structure, config.bias);
    rng::Stream init(rng::derive(seed, 0x6e657473ULL));  // net init stream
    const int L = config.num_layers();
    for (int l = 0; l < L; ++l) {
        m.nets.push_back(build_inference_net(m.store, config.d_in() + config.d_out(),
                                             config.widths[l + 1], net_config, init.split(l),
                                             "net/l" + std::to_string(l)));
    }
    Mat ls = Mat::Constant(1, config.d_out(), std::log(config.sigma_y_init));
    m.log_sigma_y = m.store.add("lik/log_sigma_y", ls, config.learn_sigma_y);
    return m;
}

double sigma_y_of(const Model& model, int dim) {
    return std::exp(model.store.at(model.log_sigma_y).value(0, dim));
}

namespace {

Var with_bias(Tape& tape, Var a, bool bias) {
    if (!bias) return a;
    int n = static_cast<int>(tape.val(a).rows());
    return ad::hstack({a, tape.constant(Mat::Ones(n, 1))});
}

// Design matrix of layer l for inputs x under the sampled weights of the
// previous layers: [phi(X^{l-1}), 1], with raw inputs at the first layer.
Var design_for_layer(Tape& tape, const NetworkConfig& config, const std::vector<Var>& ws,
                     int l, Var x) {
    Var a = x;
    for (int j = 0; j < l; ++j) {
        Var z = ad::matmul(with_bias(tape, a, config.bias), ws[j]);
        a = apply_nonlinearity(config.phi, z);
    }
    return with_bias(tape, a, config.bias);
}

std::vector<std::vector<int>> make_partition(int n, const InferOptions& opts) {
    if (!opts.partition.empty()) {
        std::vector<bool> seen(n, false);
        int covered = 0;
        for (const auto& batch : opts.partition)
            for (int i : batch) {
                if (i < 0 || i >= n || seen[i])
                    throw ValidationError("infer: partition must cover the context disjointly");
                seen[i] = true;
                ++covered;
            }
        if (covered != n)
            throw ValidationError("infer: partition must cover the context disjointly");
        return opts.partition;
    }
    int b = std::max(1, opts.num_batches);
    std::vector<std::vector<int>> out;
    for (int k = 0; k < b; ++k) {
        int lo = static_cast<int>(static_cast<long>(n) * k / b);
        int hi = static_cast<int>(static_cast<long>(n) * (k + 1) / b);
        std::vector<int> batch(hi - lo);
        std::iota(batch.begin(), batch.end(), lo);
        out.push_back(std::move(batch));
    }
    return out;
}

Mat take_rows(const Mat& m, const std::vector<int>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

LayerPosterior snapshot_layer(const LayerGaussians& lg) {
    LayerPosterior out;
    for (const auto& u : lg.units) out.units.push_back(gauss::snapshot(u));
    if (lg.dense) out.dense = gauss::snapshot(*lg.dense);
    return out;
}

LayerGaussians constant_layer(Tape& tape, const LayerPosterior& lp) {
    LayerGaussians out;
    for (const auto& u : lp.units) out.units.push_back(gauss::constant(tape, u));
    if (lp.dense) out.dense = gauss::constant(tape, *lp.dense);
    return out;
}

// Draws this layer's weights from its posterior; per-unit blocks become
// columns, a dense block is unstacked column-major.
Var sample_layer_weights(Tape& tape, const LayerGaussians& post, int fan_in, int d_out,
                         rng::Stream& noise) {
    if (post.dense) {
        Var eps = tape.constant(noise.normal_matrix(fan_in * d_out, 1));
        return ad::reshape(gauss::sample(*post.dense, eps), fan_in, d_out);
    }
    std::vector<Var> cols;
    cols.reserve(post.units.size());
    for (const auto& u : post.units) {
        Var eps = tape.constant(noise.normal_matrix(fan_in, 1));
        cols.push_back(gauss::sample(u, eps));
    }
    return ad::hstack(cols);
}

}  // namespace

Var forward_vars(const NetworkConfig& config, const std::vector<Var>& weights, Var x) {
    Tape& tape = *x.tape;
    const int L = config.num_layers();
    Var a = x;
    for (int j = 0; j < L; ++j) {
        Var z = ad::matmul(with_bias(tape, a, config.bias), weights[j]);
        a = (j + 1 < L) ? apply_nonlinearity(config.phi, z) : z;
    }
    return a;
}

InferResult infer_vars(Tape& tape, const Model& model, const std::vector<Var>& vars,
                       const Mat& xc, const Mat& yc, int num_samples, rng::Stream noise,
                       const InferOptions& opts) {
    const NetworkConfig& config = model.config;
    const int L = config.num_layers();
    const int n = static_cast<int>(xc.rows());
    if (yc.rows() != n) throw ValidationError("infer: context x/y row mismatch");
    if (xc.cols() != config.d_in() || yc.cols() != config.d_out())
        throw ValidationError("infer: context dimension mismatch");
    if (!xc.allFinite() || !yc.allFinite())
        throw ValidationError("infer: non-finite context values");
    if (num_samples < 1) throw ValidationError("infer: need at least one sample");

    auto partition = make_partition(n, opts);
    const int B = static_cast<int>(partition.size());

    // Per-batch constants and pseudo-likelihoods; the encoding is pointwise
    // so per-batch encoding equals slicing a full-batch encoding.
    std::vector<Var> xb(B), yb(B);
    std::vector<std::vector<PseudoLikelihood>> pseudo(L, std::vector<PseudoLikelihood>(B));
    for (int b = 0; b < B; ++b) {
        xb[b] = tape.constant(take_rows(xc, partition[b]));
        yb[b] = tape.constant(take_rows(yc, partition[b]));
    }
    for (int l = 0; l < L; ++l) {
        for (int b = 0; b < B; ++b) {
            PseudoLikelihood ps = encode(tape, vars, model.nets[l], xb[b], yb[b]);
            if (l == L - 1) {
                ps.targets = yb[b];  // the real observations
                if (!config.last_layer_noise_from_net && ps.n > 0) {
                    Var prec = ad::exp(ad::scale(vars[model.log_sigma_y.v], -2.0));
                    ps.precisions = ad::matmul(tape.constant(Mat::Ones(ps.n, 1)), prec);
                }
            }
            if (opts.grad_batch >= 0 && b != opts.grad_batch && ps.n > 0) {
                ps.targets = ad::detach(ps.targets);
                ps.precisions = ad::detach(ps.precisions);
            }
            pseudo[l][b] = ps;
        }
    }

    // Path-independent priors decode once.
    std::vector<LayerGaussians> shared_priors;
    gauss::Gaussian global_prior;
    if (config.prior_structure == Structure::GlobalFull) {
        global_prior = decode_global_prior(tape, vars, model.prior);
    } else {
        for (int l = 0; l < L; ++l)
            shared_priors.push_back(decode_layer_prior(tape, vars, model.prior, l));
    }
    const auto block_dims = model.prior.layer_block_dims();

    InferResult result;
    result.paths.resize(num_samples);
    for (int k = 0; k < num_samples; ++k) {
        PathVars& path = result.paths[k];
        for (int l = 0; l < L; ++l) {
            LayerGaussians prior_l;
            LayerGaussians post;
            bool shared_with_first_path = (l == 0 && k > 0);
            if (shared_with_first_path) {
                // the first layer's posterior cannot depend on the path
                prior_l = result.paths[0].priors[0];
                post = result.paths[0].posts[0];
            } else {
                if (config.prior_structure == Structure::GlobalFull) {
                    Var realized;
                    if (l > 0) {
                        std::vector<Var> vecs;
                        for (int j = 0; j < l; ++j)
                            vecs.push_back(ad::reshape(path.weights[j], block_dims[j], 1));
                        realized = ad::vstack(vecs);
                    }
                    prior_l.dense = gauss::condition_on_previous(
                        global_prior, realized, block_dims, l,
                        "layer " + std::to_string(l + 1) + " conditional");
                } else {
                    prior_l = shared_priors[l];
                }
                post = prior_l;
                for (int b = 0; b < B; ++b) {
                    if (pseudo[l][b].n == 0) continue;
                    Var design = design_for_layer(tape, config, path.weights, l, xb[b]);
                    if (opts.grad_batch >= 0 && b != opts.grad_batch)
                        design = ad::detach(design);
                    post = sequential_posterior(post, design, pseudo[l][b], l);
                }
            }
            rng::Stream layer_noise = noise.split(static_cast<uint64_t>(l),
                                                  static_cast<uint64_t>(k));
            Var w = sample_layer_weights(tape, post, config.fan_in(l), config.widths[l + 1],
                                         layer_noise);
            path.priors.push_back(std::move(prior_l));
            path.posts.push_back(std::move(post));
            path.weights.push_back(w);
        }
    }
    return result;
}

PosteriorState infer(const Model& model, const Mat& xc, const Mat& yc, int num_samples,
                     uint64_t seed, const InferOptions& opts) {
    Tape tape(false);
    auto vars = model.store.vars(tape);
    auto res = infer_vars(tape, model, vars, xc, yc, num_samples, rng::Stream(seed), opts);
    PosteriorState state;
    state.config = model.config;
    for (const auto& path : res.paths) {
        PosteriorPath p;
        for (const auto& lg : path.posts) p.layers.push_back(snapshot_layer(lg));
        for (const auto& w : path.weights) p.weights.push_back(tape.val(w));
        state.paths.push_back(std::move(p));
    }
    return state;
}

Mat forward_plain(const NetworkConfig& config, const WeightSample& weights, const Mat& x) {
    const int L = config.num_layers();
    Mat a = x;
    for (int j = 0; j < L; ++j) {
        Mat aug(a.rows(), a.cols() + (config.bias ? 1 : 0));
        aug.leftCols(a.cols()) = a;
        if (config.bias) aug.col(a.cols()).setOnes();
        Mat z = aug * weights[j];
        a = (j + 1 < L) ? apply_nonlinearity(config.phi, z) : z;
    }
    return a;
}

std::vector<Mat> predict(const NetworkConfig& config, const std::vector<WeightSample>& samples,
                         const Mat& xt) {
    std::vector<Mat> out;
    out.reserve(samples.size());
    for (const auto& w : samples) out.push_back(forward_plain(config, w, xt));
    return out;
}

PosteriorState online_update(const Model& model, const PosteriorState& state, const Mat& xu,
                             const Mat& yu, uint64_t seed) {
    if (xu.rows() == 0) return state;
    if (xu.rows() != yu.rows()) throw ValidationError("online_update: x/y row mismatch");
    const NetworkConfig& config = model.config;
    const int L = config.num_layers();

    PosteriorState out = state;
    rng::Stream noise(seed);
    for (size_t p = 0; p < state.paths.size(); ++p) {
        Tape tape(false);
        auto vars = model.store.vars(tape);
        const PosteriorPath& path = state.paths[p];

        std::vector<Var> stored;
        for (int j = 0; j + 1 < L; ++j) stored.push_back(tape.constant(path.weights[j]));
        Var design = design_for_layer(tape, config, stored, L - 1, tape.constant(xu));

        PseudoLikelihood ps =
            encode(tape, vars, model.nets[L - 1], tape.constant(xu), tape.constant(yu));
        ps.targets = tape.constant(yu);
        if (!config.last_layer_noise_from_net) {
            Var prec = ad::exp(ad::scale(vars[model.log_sigma_y.v], -2.0));
            ps.precisions = ad::matmul(tape.constant(Mat::Ones(ps.n, 1)), prec);
        }

        LayerGaussians current = constant_layer(tape, path.layers[L - 1]);
        LayerGaussians updated = sequential_posterior(current, design, ps, L - 1);
        out.paths[p].layers[L - 1] = snapshot_layer(updated);

        rng::Stream path_noise = noise.split(p);
        Var w = sample_layer_weights(tape, updated, config.fan_in(L - 1), config.widths[L],
                                     path_noise);
        out.paths[p].weights[L - 1] = tape.val(w);
    }
    return out;
}

PriorSnapshot snapshot_prior(const Model& model) {
    Tape tape(false);
    auto vars = model.store.vars(tape);
    PriorSnapshot out;
    const int L = model.config.num_layers();
    if (model.config.prior_structure == Structure::GlobalFull) {
        out.global = gauss::snapshot(decode_global_prior(tape, vars, model.prior));
        return out;
    }
    for (int l = 0; l < L; ++l) {
        auto lg = decode_layer_prior(tape, vars, model.prior, l);
        if (lg.dense) {
            out.layer_dense.push_back(gauss::snapshot(*lg.dense));
        } else {
            out.layer_units.emplace_back();
            for (const auto& u : lg.units) out.layer_units.back().push_back(gauss::snapshot(u));
        }
    }
    return out;
}

WeightSample sample_prior_weights(const NetworkConfig& config, const PriorSnapshot& prior,
                                  rng::Stream& noise) {
    const int L = config.num_layers();
    WeightSample ws;
    if (prior.global) {
        Eigen::VectorXd omega = prior.global->sample(noise.normal_vector(prior.global->dim()));
        int off = 0;
        for (int l = 0; l < L; ++l) {
            int fi = config.fan_in(l), dl = config.widths[l + 1];
            ws.push_back(Eigen::Map<const Mat>(omega.data() + off, fi, dl));
            off += fi * dl;
        }
        return ws;
    }
    for (int l = 0; l < L; ++l) {
        int fi = config.fan_in(l), dl = config.widths[l + 1];
        if (!prior.layer_dense.empty()) {
            Eigen::VectorXd v = prior.layer_dense[l].sample(noise.normal_vector(fi * dl));
            ws.push_back(Eigen::Map<const Mat>(v.data(), fi, dl));
        } else {
            Mat w(fi, dl);
            for (int d = 0; d < dl; ++d)
                w.col(d) = prior.layer_units[l][d].sample(noise.normal_vector(fi));
            ws.push_back(std::move(w));
        }
    }
    return ws;
}

std::vector<Mat> prior_predictive_sample(const Model& model, const Mat& xt, int num_samples,
                                         uint64_t seed) {
    auto prior = snapshot_prior(model);
    rng::Stream root(seed);
    std::vector<Mat> out;
    out.reserve(num_samples);
    for (int k = 0; k < num_samples; ++k) {
        rng::Stream s = root.split(k);
        WeightSample w = sample_prior_weights(model.config, prior, s);
        out.push_back(forward_plain(model.config, w, xt));
    }
    return out;
}

}  // namespace bnnp
