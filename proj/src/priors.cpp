#include "bnnp/priors.hpp"

#include <cfenv>
#include <cmath>

namespace bnnp {

using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

const double kLogVarFloor = std::log(1e-8);   // variance floor
const double kLogCholFloor = std::log(1e-4);  // factor-diagonal floor

Mat chol_diag_bound(int d) {
    Mat b = Mat::Constant(d, d, ParamStore::kUnbounded);
    b.diagonal().setConstant(kLogCholFloor);
    return b;
}

std::string lname(const std::string& prefix, int l, const char* what) {
    return prefix + "/l" + std::to_string(l) + "/" + what;
}

}  // namespace

int learnable_count(double proportion, int total) {
    if (proportion < 0.0 || proportion > 1.0)
        throw ValidationError("learnability proportion must lie in [0, 1]");
    int prev = std::fegetround();
    std::fesetround(FE_TONEAREST);
    double r = std::nearbyint(proportion * static_cast<double>(total));
    std::fesetround(prev);
    return static_cast<int>(r);
}

PriorSet standard_init(ParamStore& store, const std::vector<int>& widths, Structure structure,
                       bool bias, const std::string& prefix) {
    if (widths.size() < 2) throw ValidationError("prior: need at least one layer");
    for (int w : widths)
        if (w < 1) throw ValidationError("prior: layer widths must be >= 1");

    PriorSet p;
    p.structure = structure;
    p.widths = widths;
    p.bias = bias;
    const int L = p.num_layers();

    auto log_std = [&](int l) { return -0.5 * std::log(static_cast<double>(p.fan_in(l))); };

    switch (structure) {
        case Structure::Diagonal:
            for (int l = 0; l < L; ++l) {
                int d0 = p.fan_in(l), dl = widths[l + 1];
                p.layer_mean.push_back(store.add(lname(prefix, l, "mean"), Mat::Zero(d0, dl)));
                ParamId lv = store.add(lname(prefix, l, "log_var"),
                                       Mat::Constant(d0, dl, 2.0 * log_std(l)));
                store.at(lv).lower_bound = Mat::Constant(d0, dl, kLogVarFloor);
                p.layer_log_var.push_back(lv);
            }
            break;
        case Structure::UnitwiseFull:
            for (int l = 0; l < L; ++l) {
                int d0 = p.fan_in(l), dl = widths[l + 1];
                p.layer_mean.push_back(store.add(lname(prefix, l, "mean"), Mat::Zero(d0, dl)));
                p.unit_chol.emplace_back();
                for (int d = 0; d < dl; ++d) {
                    Mat raw = Mat::Zero(d0, d0);
                    raw.diagonal().setConstant(log_std(l));
                    ParamId id = store.add(
                        lname(prefix, l, ("u" + std::to_string(d) + "/chol").c_str()), raw);
                    store.at(id).lower_bound = chol_diag_bound(d0);
                    p.unit_chol.back().push_back(id);
                }
            }
            break;
        case Structure::LayerwiseFull:
            for (int l = 0; l < L; ++l) {
                int d = p.layer_weight_count(l);
                p.layer_mean.push_back(store.add(lname(prefix, l, "mean"), Mat::Zero(d, 1)));
                Mat raw = Mat::Zero(d, d);
                raw.diagonal().setConstant(log_std(l));
                ParamId id = store.add(lname(prefix, l, "chol"), raw);
                store.at(id).lower_bound = chol_diag_bound(d);
                p.layer_chol.push_back(id);
            }
            break;
        case Structure::GlobalFull: {
            int w = p.total_weight_count();
            p.global_mean = store.add(prefix + "/mean", Mat::Zero(w, 1));
            Mat raw = Mat::Zero(w, w);
            int off = 0;
            for (int l = 0; l < L; ++l) {
                int n = p.layer_weight_count(l);
                raw.diagonal().segment(off, n).setConstant(log_std(l));
                off += n;
            }
            ParamId id = store.add(prefix + "/chol", raw);
            store.at(id).lower_bound = chol_diag_bound(w);
            p.global_chol = id;
            break;
        }
    }
    return p;
}

void apply_learnability(PriorSet& prior, ParamStore& store, double proportion) {
    const int total = prior.total_weight_count();
    const int cutoff = learnable_count(proportion, total);
    const int L = prior.num_layers();

    // global index of weight (l, unit d, input i): layer offset + d * fan_in + i
    std::vector<int> layer_offset(L, 0);
    for (int l = 1; l < L; ++l)
        layer_offset[l] = layer_offset[l - 1] + prior.layer_weight_count(l - 1);
    auto widx = [&](int l, int d, int i) { return layer_offset[l] + d * prior.fan_in(l) + i; };

    auto mask_all = [&](ParamId id, const Mat& mask) {
        ParamEntry& e = store.at(id);
        e.mask = mask;
        e.trainable = mask.maxCoeff() > 0.0;
    };

    switch (prior.structure) {
        case Structure::Diagonal:
            for (int l = 0; l < L; ++l) {
                int d0 = prior.fan_in(l), dl = prior.widths[l + 1];
                Mat m(d0, dl);
                for (int d = 0; d < dl; ++d)
                    for (int i = 0; i < d0; ++i) m(i, d) = widx(l, d, i) < cutoff ? 1.0 : 0.0;
                mask_all(prior.layer_mean[l], m);
                mask_all(prior.layer_log_var[l], m);
            }
            break;
        case Structure::UnitwiseFull:
            for (int l = 0; l < L; ++l) {
                int d0 = prior.fan_in(l), dl = prior.widths[l + 1];
                Mat m(d0, dl);
                for (int d = 0; d < dl; ++d)
                    for (int i = 0; i < d0; ++i) m(i, d) = widx(l, d, i) < cutoff ? 1.0 : 0.0;
                mask_all(prior.layer_mean[l], m);
                // a unit straddling the cutoff keeps only factor rows below it
                for (int d = 0; d < dl; ++d) {
                    Mat cm = Mat::Zero(d0, d0);
                    for (int i = 0; i < d0; ++i)
                        if (widx(l, d, i) < cutoff)
                            for (int j = 0; j <= i; ++j) cm(i, j) = 1.0;
                    mask_all(prior.unit_chol[l][d], cm);
                }
            }
            break;
        case Structure::LayerwiseFull:
            for (int l = 0; l < L; ++l) {
                int n = prior.layer_weight_count(l);
                Mat mv(n, 1);
                for (int r = 0; r < n; ++r)
                    mv(r, 0) = layer_offset[l] + r < cutoff ? 1.0 : 0.0;
                mask_all(prior.layer_mean[l], mv);
                Mat cm = Mat::Zero(n, n);
                for (int r = 0; r < n; ++r)
                    if (layer_offset[l] + r < cutoff)
                        for (int c = 0; c <= r; ++c) cm(r, c) = 1.0;
                mask_all(prior.layer_chol[l], cm);
            }
            break;
        case Structure::GlobalFull: {
            int w = total;
            Mat mv(w, 1);
            for (int r = 0; r < w; ++r) mv(r, 0) = r < cutoff ? 1.0 : 0.0;
            mask_all(prior.global_mean, mv);
            Mat cm = Mat::Zero(w, w);
            for (int r = 0; r < cutoff; ++r)
                for (int c = 0; c <= r; ++c) cm(r, c) = 1.0;
            mask_all(prior.global_chol, cm);
            break;
        }
    }
}

Var decode_chol(Tape& tape, Var raw) {
    int d = static_cast<int>(tape.val(raw).rows());
    Mat strict = Mat::Ones(d, d);
    strict.triangularView<Eigen::Upper>().setZero();
    Var lower = ad::hadamard(raw, tape.constant(strict));
    Var diag = ad::diagmat(ad::exp(ad::diagvec(raw)));
    return ad::add(lower, diag);
}

Eigen::MatrixXd encode_chol(const Eigen::MatrixXd& lower) {
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(lower.rows(), lower.cols());
    raw.triangularView<Eigen::StrictlyLower>() = lower.triangularView<Eigen::StrictlyLower>();
    raw.diagonal() = lower.diagonal().array().log();
    return raw;
}

LayerPriorVars decode_layer_prior(Tape& tape, const std::vector<Var>& vars,
                                  const PriorSet& prior, int layer) {
    LayerPriorVars out;
    const int d0 = prior.fan_in(layer);
    const int dl = prior.widths[layer + 1];
    switch (prior.structure) {
        case Structure::Diagonal: {
            Var mean = vars[prior.layer_mean[layer].v];
            Var lv = vars[prior.layer_log_var[layer].v];
            for (int d = 0; d < dl; ++d)
                out.units.push_back(gauss::make_diagonal(ad::block(mean, 0, d, d0, 1),
                                                         ad::block(lv, 0, d, d0, 1)));
            break;
        }
        case Structure::UnitwiseFull: {
            Var mean = vars[prior.layer_mean[layer].v];
            for (int d = 0; d < dl; ++d) {
                Var L = decode_chol(tape, vars[prior.unit_chol[layer][d].v]);
                out.units.push_back(gauss::make_dense_from_chol(
                    Structure::UnitwiseFull, ad::block(mean, 0, d, d0, 1), L));
            }
            break;
        }
        case Structure::LayerwiseFull: {
            Var mean = vars[prior.layer_mean[layer].v];
            Var L = decode_chol(tape, vars[prior.layer_chol[layer].v]);
            out.dense = gauss::make_dense_from_chol(Structure::LayerwiseFull, mean, L);
            break;
        }
        case Structure::GlobalFull:
            throw ValidationError("decode_layer_prior: global prior needs conditioning");
    }
    return out;
}

gauss::Gaussian decode_global_prior(Tape& tape, const std::vector<Var>& vars,
                                    const PriorSet& prior) {
    if (prior.structure != Structure::GlobalFull)
        throw ValidationError("decode_global_prior: prior is not global");
    Var mean = vars[prior.global_mean.v];
    Var L = decode_chol(tape, vars[prior.global_chol.v]);
    return gauss::make_dense_from_chol(Structure::GlobalFull, mean, L);
}

}  // namespace bnnp
