#include "bnnp/inference_net.hpp"

namespace bnnp {

using ad::Mat;
using ad::Tape;
using ad::Var;

InferenceNet build_inference_net(ParamStore& store, int in_dim, int out_units,
                                 const InferenceNetConfig& cfg, rng::Stream init,
                                 const std::string& prefix) {
    InferenceNet net;
    net.act = cfg.act;
    net.in_dim = in_dim;
    net.out_units = out_units;

    std::vector<int> dims;
    dims.push_back(in_dim);
    for (int h : cfg.hidden) {
        if (h < 1) throw ValidationError("inference net hidden width must be >= 1");
        dims.push_back(h);
    }
    dims.push_back(2 * out_units);

    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        double std = 1.0 / std::sqrt(static_cast<double>(dims[i]));
        Mat w = std * init.normal_matrix(dims[i], dims[i + 1]);
        net.weights.push_back(store.add(prefix + "/w" + std::to_string(i), w));
        net.biases.push_back(
            store.add(prefix + "/b" + std::to_string(i), Mat::Zero(1, dims[i + 1])));
    }
    return net;
}

PseudoLikelihood encode(Tape& tape, const std::vector<Var>& vars, const InferenceNet& net,
                        Var x, Var y) {
    const Mat& xv = tape.val(x);
    const Mat& yv = tape.val(y);
    if (xv.rows() != yv.rows()) throw ValidationError("encode: x/y row mismatch");
    if (!xv.allFinite() || !yv.allFinite())
        throw ValidationError("encode: non-finite context values");
    const int n = static_cast<int>(xv.rows());
    const int u = net.out_units;
    if (xv.cols() + yv.cols() != net.in_dim)
        throw ValidationError("encode: input dimension mismatch");

    PseudoLikelihood out;
    out.n = n;
    out.units = u;
    if (n == 0) {
        out.targets = tape.constant(Mat::Zero(0, u));
        out.precisions = tape.constant(Mat::Zero(0, u));
        return out;
    }

    Var h = ad::hstack({x, y});
    for (size_t i = 0; i < net.weights.size(); ++i) {
        h = ad::add_rowvec(ad::matmul(h, vars[net.weights[i].v]), vars[net.biases[i].v]);
        if (i + 1 < net.weights.size()) h = apply_nonlinearity(net.act, h);
    }
    out.targets = ad::block(h, 0, 0, n, u);
    Var log_noise = ad::clamp(ad::block(h, 0, u, n, u), -10.0, 5.0);
    out.precisions = ad::exp(ad::scale(log_noise, -2.0));
    return out;
}

}  // namespace bnnp
