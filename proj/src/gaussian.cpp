// Structured Gaussian blocks: conjugate updates, conditionals, KL, sampling.
// Quadratic forms go through triangular solves against cached Cholesky
// factors; explicit inverses never appear.

#include "bnnp/gaussian.hpp"

#include <cmath>

namespace bnnp {

const char* structure_name(Structure s) {
    switch (s) {
        case Structure::Diagonal: return "diagonal";
        case Structure::UnitwiseFull: return "unitwise";
        case Structure::LayerwiseFull: return "layerwise";
        case Structure::GlobalFull: return "full";
    }
    return "?";
}

Structure structure_from_name(const std::string& name) {
    if (name == "diagonal") return Structure::Diagonal;
    if (name == "unitwise") return Structure::UnitwiseFull;
    if (name == "layerwise") return Structure::LayerwiseFull;
    if (name == "full") return Structure::GlobalFull;
    throw ValidationError("unknown prior structure '" + name + "'");
}

Eigen::VectorXd GaussianFactor::sample(const Eigen::VectorXd& eps) const {
    if (eps.size() != mean.size()) throw ValidationError("GaussianFactor::sample: noise dim");
    if (diagonal()) return mean + variance.cwiseSqrt().cwiseProduct(eps);
    return mean + chol * eps;
}

Eigen::MatrixXd GaussianFactor::dense_cov() const {
    if (diagonal()) return Eigen::MatrixXd(variance.asDiagonal());
    return cov;
}

GaussianFactor GaussianFactor::make_diagonal(Eigen::VectorXd mean, Eigen::VectorXd variance) {
    if (mean.size() != variance.size()) throw ValidationError("diagonal factor: size mismatch");
    if (!(variance.array() > 0.0).all()) throw ValidationError("diagonal factor: variance <= 0");
    GaussianFactor f;
    f.structure = Structure::Diagonal;
    f.mean = std::move(mean);
    f.variance = std::move(variance);
    f.log_det = f.variance.array().log().sum();
    return f;
}

GaussianFactor GaussianFactor::make_dense(Structure s, Eigen::VectorXd mean,
                                          Eigen::MatrixXd cov, const std::string& context) {
    if (s == Structure::Diagonal) throw ValidationError("make_dense: diagonal structure");
    if (mean.size() != cov.rows() || cov.rows() != cov.cols())
        throw ValidationError("dense factor: size mismatch");
    GaussianFactor f;
    f.structure = s;
    f.mean = std::move(mean);
    f.cov = 0.5 * (cov + cov.transpose());
    f.chol = ad::cholesky_plain(f.cov, context);
    double rel = (f.chol * f.chol.transpose() - f.cov).norm() /
                 std::max(f.cov.norm(), 1e-300);
    if (rel > 1e-10)
        throw NumericalError("dense factor: Cholesky reconstruction off by " +
                             std::to_string(rel) + (context.empty() ? "" : " (" + context + ")"));
    f.log_det = 2.0 * f.chol.diagonal().array().log().sum();
    return f;
}

namespace gauss {

using ad::Mat;
using ad::Tape;
using ad::Var;

Gaussian make_diagonal(Var mean, Var log_var) {
    Tape& t = *mean.tape;
    if (t.val(mean).cols() != 1 || t.val(log_var).cols() != 1 ||
        t.val(mean).rows() != t.val(log_var).rows())
        throw ValidationError("gauss::make_diagonal: shape mismatch");
    Gaussian g;
    g.structure = Structure::Diagonal;
    g.mean = mean;
    g.log_var = log_var;
    g.dim = static_cast<int>(t.val(mean).rows());
    return g;
}

Gaussian make_dense(Structure s, Var mean, Var cov, const std::string& context) {
    Tape& t = *mean.tape;
    Gaussian g;
    g.structure = s;
    g.mean = mean;
    g.cov = cov;
    g.chol = ad::cholesky(cov, context);
    g.dim = static_cast<int>(t.val(mean).rows());
    if (t.val(cov).rows() != g.dim) throw ValidationError("gauss::make_dense: shape mismatch");
    return g;
}

Gaussian make_dense_from_chol(Structure s, Var mean, Var chol_lower) {
    Tape& t = *mean.tape;
    Gaussian g;
    g.structure = s;
    g.mean = mean;
    g.chol = chol_lower;
    g.cov = ad::matmul(chol_lower, ad::transpose(chol_lower));
    g.dim = static_cast<int>(t.val(mean).rows());
    return g;
}

Gaussian constant(Tape& tape, const GaussianFactor& f) {
    Gaussian g;
    g.structure = f.structure;
    g.dim = f.dim();
    g.mean = tape.constant(f.mean);
    if (f.diagonal()) {
        g.log_var = tape.constant(f.variance.array().log().matrix());
    } else {
        g.cov = tape.constant(f.cov);
        g.chol = tape.constant(f.chol);
    }
    return g;
}

GaussianFactor snapshot(const Gaussian& g) {
    const Tape& t = *g.mean.tape;
    if (g.diagonal())
        return GaussianFactor::make_diagonal(t.val(g.mean).col(0),
                                             t.val(g.log_var).array().exp().matrix().col(0));
    GaussianFactor f;
    f.structure = g.structure;
    f.mean = t.val(g.mean).col(0);
    f.cov = t.val(g.cov);
    f.cov = 0.5 * (f.cov + f.cov.transpose());
    f.chol = t.val(g.chol);
    f.log_det = 2.0 * f.chol.diagonal().array().log().sum();
    return f;
}

namespace {

void check_finite(const Mat& m, const char* what, const std::string& context) {
    if (!m.allFinite())
        throw ValidationError(std::string(what) + ": non-finite values" +
                              (context.empty() ? "" : " (" + context + ")"));
}

// Sigma^{-1} as a Var (via triangular solves on the cached factor) together
// with Sigma^{-1} mu.
std::pair<Var, Var> precision_form(const Gaussian& g) {
    Tape& t = *g.mean.tape;
    if (g.diagonal()) {
        Var prec = ad::exp(ad::neg(g.log_var));
        return {ad::diagmat(prec), ad::hadamard(prec, g.mean)};
    }
    Var eye = t.constant(Mat::Identity(g.dim, g.dim));
    Var inv = ad::solve_lower_t(g.chol, ad::solve_lower(g.chol, eye));
    Var imu = ad::solve_lower_t(g.chol, ad::solve_lower(g.chol, g.mean));
    return {inv, imu};
}

// Completes a conjugate update given the posterior precision P = S^{-1} and
// right-hand side r = Sigma^{-1} mu + Phi^T Lambda y.
Gaussian finish_update(Structure out_structure, Var prec, Var rhs, const std::string& context) {
    Tape& t = *prec.tape;
    int d = static_cast<int>(t.val(rhs).rows());
    Var sym = ad::scale(ad::add(prec, ad::transpose(prec)), 0.5);
    Var lp = ad::cholesky(sym, context);
    Var mean = ad::solve_lower_t(lp, ad::solve_lower(lp, rhs));
    Var eye = t.constant(Mat::Identity(d, d));
    Var cov = ad::solve_lower_t(lp, ad::solve_lower(lp, eye));
    cov = ad::scale(ad::add(cov, ad::transpose(cov)), 0.5);
    return make_dense(out_structure, mean, cov, context);
}

}  // namespace

Gaussian conjugate_update(const Gaussian& prior, Var design, Var targets, Var precisions,
                          const std::string& context) {
    Tape& t = *prior.mean.tape;
    const Mat& phi = t.val(design);
    const Mat& y = t.val(targets);
    const Mat& lam = t.val(precisions);
    if (prior.structure != Structure::Diagonal && prior.structure != Structure::UnitwiseFull)
        throw ValidationError("conjugate_update: prior must be diagonal or unitwise");
    if (phi.cols() != prior.dim || y.rows() != phi.rows() || lam.rows() != phi.rows() ||
        y.cols() != 1 || lam.cols() != 1)
        throw ValidationError("conjugate_update: shape mismatch" +
                              (context.empty() ? "" : " (" + context + ")"));
    if (phi.rows() == 0) return prior;
    check_finite(phi, "conjugate_update design", context);
    check_finite(y, "conjugate_update targets", context);
    check_finite(lam, "conjugate_update precisions", context);
    if (!(lam.array() > 0.0).all())
        throw ValidationError("conjugate_update: precisions must be strictly positive" +
                              (context.empty() ? "" : " (" + context + ")"));

    auto [iprior, imu] = precision_form(prior);
    Var weighted = ad::scale_rows(design, precisions);            // Lambda Phi
    Var gram = ad::matmul(ad::transpose(design), weighted);       // Phi^T Lambda Phi
    Var prec = ad::add(iprior, gram);
    Var rhs = ad::add(imu, ad::matmul(ad::transpose(design), ad::hadamard(precisions, targets)));
    return finish_update(Structure::UnitwiseFull, prec, rhs, context);
}

Gaussian conjugate_update_vec(const Gaussian& prior, Var activations, Var targets,
                              Var precisions, const std::string& context) {
    Tape& t = *prior.mean.tape;
    const Mat& phi = t.val(activations);
    const Mat& y = t.val(targets);
    const Mat& lam = t.val(precisions);
    if (prior.diagonal())
        throw ValidationError("conjugate_update_vec: prior must be dense over vec(W)");
    int d0 = static_cast<int>(phi.cols());
    int dl = static_cast<int>(y.cols());
    if (prior.dim != d0 * dl || lam.rows() != y.rows() || lam.cols() != dl ||
        phi.rows() != y.rows())
        throw ValidationError("conjugate_update_vec: shape mismatch" +
                              (context.empty() ? "" : " (" + context + ")"));
    if (phi.rows() == 0) return prior;
    check_finite(phi, "conjugate_update_vec design", context);
    check_finite(y, "conjugate_update_vec targets", context);
    check_finite(lam, "conjugate_update_vec precisions", context);
    if (!(lam.array() > 0.0).all())
        throw ValidationError("conjugate_update_vec: precisions must be strictly positive" +
                              (context.empty() ? "" : " (" + context + ")"));

    const int n_rows = static_cast<int>(phi.rows());
    auto [iprior, imu] = precision_form(prior);
    // Per-unit Gram blocks Phi^T Lambda_d Phi stacked block-diagonally; the
    // right-hand side is vec(Phi^T (Lambda o Y)).
    std::vector<Var> gram_blocks;
    gram_blocks.reserve(dl);
    for (int d = 0; d < dl; ++d) {
        Var lam_d = ad::block(precisions, 0, d, n_rows, 1);
        Var weighted = ad::scale_rows(activations, lam_d);
        gram_blocks.push_back(ad::matmul(ad::transpose(activations), weighted));
    }
    Var gram = ad::blockdiag(gram_blocks);
    Var ytil = ad::hadamard(targets, precisions);
    Var phiy = ad::matmul(ad::transpose(activations), ytil);  // D0 x dl
    Var rhs = ad::add(imu, ad::reshape(phiy, d0 * dl, 1));
    Var prec = ad::add(iprior, gram);
    return finish_update(prior.structure, prec, rhs, context);
}

Gaussian condition_on_previous(const Gaussian& global, Var realized,
                               const std::vector<int>& block_dims, int layer_index,
                               const std::string& context) {
    Tape& t = *global.mean.tape;
    if (global.diagonal())
        throw ValidationError("condition_on_previous: global factor must be dense");
    if (layer_index < 0 || layer_index >= static_cast<int>(block_dims.size()))
        throw ValidationError("condition_on_previous: layer index out of range");
    int p = 0;
    for (int l = 0; l < layer_index; ++l) p += block_dims[l];
    int c = block_dims[layer_index];

    Var mu_c = ad::block(global.mean, p, 0, c, 1);
    Var cov_cc = ad::block(global.cov, p, p, c, c);
    if (layer_index == 0 || p == 0)
        return make_dense(Structure::LayerwiseFull, mu_c, cov_cc, context);

    if (t.val(realized).rows() != p || t.val(realized).cols() != 1)
        throw ValidationError("condition_on_previous: realized weights must cover layers before " +
                              std::to_string(layer_index));
    Var mu_p = ad::block(global.mean, 0, 0, p, 1);
    Var cov_pp = ad::block(global.cov, 0, 0, p, p);
    Var cov_pc = ad::block(global.cov, 0, p, p, c);
    Var lpp = ad::cholesky(cov_pp, context.empty() ? "previous-layer block" : context);

    // Schur complement through the factor: A = Lpp^{-1} Sigma_pc.
    Var a = ad::solve_lower(lpp, cov_pc);
    Var cov_cond = ad::sub(cov_cc, ad::matmul(ad::transpose(a), a));
    cov_cond = ad::scale(ad::add(cov_cond, ad::transpose(cov_cond)), 0.5);
    Var resid = ad::solve_lower(lpp, ad::sub(realized, mu_p));
    Var mean_cond = ad::add(mu_c, ad::matmul(ad::transpose(a), resid));
    return make_dense(Structure::LayerwiseFull, mean_cond, cov_cond, context);
}

Var kl_divergence(const Gaussian& q, const Gaussian& p) {
    if (q.dim != p.dim) throw ValidationError("kl_divergence: dimension mismatch");
    Tape& t = *q.mean.tape;
    int d = q.dim;

    if (q.diagonal() && p.diagonal()) {
        // 0.5 sum( e^{lq-lp} + (mp-mq)^2 e^{-lp} - 1 + lp - lq )
        Var dlv = ad::sub(q.log_var, p.log_var);
        Var ratio = ad::exp(dlv);
        Var dm = ad::sub(p.mean, q.mean);
        Var quad = ad::hadamard(ad::square(dm), ad::exp(ad::neg(p.log_var)));
        Var inner = ad::sub(ad::add(ratio, quad), ad::add_const(dlv, 1.0));
        return ad::scale(ad::sum(inner), 0.5);
    }

    // Promote to dense factors. A diagonal block's Cholesky is diag(e^{lv/2}).
    Var lq = q.diagonal() ? ad::diagmat(ad::exp(ad::scale(q.log_var, 0.5))) : q.chol;
    Var lp = p.diagonal() ? ad::diagmat(ad::exp(ad::scale(p.log_var, 0.5))) : p.chol;

    Var a = ad::solve_lower(lp, lq);
    Var trace = ad::sum(ad::square(a));
    Var u = ad::solve_lower(lp, ad::sub(q.mean, p.mean));
    Var quad = ad::sum(ad::square(u));
    Var half_logdet_p = ad::sum(ad::log(ad::diagvec(lp)));
    Var half_logdet_q = ad::sum(ad::log(ad::diagvec(lq)));
    Var logdet_term = ad::scale(ad::sub(half_logdet_p, half_logdet_q), 2.0);
    Var out = ad::add(ad::add(trace, quad), logdet_term);
    out = ad::add_const(out, -static_cast<double>(d));
    return ad::scale(out, 0.5);
}

Var sample(const Gaussian& g, Var eps) {
    Tape& t = *g.mean.tape;
    if (t.val(eps).rows() != g.dim || t.val(eps).cols() != 1)
        throw ValidationError("gauss::sample: noise dimension mismatch");
    if (g.diagonal())
        return ad::add(g.mean, ad::hadamard(ad::exp(ad::scale(g.log_var, 0.5)), eps));
    return ad::add(g.mean, ad::matmul(g.chol, eps));
}

Gaussian promote_blocks(const std::vector<Gaussian>& blocks, Structure target) {
    if (blocks.empty()) throw ValidationError("promote_blocks: no blocks");
    std::vector<Var> means, chols;
    means.reserve(blocks.size());
    chols.reserve(blocks.size());
    for (const Gaussian& b : blocks) {
        means.push_back(b.mean);
        chols.push_back(b.diagonal() ? ad::diagmat(ad::exp(ad::scale(b.log_var, 0.5)))
                                     : b.chol);
    }
    return make_dense_from_chol(target, ad::vstack(means), ad::blockdiag(chols));
}

}  // namespace gauss

}  // namespace bnnp
