// Independent reference implementations used only by tests. These stay
// deliberately naive (explicit inverses, quadrature, brute-force sums) so
// they cannot share a failure mode with the library code they check.
#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Posterior moments of a 1-D model prior(w) * prod_n N(y_n; phi_n w, 1/lam_n)
// by Simpson quadrature on [-12, 12].
struct Moments1D {
    double mean, var;
};

inline Moments1D quadrature_posterior_1d(double mu0, double var0, const std::vector<double>& phi,
                                         const std::vector<double>& y,
                                         const std::vector<double>& lam) {
    const int n = 48001;
    const double lo = -12.0, hi = 12.0;
    const double h = (hi - lo) / (n - 1);
    auto log_joint = [&](double w) {
        double lp = -0.5 * (w - mu0) * (w - mu0) / var0;
        for (size_t i = 0; i < phi.size(); ++i) {
            double r = y[i] - phi[i] * w;
            lp += -0.5 * lam[i] * r * r;
        }
        return lp;
    };
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double w = lo + i * h;
        double weight = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        double f = weight * std::exp(log_joint(w));
        z += f;
        m1 += f * w;
        m2 += f * w * w;
    }
    m1 /= z;
    m2 /= z;
    return {m1, m2 - m1 * m1};
}

// Closed-form Bayesian linear regression with explicit inverses (test scale
// only). Lambda is a per-row precision vector.
struct BlrResult {
    VectorXd mean;
    MatrixXd cov;
};

inline BlrResult blr_posterior(const VectorXd& mu0, const MatrixXd& cov0, const MatrixXd& phi,
                               const VectorXd& y, const VectorXd& lam) {
    MatrixXd prec = cov0.inverse() + phi.transpose() * lam.asDiagonal() * phi;
    MatrixXd cov = prec.inverse();
    VectorXd mean = cov * (cov0.inverse() * mu0 + phi.transpose() * (lam.array() * y.array()).matrix());
    return {mean, cov};
}

// log p(y) = log N(y; Phi mu0, Lambda^{-1} + Phi cov0 Phi^T)
inline double blr_evidence(const VectorXd& mu0, const MatrixXd& cov0, const MatrixXd& phi,
                           const VectorXd& y, const VectorXd& lam) {
    MatrixXd cov = MatrixXd(lam.cwiseInverse().asDiagonal()) + phi * cov0 * phi.transpose();
    Eigen::LLT<MatrixXd> llt(cov);
    VectorXd r = y - phi * mu0;
    VectorXd u = llt.matrixL().solve(r);
    double logdet = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return -0.5 * (u.squaredNorm() + logdet + y.size() * std::log(2.0 * M_PI));
}

// Joint posterior-predictive log density of targets under a BLR posterior.
inline double blr_predictive_logpdf(const VectorXd& m, const MatrixXd& s, const MatrixXd& phi_t,
                                    const VectorXd& y_t, double sigma_y) {
    MatrixXd cov = sigma_y * sigma_y * MatrixXd::Identity(y_t.size(), y_t.size()) +
                   phi_t * s * phi_t.transpose();
    Eigen::LLT<MatrixXd> llt(cov);
    VectorXd u = llt.matrixL().solve(VectorXd(y_t - phi_t * m));
    double logdet = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return -0.5 * (u.squaredNorm() + logdet + y_t.size() * std::log(2.0 * M_PI));
}

// Scalar Gaussian KL.
inline double kl_1d(double mq, double vq, double mp, double vp) {
    return 0.5 * (vq / vp + (mp - mq) * (mp - mq) / vp - 1.0 + std::log(vp / vq));
}

// Dense Gaussian KL with explicit inverses.
inline double kl_dense(const VectorXd& mq, const MatrixXd& sq, const VectorXd& mp,
                       const MatrixXd& sp) {
    int d = static_cast<int>(mq.size());
    MatrixXd spi = sp.inverse();
    double tr = (spi * sq).trace();
    double quad = (mq - mp).transpose() * spi * (mq - mp);
    double logdet = std::log(sp.determinant()) - std::log(sq.determinant());
    return 0.5 * (tr + quad - d + logdet);
}

// Plain MLP forward pass, independently coded: weights carry the bias as the
// last row of each layer matrix, the nonlinearity is applied between linear
// maps but not on the output.
enum class Act { Relu, Tanh, Silu };

inline MatrixXd mlp_forward(const std::vector<MatrixXd>& weights, const MatrixXd& x, Act act,
                            bool bias = true) {
    MatrixXd h = x;
    for (size_t l = 0; l < weights.size(); ++l) {
        if (l > 0) {
            switch (act) {
                case Act::Relu: h = h.cwiseMax(0.0); break;
                case Act::Tanh: h = h.array().tanh().matrix(); break;
                case Act::Silu:
                    h = (h.array() / (1.0 + (-h.array()).exp())).matrix();
                    break;
            }
        }
        MatrixXd ha(h.rows(), h.cols() + (bias ? 1 : 0));
        ha.leftCols(h.cols()) = h;
        if (bias) ha.col(h.cols()).setOnes();
        h = ha * weights[l];
    }
    return h;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double stderr_of(const std::vector<double>& v) {
    double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / (static_cast<double>(v.size()) - 1.0) /
                     static_cast<double>(v.size()));
}

}  // namespace oracle
