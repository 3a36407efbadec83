#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bnnp/tape.hpp"

namespace bnnp {

// Factorisation class of a Gaussian weight block. Diagonal and UnitwiseFull
// describe one unit's incoming weights; LayerwiseFull covers vec(W^l) of a
// whole layer; GlobalFull covers the concatenation of all layers' weights.
enum class Structure { Diagonal, UnitwiseFull, LayerwiseFull, GlobalFull };

const char* structure_name(Structure s);
Structure structure_from_name(const std::string& name);

// Plain value snapshot of one multivariate Gaussian with a cached Cholesky
// factor. Covariance is stored, never precision.
struct GaussianFactor {
    Structure structure = Structure::UnitwiseFull;
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;  // Diagonal storage
    Eigen::MatrixXd cov;       // dense storage
    Eigen::MatrixXd chol;      // lower factor of cov (dense structures)
    double log_det = 0.0;      // log |cov|

    int dim() const { return static_cast<int>(mean.size()); }
    bool diagonal() const { return structure == Structure::Diagonal; }

    // mean + L * eps (reparameterised draw).
    Eigen::VectorXd sample(const Eigen::VectorXd& eps) const;

    Eigen::MatrixXd dense_cov() const;

    static GaussianFactor make_diagonal(Eigen::VectorXd mean, Eigen::VectorXd variance);
    // Builds the Cholesky cache; verifies L L^T reconstructs cov to 1e-10
    // relative.
    static GaussianFactor make_dense(Structure s, Eigen::VectorXd mean, Eigen::MatrixXd cov,
                                     const std::string& context = "");
};

namespace gauss {

// AD counterpart of GaussianFactor; all members live on one tape.
struct Gaussian {
    Structure structure = Structure::UnitwiseFull;
    ad::Var mean;     // D x 1
    ad::Var log_var;  // D x 1, Diagonal only
    ad::Var cov;      // D x D, dense only
    ad::Var chol;     // D x D lower, dense only
    int dim = 0;

    bool diagonal() const { return structure == Structure::Diagonal; }
};

Gaussian make_diagonal(ad::Var mean, ad::Var log_var);
Gaussian make_dense(Structure s, ad::Var mean, ad::Var cov, const std::string& context = "");
// Dense Gaussian from an already-available lower factor (cov = L L^T).
Gaussian make_dense_from_chol(Structure s, ad::Var mean, ad::Var chol_lower);

Gaussian constant(ad::Tape& tape, const GaussianFactor& f);
GaussianFactor snapshot(const Gaussian& g);

// Bayesian linear-regression update of one weight block:
//   S^{-1} = Sigma^{-1} + Phi^T Lambda Phi,  m = S (Sigma^{-1} mu + Phi^T Lambda y)
// computed with Cholesky solves only. `design` is N x D (nonlinearity and
// bias column already applied), `targets` N x 1, `precisions` N x 1 with
// strictly positive finite entries. N = 0 returns the prior unchanged.
Gaussian conjugate_update(const Gaussian& prior, ad::Var design, ad::Var targets,
                          ad::Var precisions, const std::string& context = "");

// Same update for a dense prior over vec(W) of a whole layer, using the
// block-diagonal form of the Kronecker design matrix: activations is
// N x D0 (with bias column), targets and precisions are N x d_out.
Gaussian conjugate_update_vec(const Gaussian& prior, ad::Var activations, ad::Var targets,
                              ad::Var precisions, const std::string& context = "");

// Gaussian conditional of a GlobalFull factor on the realized weights of all
// layers before `layer_index` (0-based). `block_dims` gives the vec(W^l)
// length per layer. layer_index = 0 returns the first block's marginal.
Gaussian condition_on_previous(const Gaussian& global, ad::Var realized,
                               const std::vector<int>& block_dims, int layer_index,
                               const std::string& context = "");

// KL[q || p]; mixed structures are promoted to a common dense form.
ad::Var kl_divergence(const Gaussian& q, const Gaussian& p);

// mean + L * eps; differentiable in mean and the factor entries.
ad::Var sample(const Gaussian& g, ad::Var eps);

// Stacks independent per-unit blocks into one dense Gaussian (block-diagonal
// covariance; the Cholesky factor is assembled without refactorising).
Gaussian promote_blocks(const std::vector<Gaussian>& blocks, Structure target);

}  // namespace gauss

}  // namespace bnnp
