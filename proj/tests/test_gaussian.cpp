#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bnnp/gaussian.hpp"
#include "bnnp/rng.hpp"
#include "oracles.hpp"

using namespace bnnp;
using ad::Mat;
using ad::Tape;
using ad::Var;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

gauss::Gaussian random_dense(Tape& t, int d, rng::Stream& s, Structure st = Structure::UnitwiseFull) {
    MatrixXd a = s.normal_matrix(d, d);
    MatrixXd cov = a * a.transpose() + 0.3 * d * MatrixXd::Identity(d, d);
    return gauss::make_dense(st, t.leaf(s.normal_matrix(d, 1)), t.leaf(cov));
}

double rel_diff(const MatrixXd& a, const MatrixXd& b) {
    return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

}  // namespace

TEST_CASE("conjugate update with no evidence returns the prior unchanged") {
    Tape t;
    auto prior = random_dense(t, 3, *new rng::Stream(1));
    Var design = t.constant(Mat::Zero(0, 3));
    Var y = t.constant(Mat::Zero(0, 1));
    Var lam = t.constant(Mat::Zero(0, 1));
    auto post = gauss::conjugate_update(prior, design, y, lam);
    CHECK(post.mean.id == prior.mean.id);  // literally the same node
}

TEST_CASE("1-D conjugate update matches quadrature oracle") {
    Tape t;
    auto prior = gauss::make_diagonal(t.constant(Mat::Zero(1, 1)), t.constant(Mat::Zero(1, 1)));
    auto post = gauss::conjugate_update(prior, t.constant(Mat::Ones(1, 1)),
                                        t.constant(Mat::Ones(1, 1)), t.constant(Mat::Ones(1, 1)));
    auto f = gauss::snapshot(post);
    CHECK(f.mean(0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(f.cov(0, 0) == doctest::Approx(0.5).epsilon(1e-9));

    auto q = oracle::quadrature_posterior_1d(0.0, 1.0, {1.0}, {1.0}, {1.0});
    CHECK(f.mean(0) == doctest::Approx(q.mean).epsilon(1e-6));
    CHECK(f.cov(0, 0) == doctest::Approx(q.var).epsilon(1e-6));
}

TEST_CASE("near-zero precisions leave the posterior at the prior") {
    Tape t;
    rng::Stream s(3);
    auto prior = random_dense(t, 4, s);
    Mat phi = s.normal_matrix(6, 4);
    Mat y = s.normal_matrix(6, 1);
    auto post = gauss::conjugate_update(prior, t.constant(phi), t.constant(y),
                                        t.constant(Mat::Constant(6, 1, 1e-30)));
    auto pf = gauss::snapshot(prior);
    auto qf = gauss::snapshot(post);
    CHECK(rel_diff(pf.mean, qf.mean) < 1e-6);
    CHECK(rel_diff(pf.cov, qf.cov) < 1e-6);
}

TEST_CASE("conjugate update matches explicit-inverse reference on small systems") {
    rng::Stream s(5);
    for (int d : {2, 5, 8}) {
        Tape t;
        auto prior = random_dense(t, d, s);
        int n = d + 3;
        Mat phi = s.normal_matrix(n, d);
        Mat y = s.normal_matrix(n, 1);
        Mat lam = (s.normal_matrix(n, 1).array().abs() + 0.2).matrix();
        auto post = gauss::conjugate_update(prior, t.constant(phi), t.constant(y), t.constant(lam));
        auto pf = gauss::snapshot(prior);
        auto qf = gauss::snapshot(post);
        auto ref = oracle::blr_posterior(pf.mean, pf.cov, phi, y.col(0), lam.col(0));
        CHECK(rel_diff(ref.mean, qf.mean) < 1e-9);
        CHECK(rel_diff(ref.cov, qf.cov) < 1e-9);
    }
}

TEST_CASE("vec-form update equals the direct Kronecker construction") {
    rng::Stream s(7);
    Tape t;
    const int d0 = 3, dl = 2, n = 4;
    auto prior = random_dense(t, d0 * dl, s, Structure::LayerwiseFull);
    Mat phi = s.normal_matrix(n, d0);
    Mat y = s.normal_matrix(n, dl);
    Mat lam = (s.normal_matrix(n, dl).array().abs() + 0.3).matrix();

    auto post = gauss::conjugate_update_vec(prior, t.constant(phi), t.constant(y), t.constant(lam));
    auto qf = gauss::snapshot(post);

    // direct route: chi = I (x) phi, stacked targets/precisions column-major
    MatrixXd chi = MatrixXd::Zero(n * dl, d0 * dl);
    VectorXd ys(n * dl), ls(n * dl);
    for (int d = 0; d < dl; ++d) {
        chi.block(d * n, d * d0, n, d0) = phi;
        ys.segment(d * n, n) = y.col(d);
        ls.segment(d * n, n) = lam.col(d);
    }
    auto pf = gauss::snapshot(prior);
    auto ref = oracle::blr_posterior(pf.mean, pf.cov, chi, ys, ls);
    CHECK(rel_diff(ref.mean, qf.mean) < 1e-8);
    CHECK(rel_diff(ref.cov, qf.cov) < 1e-8);
}

TEST_CASE("block-diagonal layerwise prior reduces to per-unit updates") {
    rng::Stream s(9);
    Tape t;
    const int d0 = 2, dl = 3, n = 5;
    // unitwise priors, then their block-diagonal promotion
    std::vector<gauss::Gaussian> units;
    for (int d = 0; d < dl; ++d) units.push_back(random_dense(t, d0, s));
    auto layer_prior = gauss::promote_blocks(units, Structure::LayerwiseFull);

    Mat phi = s.normal_matrix(n, d0);
    Mat y = s.normal_matrix(n, dl);
    Mat lam = (s.normal_matrix(n, dl).array().abs() + 0.3).matrix();
    auto post = gauss::conjugate_update_vec(layer_prior, t.constant(phi), t.constant(y),
                                            t.constant(lam));
    auto qf = gauss::snapshot(post);

    for (int d = 0; d < dl; ++d) {
        auto unit_post = gauss::conjugate_update(
            units[d], t.constant(phi), t.constant(Mat(y.col(d))), t.constant(Mat(lam.col(d))));
        auto uf = gauss::snapshot(unit_post);
        CHECK(rel_diff(uf.mean, qf.mean.segment(d * d0, d0)) < 1e-9);
        CHECK(rel_diff(uf.cov, qf.cov.block(d * d0, d * d0, d0, d0)) < 1e-9);
    }

    SUBCASE("empty batch returns the prior") {
        auto same = gauss::conjugate_update_vec(layer_prior, t.constant(Mat::Zero(0, d0)),
                                                t.constant(Mat::Zero(0, dl)),
                                                t.constant(Mat::Zero(0, dl)));
        CHECK(same.mean.id == layer_prior.mean.id);
    }
}

TEST_CASE("conditioning on previous layers") {
    Tape t;

    SUBCASE("bivariate toy: rho=0.5, unit variances, omega1=1 -> N(0.5, 0.75)") {
        Mat cov(2, 2);
        cov << 1.0, 0.5, 0.5, 1.0;
        auto g = gauss::make_dense(Structure::GlobalFull, t.constant(Mat::Zero(2, 1)),
                                   t.constant(cov));
        auto cond = gauss::condition_on_previous(g, t.constant(Mat::Ones(1, 1)), {1, 1}, 1);
        auto f = gauss::snapshot(cond);
        CHECK(f.mean(0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(f.cov(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
    }

    SUBCASE("block-diagonal global factor: conditional equals marginal") {
        rng::Stream s(11);
        Tape t2;
        auto b1 = random_dense(t2, 2, s);
        auto b2 = random_dense(t2, 3, s);
        auto g = gauss::promote_blocks({b1, b2}, Structure::GlobalFull);
        auto cond = gauss::condition_on_previous(g, t2.constant(s.normal_matrix(2, 1)), {2, 3}, 1);
        auto cf = gauss::snapshot(cond);
        auto mf = gauss::snapshot(b2);
        CHECK(rel_diff(cf.mean, mf.mean) < 1e-10);
        CHECK(rel_diff(cf.cov, mf.cov) < 1e-10);
    }

    SUBCASE("first layer returns the unconditioned marginal") {
        rng::Stream s(13);
        Tape t3;
        auto g = random_dense(t3, 5, s, Structure::GlobalFull);
        auto cond = gauss::condition_on_previous(g, Var{}, {2, 3}, 0);
        auto cf = gauss::snapshot(cond);
        auto gf = gauss::snapshot(g);
        CHECK(rel_diff(cf.mean, gf.mean.head(2)) < 1e-12);
        CHECK(rel_diff(cf.cov, gf.cov.topLeftCorner(2, 2)) < 1e-12);
    }
}

TEST_CASE("KL divergence") {
    Tape t;
    rng::Stream s(15);

    SUBCASE("KL(p || p) = 0") {
        auto p = random_dense(t, 4, s);
        CHECK(std::abs(t.val(gauss::kl_divergence(p, p))(0, 0)) < 1e-10);
    }

    SUBCASE("scalar case N(1,1) vs N(0,1) = 0.5") {
        auto q = gauss::make_diagonal(t.constant(Mat::Ones(1, 1)), t.constant(Mat::Zero(1, 1)));
        auto p = gauss::make_diagonal(t.constant(Mat::Zero(1, 1)), t.constant(Mat::Zero(1, 1)));
        CHECK(t.val(gauss::kl_divergence(q, p))(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    }

    SUBCASE("additive over independent blocks") {
        auto q1 = random_dense(t, 2, s);
        auto q2 = random_dense(t, 3, s);
        auto p1 = random_dense(t, 2, s);
        auto p2 = random_dense(t, 3, s);
        double parts = t.val(gauss::kl_divergence(q1, p1))(0, 0) +
                       t.val(gauss::kl_divergence(q2, p2))(0, 0);
        auto q = gauss::promote_blocks({q1, q2}, Structure::LayerwiseFull);
        auto p = gauss::promote_blocks({p1, p2}, Structure::LayerwiseFull);
        double whole = t.val(gauss::kl_divergence(q, p))(0, 0);
        CHECK(std::abs(parts - whole) < 1e-10);
    }

    SUBCASE("matches explicit-inverse reference, mixed structures") {
        auto q = random_dense(t, 3, s);
        Mat lv = s.normal_matrix(3, 1);
        auto p = gauss::make_diagonal(t.constant(s.normal_matrix(3, 1)), t.constant(lv));
        auto qf = gauss::snapshot(q);
        auto pf = gauss::snapshot(p);
        double ref = oracle::kl_dense(qf.mean, qf.cov, pf.mean, MatrixXd(pf.variance.asDiagonal()));
        CHECK(t.val(gauss::kl_divergence(q, p))(0, 0) == doctest::Approx(ref).epsilon(1e-9));
    }

    SUBCASE("invariant under simultaneous orthogonal rotation") {
        auto q = random_dense(t, 4, s);
        auto p = random_dense(t, 4, s);
        double base = t.val(gauss::kl_divergence(q, p))(0, 0);
        // random orthogonal matrix from QR
        MatrixXd a = s.normal_matrix(4, 4);
        MatrixXd rot = Eigen::HouseholderQR<MatrixXd>(a).householderQ();
        auto rotate = [&](const gauss::Gaussian& g) {
            auto f = gauss::snapshot(g);
            return gauss::make_dense(Structure::UnitwiseFull, t.constant(rot * f.mean),
                                     t.constant(rot * f.cov * rot.transpose()));
        };
        double rotated = t.val(gauss::kl_divergence(rotate(q), rotate(p)))(0, 0);
        CHECK(std::abs(base - rotated) < 1e-8 * std::max(1.0, std::abs(base)));
    }

    SUBCASE("dimension mismatch rejected") {
        auto q = random_dense(t, 2, s);
        auto p = random_dense(t, 3, s);
        CHECK_THROWS_AS((void)gauss::kl_divergence(q, p), ValidationError);
    }
}

TEST_CASE("sampling") {
    Tape t;
    rng::Stream s(17);

    SUBCASE("zero noise returns the mean") {
        auto g = random_dense(t, 3, s);
        Var x = gauss::sample(g, t.constant(Mat::Zero(3, 1)));
        CHECK(rel_diff(t.val(x), t.val(g.mean)) == 0.0);
    }

    SUBCASE("identity covariance shifts by the noise") {
        Mat mean = s.normal_matrix(3, 1);
        auto g = gauss::make_dense(Structure::UnitwiseFull, t.constant(mean),
                                   t.constant(Mat::Identity(3, 3)));
        Mat eps = s.normal_matrix(3, 1);
        Var x = gauss::sample(g, t.constant(eps));
        CHECK((t.val(x) - (mean + eps)).norm() < 1e-12);
    }

    SUBCASE("empirical covariance of 100k draws matches within 5% per entry") {
        auto g = random_dense(t, 3, s);
        auto f = gauss::snapshot(g);
        const int n = 100000;
        MatrixXd acc = MatrixXd::Zero(3, 3);
        VectorXd msum = VectorXd::Zero(3);
        for (int i = 0; i < n; ++i) {
            VectorXd x = f.sample(s.normal_vector(3));
            msum += x;
            acc += x * x.transpose();
        }
        VectorXd m = msum / n;
        MatrixXd cov = acc / n - m * m.transpose();
        double scale = f.cov.diagonal().maxCoeff();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(std::abs(cov(i, j) - f.cov(i, j)) < 0.05 * scale);
    }

    SUBCASE("gradients w.r.t. mean and factor match finite differences") {
        const int d = 3;
        Mat eps = s.normal_matrix(d, 1);
        Mat mean0 = s.normal_matrix(d, 1);
        MatrixXd a = s.normal_matrix(d, d);
        MatrixXd cov0 = a * a.transpose() + d * MatrixXd::Identity(d, d);

        auto loss_at = [&](const Mat& mean, const MatrixXd& cov) {
            Tape tp(false);
            auto g = gauss::make_dense(Structure::UnitwiseFull, tp.constant(mean),
                                       tp.constant(cov));
            return tp.val(ad::sum(ad::square(gauss::sample(g, tp.constant(eps)))))(0, 0);
        };

        Tape tg;
        auto g = gauss::make_dense(Structure::UnitwiseFull, tg.leaf(mean0), tg.leaf(cov0));
        Var loss = ad::sum(ad::square(gauss::sample(g, tg.constant(eps))));
        tg.backward(loss);
        Mat gm = tg.grad(g.mean);
        Mat gc = tg.grad(g.cov);

        const double h = 1e-5;
        for (int i = 0; i < d; ++i) {
            Mat mp = mean0, mm = mean0;
            mp(i, 0) += h;
            mm(i, 0) -= h;
            double fd = (loss_at(mp, cov0) - loss_at(mm, cov0)) / (2 * h);
            CHECK(std::abs(fd - gm(i, 0)) / std::max(1.0, std::abs(fd)) < 1e-4);
        }
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j <= i; ++j) {
                MatrixXd cp = cov0, cm = cov0;
                cp(i, j) += h;
                cp(j, i) = cp(i, j);
                cm(i, j) -= h;
                cm(j, i) = cm(i, j);
                double fd = (loss_at(mean0, cp) - loss_at(mean0, cm)) / (2 * h);
                double an = (i == j) ? gc(i, j) : gc(i, j) + gc(j, i);
                CHECK(std::abs(fd - an) / std::max(1.0, std::abs(fd)) < 1e-4);
            }
        }
    }
}

TEST_CASE("sequential conjugate updates match the joint update") {
    rng::Stream s(19);
    for (int trial = 0; trial < 3; ++trial) {
        Tape t;
        const int d = 4, n = 12, n1 = 5;
        auto priors = std::vector<gauss::Gaussian>{
            random_dense(t, d, s),
            gauss::make_diagonal(t.constant(s.normal_matrix(d, 1)),
                                 t.constant(s.normal_matrix(d, 1)))};
        for (auto& prior : priors) {
            Mat phi = s.normal_matrix(n, d);
            Mat y = s.normal_matrix(n, 1);
            Mat lam = (s.normal_matrix(n, 1).array().abs() + 0.2).matrix();

            auto full = gauss::conjugate_update(prior, t.constant(phi), t.constant(y),
                                                t.constant(lam));
            auto first = gauss::conjugate_update(prior, t.constant(Mat(phi.topRows(n1))),
                                                 t.constant(Mat(y.topRows(n1))),
                                                 t.constant(Mat(lam.topRows(n1))));
            auto second = gauss::conjugate_update(
                first, t.constant(Mat(phi.bottomRows(n - n1))),
                t.constant(Mat(y.bottomRows(n - n1))), t.constant(Mat(lam.bottomRows(n - n1))));
            auto ff = gauss::snapshot(full);
            auto sf = gauss::snapshot(second);
            CHECK(rel_diff(ff.mean, sf.mean) < 1e-8);
            CHECK(rel_diff(ff.cov, sf.cov) < 1e-8);
        }
    }
}

TEST_CASE("input validation") {
    Tape t;
    rng::Stream s(21);
    auto prior = random_dense(t, 2, s);

    Mat bad = Mat::Ones(3, 2);
    bad(1, 1) = std::nan("");
    CHECK_THROWS_AS((void)gauss::conjugate_update(prior, t.constant(bad),
                                                  t.constant(Mat::Ones(3, 1)),
                                                  t.constant(Mat::Ones(3, 1))),
                    ValidationError);
    CHECK_THROWS_AS((void)gauss::conjugate_update(prior, t.constant(Mat::Ones(3, 2)),
                                                  t.constant(Mat::Ones(3, 1)),
                                                  t.constant(Mat::Constant(3, 1, -1.0))),
                    ValidationError);
}

TEST_CASE("snapshot cache invariant: L L^T reconstructs covariance") {
    rng::Stream s(23);
    Tape t;
    auto g = random_dense(t, 6, s);
    auto f = gauss::snapshot(g);
    CHECK(rel_diff(f.chol * f.chol.transpose(), f.cov) < 1e-10);
    CHECK(f.log_det == doctest::Approx(std::log(f.cov.determinant())).epsilon(1e-8));
}
