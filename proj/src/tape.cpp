// Reverse-mode tape over Eigen matrices. Each op computes its value eagerly
// and records a pullback closure; backward() walks the tape in reverse.

#include "bnnp/tape.hpp"

#include <cmath>
#include <string>

namespace bnnp::ad {

namespace {

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ValidationError("ad: operands from different tapes");
}

void check_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError(std::string("ad: shape mismatch in ") + op);
}

}  // namespace

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    check_shape(t.val(a), t.val(b), "add");
    Mat v = t.val(a) + t.val(b);
    bool req = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), req, [ia, ib](Tape& tp, const Mat& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    check_shape(t.val(a), t.val(b), "sub");
    Mat v = t.val(a) - t.val(b);
    bool req = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), req, [ia, ib](Tape& tp, const Mat& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, -g);
    });
}

Var neg(Var a) {
    Tape& t = *a.tape;
    Mat v = -t.val(a);
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a),
                  [ia](Tape& tp, const Mat& g) { tp.accumulate(ia, -g); });
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    if (t.val(a).cols() != t.val(b).rows())
        throw ValidationError("ad: inner dimension mismatch in matmul");
    Mat v = t.val(a) * t.val(b);
    bool req = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), req, [ia, ib](Tape& tp, const Mat& g) {
        tp.accumulate(ia, g * tp.node(ib).value.transpose());
        tp.accumulate(ib, tp.node(ia).value.transpose() * g);
    });
}

Var hadamard(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    check_shape(t.val(a), t.val(b), "hadamard");
    Mat v = t.val(a).cwiseProduct(t.val(b));
    bool req = t.needs_grad(a) || t.needs_grad(b);
    int ia = a.id, ib = b.id;
    return t.push(std::move(v), req, [ia, ib](Tape& tp, const Mat& g) {
        tp.accumulate(ia, g.cwiseProduct(tp.node(ib).value));
        tp.accumulate(ib, g.cwiseProduct(tp.node(ia).value));
    });
}

Var scale(Var a, double c) {
    Tape& t = *a.tape;
    Mat v = c * t.val(a);
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a),
                  [ia, c](Tape& tp, const Mat& g) { tp.accumulate(ia, c * g); });
}

Var add_const(Var a, double c) {
    Tape& t = *a.tape;
    Mat v = (t.val(a).array() + c).matrix();
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a),
                  [ia](Tape& tp, const Mat& g) { tp.accumulate(ia, g); });
}

Var mul_scalar(Var m, Var s) {
    check_same_tape(m, s);
    Tape& t = *m.tape;
    if (t.val(s).size() != 1) throw ValidationError("ad: mul_scalar expects 1x1 scalar");
    double sv = t.val(s)(0, 0);
    Mat v = sv * t.val(m);
    bool req = t.needs_grad(m) || t.needs_grad(s);
    int im = m.id, is = s.id;
    return t.push(std::move(v), req, [im, is, sv](Tape& tp, const Mat& g) {
        tp.accumulate(im, sv * g);
        Mat gs(1, 1);
        gs(0, 0) = (g.cwiseProduct(tp.node(im).value)).sum();
        tp.accumulate(is, gs);
    });
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    Mat v = t.val(a).transpose();
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a),
                  [ia](Tape& tp, const Mat& g) { tp.accumulate(ia, g.transpose()); });
}

Var sum(Var a) {
    Tape& t = *a.tape;
    Mat v(1, 1);
    v(0, 0) = t.val(a).sum();
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia](Tape& tp, const Mat& g) {
        const Mat& av = tp.node(ia).value;
        tp.accumulate(ia, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
    });
}

Var colwise_sum(Var a) {
    Tape& t = *a.tape;
    Mat v = t.val(a).colwise().sum();
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia](Tape& tp, const Mat& g) {
        const Mat& av = tp.node(ia).value;
        tp.accumulate(ia, Mat::Ones(av.rows(), 1) * g);
    });
}

Var rowwise_sum(Var a) {
    Tape& t = *a.tape;
    Mat v = t.val(a).rowwise().sum();
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia](Tape& tp, const Mat& g) {
        const Mat& av = tp.node(ia).value;
        tp.accumulate(ia, g * Mat::Ones(1, av.cols()));
    });
}

Var logsumexp(Var a) {
    Tape& t = *a.tape;
    const Mat& av = t.val(a);
    if (av.size() == 0) throw ValidationError("ad: logsumexp of empty matrix");
    double m = av.maxCoeff();
    double s = (av.array() - m).exp().sum();
    Mat v(1, 1);
    v(0, 0) = m + std::log(s);
    int ia = a.id;
    double lse = v(0, 0);
    return t.push(std::move(v), t.needs_grad(a), [ia, lse](Tape& tp, const Mat& g) {
        const Mat& av2 = tp.node(ia).value;
        tp.accumulate(ia, g(0, 0) * (av2.array() - lse).exp().matrix());
    });
}

Var exp(Var a) {
    Tape& t = *a.tape;
    Mat v = t.val(a).array().exp().matrix();
    int ia = a.id;
    int iv_hint = static_cast<int>(t.size());  // id the result will get
    return t.push(std::move(v), t.needs_grad(a), [ia, iv_hint](Tape& tp, const Mat& g) {
        tp.accumulate(ia, g.cwiseProduct(tp.node(iv_hint).value));
    });
}

Var log(Var a) {
    Tape& t = *a.tape;
    Mat v = t.val(a).array().log().matrix();
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia](Tape& tp, const Mat& g) {
        tp.accumulate(ia, g.cwiseQuotient(tp.node(ia).value));
    });
}

Var tanh(Var a) {
    Tape& t = *a.tape;
    Mat v = t.val(a).array().tanh().matrix();
    int ia = a.id;
    int iv = static_cast<int>(t.size());
    return t.push(std::move(v), t.needs_grad(a), [ia, iv](Tape& tp, const Mat& g) {
        const Mat& tv = tp.node(iv).value;
        tp.accumulate(ia, g.cwiseProduct((1.0 - tv.array().square()).matrix()));
    });
}

Var relu(Var a) {
    Tape& t = *a.tape;
    Mat v = t.val(a).cwiseMax(0.0);
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia](Tape& tp, const Mat& g) {
        const Mat& av = tp.node(ia).value;
        tp.accumulate(ia, (av.array() > 0.0).select(g, Mat::Zero(g.rows(), g.cols())));
    });
}

Var silu(Var a) {
    Tape& t = *a.tape;
    const Mat& av = t.val(a);
    Mat sig = (1.0 / (1.0 + (-av.array()).exp())).matrix();
    Mat v = av.cwiseProduct(sig);
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia](Tape& tp, const Mat& g) {
        const Mat& x = tp.node(ia).value;
        Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
        Eigen::ArrayXXd d = s * (1.0 + x.array() * (1.0 - s));
        tp.accumulate(ia, (g.array() * d).matrix());
    });
}

Var square(Var a) {
    Tape& t = *a.tape;
    Mat v = t.val(a).array().square().matrix();
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia](Tape& tp, const Mat& g) {
        tp.accumulate(ia, 2.0 * g.cwiseProduct(tp.node(ia).value));
    });
}

Var clamp(Var a, double lo, double hi) {
    Tape& t = *a.tape;
    Mat v = t.val(a).cwiseMax(lo).cwiseMin(hi);
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia, lo, hi](Tape& tp, const Mat& g) {
        const Mat& av = tp.node(ia).value;
        Mat mask = ((av.array() > lo) && (av.array() < hi)).cast<double>().matrix();
        tp.accumulate(ia, g.cwiseProduct(mask));
    });
}

Var block(Var a, int i, int j, int rows, int cols) {
    Tape& t = *a.tape;
    const Mat& av = t.val(a);
    if (i < 0 || j < 0 || i + rows > av.rows() || j + cols > av.cols())
        throw ValidationError("ad: block out of range");
    Mat v = av.block(i, j, rows, cols);
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia, i, j, rows, cols](Tape& tp, const Mat& g) {
        const Mat& av2 = tp.node(ia).value;
        Mat full = Mat::Zero(av2.rows(), av2.cols());
        full.block(i, j, rows, cols) = g;
        tp.accumulate(ia, full);
    });
}

Var vstack(const std::vector<Var>& vs) {
    if (vs.empty()) throw ValidationError("ad: vstack of nothing");
    Tape& t = *vs[0].tape;
    Eigen::Index rows = 0, cols = t.val(vs[0]).cols();
    bool req = false;
    for (const Var& v : vs) {
        check_same_tape(v, vs[0]);
        if (t.val(v).cols() != cols) throw ValidationError("ad: vstack column mismatch");
        rows += t.val(v).rows();
        req = req || t.needs_grad(v);
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    std::vector<int> ids;
    std::vector<int> sizes;
    for (const Var& v : vs) {
        const Mat& m = t.val(v);
        out.middleRows(r, m.rows()) = m;
        r += m.rows();
        ids.push_back(v.id);
        sizes.push_back(static_cast<int>(m.rows()));
    }
    return t.push(std::move(out), req, [ids, sizes](Tape& tp, const Mat& g) {
        int r2 = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
            tp.accumulate(ids[k], g.middleRows(r2, sizes[k]));
            r2 += sizes[k];
        }
    });
}

Var hstack(const std::vector<Var>& vs) {
    if (vs.empty()) throw ValidationError("ad: hstack of nothing");
    Tape& t = *vs[0].tape;
    Eigen::Index cols = 0, rows = t.val(vs[0]).rows();
    bool req = false;
    for (const Var& v : vs) {
        check_same_tape(v, vs[0]);
        if (t.val(v).rows() != rows) throw ValidationError("ad: hstack row mismatch");
        cols += t.val(v).cols();
        req = req || t.needs_grad(v);
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    std::vector<int> ids, sizes;
    for (const Var& v : vs) {
        const Mat& m = t.val(v);
        out.middleCols(c, m.cols()) = m;
        c += m.cols();
        ids.push_back(v.id);
        sizes.push_back(static_cast<int>(m.cols()));
    }
    return t.push(std::move(out), req, [ids, sizes](Tape& tp, const Mat& g) {
        int c2 = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
            tp.accumulate(ids[k], g.middleCols(c2, sizes[k]));
            c2 += sizes[k];
        }
    });
}

Var reshape(Var a, int rows, int cols) {
    Tape& t = *a.tape;
    const Mat& av = t.val(a);
    if (av.size() != static_cast<Eigen::Index>(rows) * cols)
        throw ValidationError("ad: reshape size mismatch");
    Mat v = Eigen::Map<const Mat>(av.data(), rows, cols);
    int ia = a.id;
    return t.push(std::move(v), t.needs_grad(a), [ia](Tape& tp, const Mat& g) {
        const Mat& av2 = tp.node(ia).value;
        tp.accumulate(ia, Eigen::Map<const Mat>(g.data(), av2.rows(), av2.cols()));
    });
}

Var diagmat(Var v) {
    Tape& t = *v.tape;
    const Mat& vv = t.val(v);
    if (vv.cols() != 1) throw ValidationError("ad: diagmat expects a column vector");
    Mat m = Mat::Zero(vv.rows(), vv.rows());
    m.diagonal() = vv.col(0);
    int iv = v.id;
    return t.push(std::move(m), t.needs_grad(v), [iv](Tape& tp, const Mat& g) {
        tp.accumulate(iv, g.diagonal());
    });
}

Var diagvec(Var m) {
    Tape& t = *m.tape;
    const Mat& mv = t.val(m);
    if (mv.rows() != mv.cols()) throw ValidationError("ad: diagvec expects square matrix");
    Mat v = mv.diagonal();
    int im = m.id;
    return t.push(std::move(v), t.needs_grad(m), [im](Tape& tp, const Mat& g) {
        const Mat& mv2 = tp.node(im).value;
        Mat full = Mat::Zero(mv2.rows(), mv2.cols());
        full.diagonal() = g.col(0);
        tp.accumulate(im, full);
    });
}

Var blockdiag(const std::vector<Var>& blocks) {
    if (blocks.empty()) throw ValidationError("ad: blockdiag of nothing");
    Tape& t = *blocks[0].tape;
    Eigen::Index n = 0;
    bool req = false;
    for (const Var& b : blocks) {
        check_same_tape(b, blocks[0]);
        const Mat& m = t.val(b);
        if (m.rows() != m.cols()) throw ValidationError("ad: blockdiag expects square blocks");
        n += m.rows();
        req = req || t.needs_grad(b);
    }
    Mat out = Mat::Zero(n, n);
    Eigen::Index o = 0;
    std::vector<int> ids, sizes;
    for (const Var& b : blocks) {
        const Mat& m = t.val(b);
        out.block(o, o, m.rows(), m.rows()) = m;
        o += m.rows();
        ids.push_back(b.id);
        sizes.push_back(static_cast<int>(m.rows()));
    }
    return t.push(std::move(out), req, [ids, sizes](Tape& tp, const Mat& g) {
        int o2 = 0;
        for (size_t k = 0; k < ids.size(); ++k) {
            tp.accumulate(ids[k], g.block(o2, o2, sizes[k], sizes[k]));
            o2 += sizes[k];
        }
    });
}

Var scale_rows(Var m, Var v) {
    check_same_tape(m, v);
    Tape& t = *m.tape;
    const Mat& mv = t.val(m);
    const Mat& vv = t.val(v);
    if (vv.cols() != 1 || vv.rows() != mv.rows())
        throw ValidationError("ad: scale_rows expects rows-x-1 vector");
    Mat out = vv.col(0).asDiagonal() * mv;
    bool req = t.needs_grad(m) || t.needs_grad(v);
    int im = m.id, iv = v.id;
    return t.push(std::move(out), req, [im, iv](Tape& tp, const Mat& g) {
        const Mat& mv2 = tp.node(im).value;
        const Mat& vv2 = tp.node(iv).value;
        tp.accumulate(im, vv2.col(0).asDiagonal() * g);
        tp.accumulate(iv, g.cwiseProduct(mv2).rowwise().sum());
    });
}

Var add_rowvec(Var m, Var b) {
    check_same_tape(m, b);
    Tape& t = *m.tape;
    const Mat& mv = t.val(m);
    const Mat& bv = t.val(b);
    if (bv.rows() != 1 || bv.cols() != mv.cols())
        throw ValidationError("ad: add_rowvec expects 1 x cols vector");
    Mat out = mv.rowwise() + bv.row(0);
    bool req = t.needs_grad(m) || t.needs_grad(b);
    int im = m.id, ib = b.id;
    return t.push(std::move(out), req, [im, ib](Tape& tp, const Mat& g) {
        tp.accumulate(im, g);
        tp.accumulate(ib, g.colwise().sum());
    });
}

Var detach(Var a) {
    Tape& t = *a.tape;
    return t.constant(t.val(a));
}

Mat cholesky_plain(const Mat& a, const std::string& context) {
    if (a.rows() != a.cols()) throw ValidationError("cholesky: matrix not square");
    if (!a.allFinite())
        throw ValidationError("cholesky: non-finite entries" +
                              (context.empty() ? "" : " (" + context + ")"));
    Eigen::LLT<Mat> llt(a);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    double base = a.diagonal().mean();
    if (base > 0.0) {
        for (double j = 1e-10; j <= 1e-4 * 1.0000001; j *= 10.0) {
            Mat jittered = a;
            jittered.diagonal().array() += j * base;
            llt.compute(jittered);
            if (llt.info() == Eigen::Success) return llt.matrixL();
        }
    }
    throw NumericalError("cholesky: matrix not positive definite after jitter retries" +
                         (context.empty() ? "" : " (" + context + ")"));
}

Var cholesky(Var a, const std::string& context) {
    Tape& t = *a.tape;
    Mat L = cholesky_plain(t.val(a), context);
    int ia = a.id;
    int il = static_cast<int>(t.size());
    // Phi-operator pullback: Abar = 0.5 (M + M^T), M = L^{-T} Phi(L^T Lbar) L^{-1}.
    return t.push(std::move(L), t.needs_grad(a), [ia, il](Tape& tp, const Mat& g) {
        const Mat& Lv = tp.node(il).value;
        Mat P = Mat((Lv.transpose() * g).triangularView<Eigen::Lower>());
        P.diagonal() *= 0.5;
        Mat tmp = Lv.transpose().triangularView<Eigen::Upper>().solve(P);
        Mat M = Lv.transpose().triangularView<Eigen::Upper>().solve(tmp.transpose()).transpose();
        tp.accumulate(ia, 0.5 * (M + M.transpose()));
    });
}

Var solve_lower(Var L, Var b) {
    check_same_tape(L, b);
    Tape& t = *L.tape;
    const Mat& Lv = t.val(L);
    const Mat& bv = t.val(b);
    if (Lv.rows() != Lv.cols() || Lv.cols() != bv.rows())
        throw ValidationError("ad: solve_lower dimension mismatch");
    Mat x = Lv.triangularView<Eigen::Lower>().solve(bv);
    bool req = t.needs_grad(L) || t.needs_grad(b);
    int iL = L.id, ib = b.id;
    int ix = static_cast<int>(t.size());
    return t.push(std::move(x), req, [iL, ib, ix](Tape& tp, const Mat& g) {
        const Mat& Lv2 = tp.node(iL).value;
        const Mat& xv = tp.node(ix).value;
        Mat gb = Lv2.transpose().triangularView<Eigen::Upper>().solve(g);
        tp.accumulate(ib, gb);
        Mat gL = -(gb * xv.transpose());
        tp.accumulate(iL, Mat(gL.triangularView<Eigen::Lower>()));
    });
}

Var solve_lower_t(Var L, Var b) {
    check_same_tape(L, b);
    Tape& t = *L.tape;
    const Mat& Lv = t.val(L);
    const Mat& bv = t.val(b);
    if (Lv.rows() != Lv.cols() || Lv.cols() != bv.rows())
        throw ValidationError("ad: solve_lower_t dimension mismatch");
    Mat x = Lv.transpose().triangularView<Eigen::Upper>().solve(bv);
    bool req = t.needs_grad(L) || t.needs_grad(b);
    int iL = L.id, ib = b.id;
    int ix = static_cast<int>(t.size());
    return t.push(std::move(x), req, [iL, ib, ix](Tape& tp, const Mat& g) {
        const Mat& Lv2 = tp.node(iL).value;
        const Mat& xv = tp.node(ix).value;
        Mat gb = Lv2.triangularView<Eigen::Lower>().solve(g);
        tp.accumulate(ib, gb);
        Mat gL = -(xv * gb.transpose());
        tp.accumulate(iL, Mat(gL.triangularView<Eigen::Lower>()));
    });
}

}  // namespace bnnp::ad
