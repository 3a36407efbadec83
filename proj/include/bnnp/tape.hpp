#pragma once

#include <deque>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "bnnp/errors.hpp"

namespace bnnp::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Lightweight handle to a tape node. Copies are cheap; lifetime is tied to
// the owning tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// One recorded operation: its value, the gradient accumulator, and a pullback
// that scatters the output gradient to the parents.
struct Node {
    Mat value;
    Mat grad;  // empty until first contribution
    std::function<void(Tape&, const Mat&)> pullback;
    bool requires_grad = false;
};

// Reverse-mode tape over dense double matrices. Scalars are 1x1. Construct
// with grad_enabled=false for pure evaluation: values are computed but no
// pullbacks are recorded.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var leaf(const Mat& v) { return push(v, true, {}); }
    Var constant(const Mat& v) { return push(v, false, {}); }
    Var scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

    const Mat& val(const Var& x) const { return nodes_[x.id].value; }
    Node& node(int id) { return nodes_[id]; }

    bool has_grad(const Var& x) const { return nodes_[x.id].grad.size() != 0; }

    // Gradient of the last backward() root w.r.t. x; zeros if x never
    // contributed.
    Mat grad(const Var& x) const {
        const Node& n = nodes_[x.id];
        if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    void accumulate(int id, const Mat& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

    // Seeds the 1x1 root with 1 and runs all pullbacks in reverse order.
    void backward(const Var& root) {
        if (!root.valid() || root.tape != this) throw ValidationError("backward: invalid root");
        Node& r = nodes_[root.id];
        if (r.value.size() != 1) throw ValidationError("backward: root must be scalar");
        if (!r.requires_grad)
            throw ValidationError("backward: root does not depend on any leaf");
        accumulate(root.id, Mat::Ones(1, 1));
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.pullback && n.grad.size() != 0) n.pullback(*this, n.grad);
        }
    }

    Var push(Mat value, bool req, std::function<void(Tape&, const Mat&)> pb) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = grad_enabled_ && req;
        if (n.requires_grad) n.pullback = std::move(pb);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size()) - 1};
    }

    bool needs_grad(const Var& x) const { return nodes_[x.id].requires_grad; }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    std::deque<Node> nodes_;  // deque: references from val() stay valid as the tape grows
    bool grad_enabled_;
};

// ---- ops -------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var matmul(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double c);        // c * a
Var add_const(Var a, double c);    // a + c (elementwise)
Var mul_scalar(Var m, Var s);      // s is 1x1
Var transpose(Var a);
Var sum(Var a);                    // 1x1
Var colwise_sum(Var a);            // 1 x cols
Var rowwise_sum(Var a);            // rows x 1
Var logsumexp(Var a);              // over all entries, 1x1
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var silu(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);
Var block(Var a, int i, int j, int rows, int cols);
Var vstack(const std::vector<Var>& vs);
Var hstack(const std::vector<Var>& vs);
Var reshape(Var a, int rows, int cols);  // column-major, so reshape(W, m*n, 1) = vec(W)
Var diagmat(Var v);                      // D-vector -> D x D diagonal
Var diagvec(Var m);                      // D x D -> D-vector of diagonal
Var blockdiag(const std::vector<Var>& blocks);
Var scale_rows(Var m, Var v);      // diag(v) * m, v is rows x 1
Var add_rowvec(Var m, Var b);      // m.rowwise() + b, b is 1 x cols
Var detach(Var a);

// Lower Cholesky factor of a symmetric positive definite matrix. On failure
// the diagonal is jittered by 1e-10 * mean(diag), escalating x10 up to
// 1e-4 * mean(diag); if that fails a NumericalError carrying `context` is
// thrown. The reverse pass uses the Phi-operator formulation.
Var cholesky(Var a, const std::string& context = "");

Var solve_lower(Var L, Var b);    // L^{-1} b
Var solve_lower_t(Var L, Var b);  // L^{-T} b

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }

// Plain (non-AD) Cholesky with the same jitter ladder; returns the lower
// factor of a (possibly jittered) copy of `a`.
Mat cholesky_plain(const Mat& a, const std::string& context = "");

}  // namespace bnnp::ad
