#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bnnp/errors.hpp"
#include "bnnp/tape.hpp"

namespace bnnp {

struct ParamId {
    int v = -1;
    bool valid() const { return v >= 0; }
};

// One named parameter array. `mask` marks trainable elements (1.0) within a
// trainable entry; empty mask means all elements train. `lower_bound` is an
// elementwise floor applied after every optimizer step (-inf = unbounded).
struct ParamEntry {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd mask;
    Eigen::MatrixXd lower_bound;
    Eigen::MatrixXd adam_m, adam_v;
    bool trainable = true;
};

class ParamStore {
public:
    ParamId add(std::string name, Eigen::MatrixXd value, bool trainable = true) {
        for (const auto& e : entries_)
            if (e.name == name) throw ValidationError("duplicate parameter name: " + name);
        ParamEntry e;
        e.name = std::move(name);
        e.value = std::move(value);
        e.trainable = trainable;
        entries_.push_back(std::move(e));
        return ParamId{static_cast<int>(entries_.size()) - 1};
    }

    ParamEntry& at(ParamId id) { return entries_.at(id.v); }
    const ParamEntry& at(ParamId id) const { return entries_.at(id.v); }
    int size() const { return static_cast<int>(entries_.size()); }
    ParamEntry& at(int i) { return entries_.at(i); }
    const ParamEntry& at(int i) const { return entries_.at(i); }

    ParamEntry* find(const std::string& name) {
        for (auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    // One leaf (trainable) or constant (frozen) per entry, aligned by index.
    std::vector<ad::Var> vars(ad::Tape& tape) const {
        std::vector<ad::Var> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_)
            out.push_back(e.trainable ? tape.leaf(e.value) : tape.constant(e.value));
        return out;
    }

    // Adam update on trainable entries; grads aligned by entry index (empty
    // matrices are treated as zero). Masked-out elements stay bit-identical.
    void adam_step(const std::vector<Eigen::MatrixXd>& grads, double lr, int step_number,
                   double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        double bc1 = 1.0 - std::pow(beta1, step_number);
        double bc2 = 1.0 - std::pow(beta2, step_number);
        for (size_t i = 0; i < entries_.size(); ++i) {
            ParamEntry& e = entries_[i];
            if (!e.trainable) continue;
            if (i >= grads.size() || grads[i].size() == 0) continue;
            Eigen::MatrixXd g = grads[i];
            if (e.mask.size() != 0) g = g.cwiseProduct(e.mask);
            if (e.adam_m.size() == 0) {
                e.adam_m = Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols());
                e.adam_v = Eigen::MatrixXd::Zero(e.value.rows(), e.value.cols());
            }
            e.adam_m = beta1 * e.adam_m + (1.0 - beta1) * g;
            e.adam_v = beta2 * e.adam_v + (1.0 - beta2) * g.cwiseProduct(g);
            Eigen::MatrixXd update =
                (e.adam_m / bc1).array() / ((e.adam_v / bc2).array().sqrt() + eps);
            if (e.mask.size() != 0) update = update.cwiseProduct(e.mask);
            e.value -= lr * update;
            if (e.lower_bound.size() != 0) e.value = e.value.cwiseMax(e.lower_bound);
        }
    }

    // (entry, row, col) triples of individually trainable scalars.
    struct Coord {
        int entry, row, col;
    };
    std::vector<Coord> trainable_coords() const {
        std::vector<Coord> out;
        for (size_t i = 0; i < entries_.size(); ++i) {
            const ParamEntry& e = entries_[i];
            if (!e.trainable) continue;
            for (Eigen::Index c = 0; c < e.value.cols(); ++c)
                for (Eigen::Index r = 0; r < e.value.rows(); ++r)
                    if (e.mask.size() == 0 || e.mask(r, c) != 0.0)
                        out.push_back({static_cast<int>(i), static_cast<int>(r),
                                       static_cast<int>(c)});
        }
        return out;
    }

    static constexpr double kUnbounded = -std::numeric_limits<double>::infinity();

private:
    std::vector<ParamEntry> entries_;
};

}  // namespace bnnp
