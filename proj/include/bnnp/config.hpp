#pragma once

#include <string>
#include <vector>

#include "bnnp/gaussian.hpp"

namespace bnnp {

enum class Nonlinearity { ReLU, Tanh, SiLU };

const char* nonlinearity_name(Nonlinearity a);
Nonlinearity nonlinearity_from_name(const std::string& name);

ad::Var apply_nonlinearity(Nonlinearity a, ad::Var x);
Eigen::MatrixXd apply_nonlinearity(Nonlinearity a, const Eigen::MatrixXd& x);

// Architecture and likelihood of the primary network. Weight matrices are
// (fan-in + 1) x d_l with the bias as the last row when `bias` is set.
struct NetworkConfig {
    std::vector<int> widths;  // d0..dL
    Nonlinearity phi = Nonlinearity::Tanh;
    bool bias = true;
    Structure prior_structure = Structure::UnitwiseFull;
    double sigma_y_init = 0.05;
    bool learn_sigma_y = true;
    // When false the last layer's pseudo-precisions come from the likelihood
    // (1/sigma_y^2) instead of the inference network.
    bool last_layer_noise_from_net = true;

    int num_layers() const { return static_cast<int>(widths.size()) - 1; }
    int fan_in(int l) const { return widths[l] + (bias ? 1 : 0); }
    int d_in() const { return widths.front(); }
    int d_out() const { return widths.back(); }

    void validate() const;
};

}  // namespace bnnp
