#include "bnnp/config.hpp"

namespace bnnp {

const char* nonlinearity_name(Nonlinearity a) {
    switch (a) {
        case Nonlinearity::ReLU: return "relu";
        case Nonlinearity::Tanh: return "tanh";
        case Nonlinearity::SiLU: return "silu";
    }
    return "?";
}

Nonlinearity nonlinearity_from_name(const std::string& name) {
    if (name == "relu") return Nonlinearity::ReLU;
    if (name == "tanh") return Nonlinearity::Tanh;
    if (name == "silu") return Nonlinearity::SiLU;
    throw ValidationError("unknown nonlinearity '" + name + "'");
}

ad::Var apply_nonlinearity(Nonlinearity a, ad::Var x) {
    switch (a) {
        case Nonlinearity::ReLU: return ad::relu(x);
        case Nonlinearity::Tanh: return ad::tanh(x);
        case Nonlinearity::SiLU: return ad::silu(x);
    }
    throw ValidationError("bad nonlinearity");
}

Eigen::MatrixXd apply_nonlinearity(Nonlinearity a, const Eigen::MatrixXd& x) {
    switch (a) {
        case Nonlinearity::ReLU: return x.cwiseMax(0.0);
        case Nonlinearity::Tanh: return x.array().tanh().matrix();
        case Nonlinearity::SiLU: return (x.array() / (1.0 + (-x.array()).exp())).matrix();
    }
    throw ValidationError("bad nonlinearity");
}

void NetworkConfig::validate() const {
    if (widths.size() < 2) throw ValidationError("network needs at least one layer");
    for (int w : widths)
        if (w < 1) throw ValidationError("layer widths must be >= 1");
    if (sigma_y_init <= 0.0) throw ValidationError("sigma_y must be positive");
}

}  // namespace bnnp
