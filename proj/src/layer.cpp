#include "bnnp/layer.hpp"

namespace bnnp {

using ad::Tape;
using ad::Var;

LayerGaussians layer_posterior(const LayerGaussians& prior, Var activations,
                               const PseudoLikelihood& pseudo, int layer_index) {
    if (pseudo.n == 0) return prior;
    Tape& t = *activations.tape;
    const int n = pseudo.n;
    std::string where = "layer " + std::to_string(layer_index + 1);

    LayerGaussians out;
    if (prior.dense) {
        out.dense = gauss::conjugate_update_vec(*prior.dense, activations, pseudo.targets,
                                                pseudo.precisions, where);
        return out;
    }
    if (static_cast<int>(prior.units.size()) != pseudo.units)
        throw ValidationError("layer_posterior: unit count mismatch at " + where);
    out.units.reserve(prior.units.size());
    for (int d = 0; d < pseudo.units; ++d) {
        Var y_d = ad::block(pseudo.targets, 0, d, n, 1);
        Var lam_d = ad::block(pseudo.precisions, 0, d, n, 1);
        out.units.push_back(gauss::conjugate_update(prior.units[d], activations, y_d, lam_d,
                                                    where + " unit " + std::to_string(d + 1)));
    }
    return out;
}

}  // namespace bnnp
