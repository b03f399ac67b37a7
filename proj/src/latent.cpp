#include "uad/latent.hpp"

#include <cmath>
#include <string>

#include "uad/errors.hpp"

namespace uad {

void LatentDistribution::validate() const {
    if (mu.size() != sigma.size()) {
        throw ValidationError("latent mu/sigma length mismatch: " + std::to_string(mu.size()) +
                              " vs " + std::to_string(sigma.size()));
    }
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!std::isfinite(mu[i]) || !std::isfinite(sigma[i])) {
            throw DataError("non-finite latent statistics at dimension " + std::to_string(i));
        }
        if (!(sigma[i] > 0.0)) {
            throw ValidationError("sigma must be strictly positive (dimension " +
                                  std::to_string(i) + ")");
        }
    }
}

std::vector<double> reparameterize(const LatentDistribution& d, const std::vector<double>& eps) {
    d.validate();
    if (eps.size() != d.mu.size()) {
        throw ValidationError("eps length " + std::to_string(eps.size()) +
                              " does not match latent_dim " + std::to_string(d.mu.size()));
    }
    std::vector<double> z(d.mu.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = d.mu[i] + d.sigma[i] * eps[i];
    return z;
}

}  // namespace uad
