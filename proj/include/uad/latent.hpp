#pragma once

#include <vector>

namespace uad {

/// Diagonal-Gaussian posterior over the latent space.
struct LatentDistribution {
    std::vector<double> mu;
    std::vector<double> sigma;  // strictly positive, produced as exp(0.5*logvar)

    void validate() const;  // finite vectors, sigma > 0, equal lengths
};

/// z = mu + sigma ⊙ eps.
std::vector<double> reparameterize(const LatentDistribution& d, const std::vector<double>& eps);

}  // namespace uad
