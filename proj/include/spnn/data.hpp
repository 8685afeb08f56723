#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spnn/linalg.hpp"
#include "spnn/nlbp.hpp"
#include "spnn/rng.hpp"

namespace spnn::data {

using linalg::Mat;
using linalg::Vec;

// Synthetic attribute imagery: each attribute switches an orthogonal bar
// pattern on top of a fixed background, plus Gaussian pixel noise. One
// attribute pair is sampled with agreement probability `agree_prob` so the
// covariance machinery has a correlated case to chew on.
struct SyntheticSpec {
    std::size_t sample_dim = 16;
    std::size_t n_attributes = 4;
    std::vector<Vec> templates;  // filled by default_templates() when empty
    Vec background;              // ditto
    double noise_std = 0.05;
    Vec attr_prob;  // per-attribute Bernoulli p; defaults to 0.5

    struct CorrelatedPair {
        bool enabled = true;
        std::size_t first = 0, second = 1;
        double agree_prob = 0.85;  // rho = 2p - 1 = 0.7 at p_first = 0.5
    };
    CorrelatedPair pair;

    static SyntheticSpec desk_default();
    void finalize();  // fills templates/background/probs, then validates
    std::uint64_t hash() const;
};

struct Dataset {
    std::size_t n = 0;
    std::size_t sample_dim = 0;
    std::size_t n_attributes = 0;
    Vec samples;                       // n * sample_dim, row-major
    std::vector<std::uint8_t> labels;  // n * n_attributes, in {0,1}
    std::uint64_t seed = 0;
    std::uint64_t spec_hash = 0;

    Vec sample(std::size_t i) const;
    Vec label_vec(std::size_t i) const;  // 0/1 doubles
    std::uint8_t label(std::size_t i, std::size_t k) const {
        return labels[i * n_attributes + k];
    }
};

Dataset generate(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed);

// Independent content readout: least-squares amplitude of each (orthogonal)
// template in x minus background, thresholded at half amplitude. Never
// touches the learned model, so it can referee what a generated sample
// actually contains.
std::vector<std::uint8_t> decode_labels(const SyntheticSpec& spec, const Vec& x);

// Empirical mean / std / covariance over the label vectors, or over
// supplied per-sample logit vectors.
nlbp::AttributeStats attribute_stats(const Dataset& ds);
nlbp::AttributeStats attribute_stats(const std::vector<Vec>& vectors);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace spnn::data
