#include "spnn/data.hpp"

#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace spnn::data {

namespace {

constexpr std::uint64_t kDatasetMagic = 0x31544144'4e4e5053ULL;  // "SPNNDAT1" LE

std::uint64_t fnv1a(std::uint64_t h, const void* ptr, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(ptr);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

SyntheticSpec SyntheticSpec::desk_default() {
    SyntheticSpec spec;
    spec.finalize();
    return spec;
}

void SyntheticSpec::finalize() {
    if (n_attributes == 0 || sample_dim == 0)
        throw std::invalid_argument("SyntheticSpec: empty dims");
    if (templates.empty()) {
        // disjoint bars: attribute k lights up the k-th chunk of the sample
        if (sample_dim < n_attributes)
            throw std::invalid_argument("SyntheticSpec: sample_dim < n_attributes");
        const std::size_t chunk = sample_dim / n_attributes;
        templates.assign(n_attributes, Vec(sample_dim, 0.0));
        for (std::size_t k = 0; k < n_attributes; ++k)
            for (std::size_t i = 0; i < chunk; ++i)
                templates[k][k * chunk + i] = 1.0;
    }
    if (templates.size() != n_attributes)
        throw std::invalid_argument("SyntheticSpec: template count mismatch");
    for (const auto& t : templates)
        if (t.size() != sample_dim)
            throw std::invalid_argument("SyntheticSpec: template dim mismatch");
    if (background.empty()) {
        // a substantial fixed offset: the data manifold sits well away from
        // the origin in every coordinate, the same geometry that separates
        // the natural null section from minimal-norm or arbitrary ones
        background.assign(sample_dim, 0.0);
        for (std::size_t i = 0; i < sample_dim; ++i)
            background[i] =
                0.6 + 0.9 * static_cast<double>(i) / static_cast<double>(sample_dim);
    }
    if (background.size() != sample_dim)
        throw std::invalid_argument("SyntheticSpec: background dim mismatch");
    if (attr_prob.empty())
        attr_prob.assign(n_attributes, 0.5);
    if (attr_prob.size() != n_attributes)
        throw std::invalid_argument("SyntheticSpec: attr_prob size mismatch");
    for (double p : attr_prob)
        if (p < 0.0 || p > 1.0)
            throw std::invalid_argument("SyntheticSpec: probability out of [0,1]");
    if (pair.enabled) {
        if (pair.first >= n_attributes || pair.second >= n_attributes ||
            pair.first == pair.second)
            throw std::invalid_argument("SyntheticSpec: bad correlated pair");
        if (pair.agree_prob < 0.0 || pair.agree_prob > 1.0)
            throw std::invalid_argument("SyntheticSpec: bad agree_prob");
    }
    if (noise_std < 0.0)
        throw std::invalid_argument("SyntheticSpec: negative noise_std");
}

std::uint64_t SyntheticSpec::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(h, &sample_dim, sizeof(sample_dim));
    h = fnv1a(h, &n_attributes, sizeof(n_attributes));
    h = fnv1a(h, &noise_std, sizeof(noise_std));
    for (const auto& t : templates)
        h = fnv1a(h, t.data(), t.size() * sizeof(double));
    h = fnv1a(h, background.data(), background.size() * sizeof(double));
    h = fnv1a(h, attr_prob.data(), attr_prob.size() * sizeof(double));
    h = fnv1a(h, &pair.enabled, sizeof(pair.enabled));
    h = fnv1a(h, &pair.first, sizeof(pair.first));
    h = fnv1a(h, &pair.second, sizeof(pair.second));
    h = fnv1a(h, &pair.agree_prob, sizeof(pair.agree_prob));
    return h;
}

Vec Dataset::sample(std::size_t i) const {
    return Vec(samples.begin() + static_cast<std::ptrdiff_t>(i * sample_dim),
               samples.begin() + static_cast<std::ptrdiff_t>((i + 1) * sample_dim));
}

Vec Dataset::label_vec(std::size_t i) const {
    Vec v(n_attributes);
    for (std::size_t k = 0; k < n_attributes; ++k)
        v[k] = static_cast<double>(labels[i * n_attributes + k]);
    return v;
}

Dataset generate(const SyntheticSpec& raw_spec, std::size_t n, std::uint64_t seed) {
    if (n < 1)
        throw std::invalid_argument("generate: need n >= 1");
    SyntheticSpec spec = raw_spec;
    spec.finalize();

    Dataset ds;
    ds.n = n;
    ds.sample_dim = spec.sample_dim;
    ds.n_attributes = spec.n_attributes;
    ds.seed = seed;
    ds.spec_hash = spec.hash();
    ds.samples.resize(n * spec.sample_dim);
    ds.labels.resize(n * spec.n_attributes);

    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint8_t* lab = &ds.labels[i * spec.n_attributes];
        for (std::size_t k = 0; k < spec.n_attributes; ++k)
            lab[k] = rng.bernoulli(spec.attr_prob[k]) ? 1 : 0;
        if (spec.pair.enabled) {
            if (rng.bernoulli(spec.pair.agree_prob))
                lab[spec.pair.second] = lab[spec.pair.first];
            else
                lab[spec.pair.second] = 1 - lab[spec.pair.first];
        }
        double* smp = &ds.samples[i * spec.sample_dim];
        for (std::size_t d = 0; d < spec.sample_dim; ++d) {
            double v = spec.background[d];
            for (std::size_t k = 0; k < spec.n_attributes; ++k)
                if (lab[k])
                    v += spec.templates[k][d];
            smp[d] = v;
        }
        if (spec.noise_std > 0.0)
            for (std::size_t d = 0; d < spec.sample_dim; ++d)
                smp[d] += spec.noise_std * rng.normal();
    }
    return ds;
}

std::vector<std::uint8_t> decode_labels(const SyntheticSpec& raw_spec, const Vec& x) {
    SyntheticSpec spec = raw_spec;
    spec.finalize();
    if (x.size() != spec.sample_dim)
        throw std::invalid_argument("decode_labels: dim mismatch");
    std::vector<std::uint8_t> bits(spec.n_attributes, 0);
    for (std::size_t k = 0; k < spec.n_attributes; ++k) {
        double num = 0.0, den = 0.0;
        for (std::size_t d = 0; d < spec.sample_dim; ++d) {
            num += (x[d] - spec.background[d]) * spec.templates[k][d];
            den += spec.templates[k][d] * spec.templates[k][d];
        }
        bits[k] = (num / den > 0.5) ? 1 : 0;
    }
    return bits;
}

namespace {

nlbp::AttributeStats stats_of(const std::vector<Vec>& rows) {
    if (rows.empty())
        throw std::invalid_argument("attribute_stats: empty input");
    const std::size_t k = rows.front().size();
    const double n = static_cast<double>(rows.size());
    nlbp::AttributeStats st;
    st.mu.assign(k, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < k; ++j)
            st.mu[j] += r[j];
    for (auto& v : st.mu)
        v /= n;
    st.cov = Mat(k, k);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
                st.cov.at(i, j) += (r[i] - st.mu[i]) * (r[j] - st.mu[j]);
    for (auto& v : st.cov.data)
        v /= n;
    st.sigma.assign(k, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        st.sigma[i] = std::sqrt(std::max(0.0, st.cov.at(i, i)));
    st.validate();
    return st;
}

}  // namespace

nlbp::AttributeStats attribute_stats(const Dataset& ds) {
    std::vector<Vec> rows;
    rows.reserve(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i)
        rows.push_back(ds.label_vec(i));
    return stats_of(rows);
}

nlbp::AttributeStats attribute_stats(const std::vector<Vec>& vectors) {
    return stats_of(vectors);
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f)
        throw std::runtime_error("save_dataset: cannot open " + path);
    auto put_u64 = [&](std::uint64_t v) { std::fwrite(&v, sizeof(v), 1, f); };
    put_u64(kDatasetMagic);
    put_u64(ds.n);
    put_u64(ds.sample_dim);
    put_u64(ds.n_attributes);
    put_u64(ds.seed);
    put_u64(ds.spec_hash);
    std::fwrite(ds.samples.data(), sizeof(double), ds.samples.size(), f);
    std::fwrite(ds.labels.data(), 1, ds.labels.size(), f);
    if (std::fclose(f) != 0)
        throw std::runtime_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f)
        throw std::runtime_error("load_dataset: cannot open " + path);
    auto get_u64 = [&]() {
        std::uint64_t v = 0;
        if (std::fread(&v, sizeof(v), 1, f) != 1) {
            std::fclose(f);
            throw std::runtime_error("load_dataset: truncated header in " + path);
        }
        return v;
    };
    if (get_u64() != kDatasetMagic) {
        std::fclose(f);
        throw std::runtime_error("load_dataset: bad magic in " + path);
    }
    Dataset ds;
    ds.n = get_u64();
    ds.sample_dim = get_u64();
    ds.n_attributes = get_u64();
    ds.seed = get_u64();
    ds.spec_hash = get_u64();
    ds.samples.resize(ds.n * ds.sample_dim);
    ds.labels.resize(ds.n * ds.n_attributes);
    const bool ok =
        std::fread(ds.samples.data(), sizeof(double), ds.samples.size(), f) ==
            ds.samples.size() &&
        std::fread(ds.labels.data(), 1, ds.labels.size(), f) == ds.labels.size();
    std::fclose(f);
    if (!ok)
        throw std::runtime_error("load_dataset: truncated data in " + path);
    return ds;
}

}  // namespace spnn::data
