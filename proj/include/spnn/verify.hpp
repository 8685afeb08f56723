#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "spnn/data.hpp"
#include "spnn/diffusion.hpp"
#include "spnn/model.hpp"

namespace spnn::verify {

struct CheckLine {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool greater_is_pass = false;  // default: pass iff value <= threshold
    bool pass = false;
};

struct Report {
    std::string suite;
    std::vector<CheckLine> checks;

    bool pass() const;
    void add(std::string name, double value, double threshold, bool greater_is_pass = false);
    void write_jsonl(std::ostream& os) const;  // one record per check
};

// Deliberate defects for sensitivity checks: the suites must go red on them.
enum class Fault {
    None,
    SkipScaleDivision,  // pseudo-inverse omits the division by s
};

// Right-inverse and reflexive Penrose identities over every pinv mode.
Report run_penrose_suite(const SpnnModel& m, std::size_t n_samples, double tol,
                         Fault fault = Fault::None, std::uint64_t seed = 556);

// NLBP consistency, null-space drift (natural vs random r), and the linear
// reduction against the closed-form back-projection.
Report run_projection_suite(const SpnnModel& m, std::size_t n_samples,
                            std::uint64_t seed = 556);

struct AblationCell {
    std::string r_kind;   // "random" | "min_norm" | "natural"
    std::string bp_kind;  // "naive" | "gentle"
    double agreement = 0.0;
    double residual = 0.0;
};

struct AblationReport {
    std::vector<AblationCell> cells;  // reference cell first
    Report summary;
};

// {random_r, min_norm_r} x {naive, gentle} plus the natural+gentle
// reference; static restoration targets g(x) drawn from the test set.
// Agreement is judged by the independent template decode of the generated
// sample against the test sample's true labels — the generated content, not
// the surrogate's own logits (a final projection makes those match y for
// any reflexive inverse). residual reports ||g(x0) - y||. min_norm_r is a
// copy of the model whose r is trained to minimize ||g+(y)|| in input space.
AblationReport run_ablation_grid(const SpnnModel& m, const diffusion::Denoiser& den,
                                 const data::SyntheticSpec& spec, const data::Dataset& test,
                                 std::size_t n_targets,
                                 const diffusion::SamplerConfig& base_cfg,
                                 std::uint64_t seed = 556);

// Trains a copy of the r nets toward argmin ||g+(y)||^2 (the minimal-norm
// selection the natural definition is contrasted against).
SpnnModel make_min_norm_model(const SpnnModel& m, const std::vector<linalg::Vec>& ys,
                              std::size_t epochs, double lr, std::uint64_t seed);

}  // namespace spnn::verify
