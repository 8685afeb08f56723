#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "spnn/verify.hpp"

using namespace spnn;
using namespace spnn::verify;
using linalg::Vec;

namespace {

SpnnModel small_model(std::uint64_t seed = 556) {
    SpnnInit init;
    init.hidden_width = 8;
    init.hidden_depth = 2;
    Rng rng(seed);
    return SpnnModel::make_flat(8, {4, 2}, init, rng);
}

}  // namespace

TEST_CASE("penrose suite passes on a random-weight model, all modes") {
    SpnnModel m = small_model();
    Report r = run_penrose_suite(m, 200, 1e-7);
    CHECK(r.pass());
    CHECK(r.checks.size() == 12);  // 4 modes x 3 identities

    // single block: residuals at the double-rounding floor
    SpnnInit init;
    init.hidden_width = 8;
    init.hidden_depth = 2;
    Rng rng(1);
    SpnnModel one = SpnnModel::make_flat(5, {2}, init, rng);
    Report r1 = run_penrose_suite(one, 100, 1e-12);
    CHECK(r1.pass());
}

TEST_CASE("penrose suite is deterministic and sensitive to a corrupted inverse") {
    SpnnModel m = small_model();
    Report a = run_penrose_suite(m, 100, 1e-7, Fault::None, 42);
    Report b = run_penrose_suite(m, 100, 1e-7, Fault::None, 42);
    for (std::size_t i = 0; i < a.checks.size(); ++i)
        CHECK(a.checks[i].value == b.checks[i].value);

    Report bad = run_penrose_suite(m, 50, 1e-7, Fault::SkipScaleDivision);
    CHECK(!bad.pass());
}

TEST_CASE("projection suite: natural passes, random_r drifts, linear reduction tight") {
    SpnnModel m = small_model();
    Report r = run_projection_suite(m, 200);
    CHECK(r.pass());
    // inspect the named lines
    for (const auto& c : r.checks) {
        if (c.name == "null_drift/random_r") {
            CHECK(c.greater_is_pass);
            CHECK(c.value > 1e-5);  // null invariance visibly fails off the natural mode
        }
        if (c.name == "linear_reduction")
            CHECK(c.value <= 1e-8);
    }
}

TEST_CASE("report jsonl shape") {
    Report r;
    r.suite = "demo";
    r.add("alpha", 0.5, 1.0);
    r.add("beta", 2.0, 1.0);
    CHECK(!r.pass());
    std::ostringstream os;
    r.write_jsonl(os);
    const std::string text = os.str();
    CHECK(text.find("\"suite\":\"demo\"") != std::string::npos);
    CHECK(text.find("\"check\":\"alpha\"") != std::string::npos);
    CHECK(text.find("\"pass\":false") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}

TEST_CASE("min-norm r training reduces the reconstruction norm") {
    SpnnModel m = small_model(77);
    Rng rng(3);
    std::vector<Vec> ys(64, Vec(m.output_dim));
    for (auto& y : ys)
        rng.fill_normal(y);

    auto mean_norm = [&](const SpnnModel& model) {
        double acc = 0.0;
        for (const auto& y : ys)
            acc += linalg::norm2(pinv(model, y, PinvMode::learned()));
        return acc / static_cast<double>(ys.size());
    };
    const double before = mean_norm(m);
    SpnnModel mn = make_min_norm_model(m, ys, 40, 1e-3, 5);
    CHECK(mean_norm(mn) < before);
    // forward parameters untouched
    CHECK(mn.forward_checksum() == m.forward_checksum());
}
