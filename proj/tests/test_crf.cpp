#include <catch2/catch_amalgamated.hpp>

#include "slicefuse/crf.hpp"
#include "slicefuse/rng.hpp"

using namespace slicefuse;

namespace {

// Dyadic random values (multiples of 1/64) keep all flow arithmetic exact, so
// the graph-cut energy can be compared to the brute-force minimum with ==.
double dyadic(Rng& rng, int span) {
    return static_cast<double>(static_cast<long long>(rng.below(2 * span + 1)) - span) / 64.0;
}

}  // namespace

TEST_CASE("decoupled unaries give the sign-of-logit labeling", "[crf]") {
    const CrfModel m = make_crf(3, 0.0, 0.0);
    const Tensor logits = Tensor::from_rows({{1.5, -0.5, 2.0}, {-1.0, 0.25, -0.125}});
    const Tensor pred = crf_predict(m, logits);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        CHECK(pred[i] == (logits[i] > 0.0 ? 1.0 : 0.0));
    }
}

TEST_CASE("strongly negative logits force the all-zero labeling", "[crf]") {
    const CrfModel m = make_crf(2, 1.0, 1.0);
    const Tensor logits = Tensor::full(4, 2, -10.0);
    const Tensor pred = crf_predict(m, logits);
    for (double v : pred.values()) CHECK(v == 0.0);
}

TEST_CASE("energy of a labeling equals the hand sum on a 2x2 grid", "[crf]") {
    CrfModel m;
    m.unary_scale = 1.0;
    m.cooc = Tensor::from_rows({{0.0, 0.5}, {0.5, 0.0}});
    m.smooth = Tensor::from_rows({{0.25, 0.125}});
    const Tensor logits = Tensor::from_rows({{1.0, -2.0}, {0.5, 0.75}});
    const EnergyGraph g = build_energy(m, logits);

    // Labeling x = [[1,0],[1,1]]:
    //   unaries: -1.0 (s0,b0) + -0.5 (s1,b0) + -0.75 (s1,b1) = -2.25
    //   within-slice: slice 0 disagrees (0.5), slice 1 agrees (0)
    //   along-volume: b0 agrees, b1 disagrees (0.125)
    const std::vector<std::uint8_t> labeling{1, 0, 1, 1};
    CHECK_THAT(energy_of(g, labeling), Catch::Matchers::WithinAbs(-2.25 + 0.5 + 0.125, 1e-15));
}

TEST_CASE("negative pairwise weights are rejected", "[crf]") {
    CrfModel m;
    m.cooc = Tensor::from_rows({{0.0, -0.5}, {-0.5, 0.0}});
    m.smooth = Tensor::from_rows({{0.0, 0.0}});
    CHECK_THROWS_AS(m.validate(), ValueError);
    CHECK_THROWS_AS(make_crf(2, -1.0, 0.0), ValueError);
}

TEST_CASE("non-finite logits are rejected", "[crf]") {
    const CrfModel m = make_crf(2, 0.5, 0.5);
    Tensor logits = Tensor::full(2, 2, 1.0);
    logits[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(build_energy(m, logits), NumericError);
}

TEST_CASE("graph cut equals brute force on random dyadic instances", "[crf]") {
    Rng rng(808);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t s = 1 + rng.below(4);
        const std::size_t b = 1 + rng.below(4);
        CrfModel m;
        m.unary_scale = 1.0;
        m.cooc = Tensor(b, b);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = i + 1; j < b; ++j) {
                const double w = std::abs(dyadic(rng, 64));
                m.cooc.at(i, j) = w;
                m.cooc.at(j, i) = w;
            }
        }
        m.smooth = Tensor(1, b);
        for (std::size_t i = 0; i < b; ++i) m.smooth[i] = std::abs(dyadic(rng, 64));
        Tensor logits(s, b);
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dyadic(rng, 256);

        const EnergyGraph g = build_energy(m, logits);
        const auto cut = graph_cut_map(g);
        const auto brute = brute_force_map(g);
        REQUIRE(energy_of(g, cut) == energy_of(g, brute));
    }
}

TEST_CASE("overwhelming smoothing makes each biomarker constant along slices", "[crf]") {
    Rng rng(99);
    const CrfModel m = make_crf(2, 0.0, 1000.0);
    Tensor logits(6, 2);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = rng.uniform(-2.0, 2.0);
    const Tensor pred = crf_predict(m, logits);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t s = 1; s < 6; ++s) {
            REQUIRE(pred.at(s, b) == pred.at(0, b));
        }
    }
}

TEST_CASE("increasing smoothing never increases label changes along slices", "[crf]") {
    Rng rng(2718);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor logits(5, 1);
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dyadic(rng, 128);
        std::size_t prev_changes = SIZE_MAX;
        for (double w : {0.0, 0.25, 0.5, 1.0, 2.0, 8.0}) {
            const Tensor pred = crf_predict(make_crf(1, 0.0, w), logits);
            std::size_t changes = 0;
            for (std::size_t s = 1; s < 5; ++s) {
                if (pred.at(s, 0) != pred.at(s - 1, 0)) ++changes;
            }
            REQUIRE(changes <= prev_changes);
            prev_changes = changes;
        }
    }
}

TEST_CASE("joint positive scaling leaves the MAP labeling unchanged", "[crf]") {
    Rng rng(5150);
    for (int trial = 0; trial < 50; ++trial) {
        CrfModel m = make_crf(2, std::abs(dyadic(rng, 32)), std::abs(dyadic(rng, 32)));
        Tensor logits(3, 2);
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dyadic(rng, 128);
        const auto base = graph_cut_map(build_energy(m, logits));

        CrfModel scaled = m;
        scaled.unary_scale = m.unary_scale * 4.0;
        scaled.cooc = scale_values(m.cooc, 4.0);
        scaled.smooth = scale_values(m.smooth, 4.0);
        const auto big = graph_cut_map(build_energy(scaled, logits));
        REQUIRE(base == big);
    }
}

TEST_CASE("brute force rejects oversized instances and breaks ties low", "[crf]") {
    CrfModel m = make_crf(1, 0.0, 0.0);
    CHECK_THROWS_AS(brute_force_map(build_energy(m, Tensor(21, 1))), ValueError);
    // All-zero unaries: every labeling ties at energy 0; lexicographically
    // smallest wins.
    const auto tie = brute_force_map(build_energy(m, Tensor(3, 1)));
    CHECK(tie == std::vector<std::uint8_t>{0, 0, 0});
}

TEST_CASE("fit_crf selects smoothing on coherent labels and none on shuffled ones", "[crf]") {
    Rng rng(1234);
    const std::size_t volumes = 6, s = 12, b = 2;

    std::vector<Tensor> labels, logits;
    for (std::size_t v = 0; v < volumes; ++v) {
        Tensor y(s, b);
        for (std::size_t bb = 0; bb < b; ++bb) {
            // Long runs: coherent along slices.
            double state = rng.bernoulli(0.5) ? 1.0 : 0.0;
            for (std::size_t ss = 0; ss < s; ++ss) {
                if (rng.bernoulli(0.1)) state = 1.0 - state;
                y.at(ss, bb) = state;
            }
        }
        Tensor l(s, b);
        for (std::size_t i = 0; i < l.size(); ++i) {
            // Noisy logits around the labels.
            l[i] = (y[i] == 1.0 ? 1.0 : -1.0) + 1.5 * rng.normal();
        }
        labels.push_back(y);
        logits.push_back(l);
    }

    CrfFitGrid grid;
    const CrfModel coherent = fit_crf(logits, labels, grid);
    CHECK(coherent.smooth[0] > 0.0);

    // Shuffle each volume's label rows independently: coherence gone.
    Rng shuffle_rng(777);
    std::vector<Tensor> shuffled;
    for (const Tensor& y : labels) {
        std::vector<std::size_t> perm(s);
        for (std::size_t i = 0; i < s; ++i) perm[i] = i;
        shuffle_rng.shuffle(perm);
        Tensor out(s, b);
        for (std::size_t ss = 0; ss < s; ++ss) {
            for (std::size_t bb = 0; bb < b; ++bb) out.at(ss, bb) = y.at(perm[ss], bb);
        }
        shuffled.push_back(out);
    }
    // Logits must match the shuffled labels for the comparison to be fair;
    // regenerate them from the shuffled labels.
    std::vector<Tensor> shuffled_logits;
    for (const Tensor& y : shuffled) {
        Tensor l(s, b);
        for (std::size_t i = 0; i < l.size(); ++i) {
            l[i] = (y[i] == 1.0 ? 1.0 : -1.0) + 1.5 * shuffle_rng.normal();
        }
        shuffled_logits.push_back(l);
    }
    const CrfModel incoherent = fit_crf(shuffled_logits, shuffled, grid);
    CHECK(incoherent.smooth[0] <= coherent.smooth[0]);

    // A single-candidate grid returns that candidate.
    CrfFitGrid single;
    single.cooc_scales = {0.125};
    single.smooth_scales = {0.5};
    const CrfModel fixed = fit_crf(logits, labels, single);
    CHECK(fixed.cooc.at(0, 1) == 0.125);
    CHECK(fixed.smooth[0] == 0.5);

    CrfFitGrid empty;
    empty.cooc_scales.clear();
    CHECK_THROWS_AS(fit_crf(logits, labels, empty), ValueError);
    CHECK_THROWS_AS(fit_crf({}, {}, grid), ValueError);
}
