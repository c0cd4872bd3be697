#include <catch2/catch_amalgamated.hpp>

#include "slicefuse/fusion.hpp"
#include "slicefuse/mlp.hpp"
#include "slicefuse/rng.hpp"
#include "support/oracles.hpp"

using namespace slicefuse;

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("zero weights predict one half", "[mlp]") {
    MlpModel m = init_mlp(3, 4, 2, 8, 1);
    m.w1 = Tensor(12, 8);
    m.b1 = Tensor(1, 8);
    m.w2 = Tensor(8, 6);
    m.b2 = Tensor(1, 6);
    Rng rng(1);
    const Tensor pred = mlp_predict(m, random_tensor(rng, 3, 4));
    for (double v : pred.values()) CHECK(v == 0.5);
}

TEST_CASE("dense connectivity: one perturbed row can move every output row", "[mlp]") {
    Rng rng(2);
    const MlpModel m = init_mlp(4, 3, 2, 16, 3);
    Tensor d = random_tensor(rng, 4, 3);
    const Tensor before = mlp_predict(m, d);
    d.at(1, 2) += 0.75;
    const Tensor after = mlp_predict(m, d);
    std::size_t changed_rows = 0;
    for (std::size_t s = 0; s < 4; ++s) {
        for (std::size_t b = 0; b < 2; ++b) {
            if (before.at(s, b) != after.at(s, b)) {
                ++changed_rows;
                break;
            }
        }
    }
    CHECK(changed_rows == 4);
}

TEST_CASE("volume shape is fixed at construction", "[mlp]") {
    const MlpModel m = init_mlp(4, 3, 2, 8, 4);
    CHECK_THROWS_AS(mlp_predict(m, Tensor(5, 3)), ShapeError);
    CHECK_THROWS_AS(mlp_predict(m, Tensor(4, 4)), ShapeError);
}

TEST_CASE("parameter count grows with S*D", "[mlp]") {
    const MlpModel small = init_mlp(4, 3, 2, 8, 5);
    const MlpModel large = init_mlp(8, 3, 2, 8, 5);
    CHECK(large.parameter_count() > small.parameter_count());
    // The fusion model is length-independent: same dims, any slice count.
    const FusionModel f = init_fusion({3, 8, 2}, 5);
    std::size_t fusion_params = 0;
    for (const Tensor* t : f.parameters()) fusion_params += t->size();
    CHECK(fusion_params == 4 * (3 * 8 + 8 * 8 + 8) + 2 * 8 * 2 + 2);
}

TEST_CASE("mlp gradients match finite differences", "[mlp]") {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        const MlpModel model = init_mlp(3, 2, 2, 5, rng.next_u64());
        const Tensor desc = random_tensor(rng, 3, 2);
        Tensor labels(1, 6);
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;

        std::vector<Tensor> point;
        for (const Tensor* t : model.parameters()) point.push_back(*t);

        auto value_of = [&](const std::vector<Tensor>& x) {
            MlpModel m = model;
            std::vector<Tensor*> params = m.parameters();
            for (std::size_t i = 0; i < params.size(); ++i) *params[i] = x[i];
            Tape tape;
            MlpGraph g = build_mlp_graph(tape, m, desc);
            return tape.value(tape.bce(g.prediction, labels, 1e-7))[0];
        };

        Tape tape;
        MlpGraph g = build_mlp_graph(tape, model, desc);
        tape.backward(tape.bce(g.prediction, labels, 1e-7));
        std::vector<Tensor> analytic;
        for (NodeId id : g.param_nodes) analytic.push_back(tape.grad(id));

        REQUIRE(oracles::max_relative_error(
                    analytic, oracles::finite_difference_gradient(value_of, point)) <= 1e-4);
    }
}
