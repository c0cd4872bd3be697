#pragma once

#include <cstdint>
#include <vector>

#include "slicefuse/autodiff.hpp"
#include "slicefuse/rng.hpp"
#include "slicefuse/tensor.hpp"

namespace slicefuse {

// Fusion baseline that flattens the whole SxD descriptor matrix and maps it
// through two fully connected layers to SxB probabilities. Input and output
// widths are bound to fixed S, D, B at construction: unlike the recurrent
// model it cannot process a volume of any other length, and its parameter
// count grows with S*D.
struct MlpModel {
    std::size_t slices = 0;
    std::size_t descriptor_dim = 0;
    std::size_t biomarkers = 0;
    Tensor w1;  // (S*D) x Hm
    Tensor b1;  // 1 x Hm
    Tensor w2;  // Hm x (S*B)
    Tensor b2;  // 1 x (S*B)

    std::size_t hidden_dim() const { return w1.cols(); }
    std::size_t parameter_count() const {
        return w1.size() + b1.size() + w2.size() + b2.size();
    }

    std::vector<Tensor*> parameters() { return {&w1, &b1, &w2, &b2}; }
    std::vector<const Tensor*> parameters() const { return {&w1, &b1, &w2, &b2}; }
};

inline MlpModel init_mlp(std::size_t slices, std::size_t descriptor_dim, std::size_t biomarkers,
                         std::size_t hidden, std::uint64_t seed) {
    if (slices == 0 || descriptor_dim == 0 || biomarkers == 0 || hidden == 0) {
        throw ValueError("init_mlp: dimensions must be positive");
    }
    Rng rng(splitmix64(seed ^ 0x31f0caffeull));
    auto uniform_init = [&rng](std::size_t rows, std::size_t cols) {
        Tensor t(rows, cols);
        const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
        return t;
    };
    MlpModel m;
    m.slices = slices;
    m.descriptor_dim = descriptor_dim;
    m.biomarkers = biomarkers;
    m.w1 = uniform_init(slices * descriptor_dim, hidden);
    m.b1 = Tensor(1, hidden);
    m.w2 = uniform_init(hidden, slices * biomarkers);
    m.b2 = Tensor(1, slices * biomarkers);
    return m;
}

struct MlpGraph {
    NodeId prediction;                // 1 x (S*B) probabilities
    std::vector<NodeId> param_nodes;  // w1, b1, w2, b2
};

inline MlpGraph build_mlp_graph(Tape& tape, const MlpModel& model, const Tensor& descriptors) {
    if (descriptors.rows() != model.slices || descriptors.cols() != model.descriptor_dim) {
        throw ShapeError("mlp_predict: volume shape " + descriptors.shape_string() +
                         " does not match the fixed model shape " +
                         Tensor::shape_string(model.slices, model.descriptor_dim));
    }
    MlpGraph g;
    NodeId w1 = tape.leaf(model.w1);
    NodeId b1 = tape.leaf(model.b1);
    NodeId w2 = tape.leaf(model.w2);
    NodeId b2 = tape.leaf(model.b2);
    g.param_nodes = {w1, b1, w2, b2};
    NodeId flat = tape.leaf(descriptors.flatten());
    NodeId hidden = tape.relu(tape.add(tape.matmul(flat, w1), b1));
    g.prediction = tape.sigmoid(tape.add(tape.matmul(hidden, w2), b2));
    return g;
}

// SxB probabilities; errors hard if the volume shape differs from the shape
// the model was built for.
inline Tensor mlp_predict(const MlpModel& model, const Tensor& descriptors) {
    Tape tape;
    MlpGraph g = build_mlp_graph(tape, model, descriptors);
    return tape.value(g.prediction).reshape(model.slices, model.biomarkers);
}

}  // namespace slicefuse
