#pragma once

#include <cstdint>
#include <vector>

#include "slicefuse/autodiff.hpp"
#include "slicefuse/rng.hpp"
#include "slicefuse/tensor.hpp"

namespace slicefuse {

// Per-slice predictor: an affine map D->B plus sigmoid appended directly to
// the descriptor source. Serves as the unfused baseline and supplies unary
// logits to the CRF. Row s of its output depends on descriptor row s only.
struct SliceHeadModel {
    Tensor w;  // DxB
    Tensor b;  // 1xB

    std::size_t descriptor_dim() const { return w.rows(); }
    std::size_t biomarker_count() const { return w.cols(); }

    std::vector<Tensor*> parameters() { return {&w, &b}; }
    std::vector<const Tensor*> parameters() const { return {&w, &b}; }
};

inline SliceHeadModel init_slice_head(std::size_t descriptor_dim, std::size_t biomarkers,
                                      std::uint64_t seed) {
    if (descriptor_dim == 0 || biomarkers == 0) {
        throw ValueError("init_slice_head: dimensions must be positive");
    }
    Rng rng(splitmix64(seed ^ 0x51edbead5ull));
    SliceHeadModel m;
    m.w = Tensor(descriptor_dim, biomarkers);
    const double bound = 1.0 / std::sqrt(static_cast<double>(descriptor_dim));
    for (std::size_t i = 0; i < m.w.size(); ++i) m.w[i] = rng.uniform(-bound, bound);
    m.b = Tensor(1, biomarkers);
    return m;
}

// Pre-sigmoid scores, SxB.
inline Tensor base_logits(const SliceHeadModel& model, const Tensor& descriptors) {
    if (descriptors.cols() != model.descriptor_dim()) {
        throw ShapeError("base_logits: descriptor dim " + std::to_string(descriptors.cols()) +
                         " does not match head dim " + std::to_string(model.descriptor_dim()));
    }
    Tensor logits = matmul_values(descriptors, model.w);
    for (std::size_t s = 0; s < logits.rows(); ++s) {
        for (std::size_t c = 0; c < logits.cols(); ++c) logits.at(s, c) += model.b[c];
    }
    return logits;
}

// sigmoid(base_logits), so the two agree to the last bit by construction.
inline Tensor head_predict(const SliceHeadModel& model, const Tensor& descriptors) {
    return sigmoid_values(base_logits(model, descriptors));
}

}  // namespace slicefuse
