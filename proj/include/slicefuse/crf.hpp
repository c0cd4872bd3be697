#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slicefuse/maxflow.hpp"
#include "slicefuse/metrics.hpp"
#include "slicefuse/tensor.hpp"

namespace slicefuse {

// Pairwise binary MRF over the slice x biomarker grid. Within a slice every
// biomarker pair carries a Potts co-occurrence weight; along the volume each
// biomarker is smoothed between adjacent slices. All pairwise weights are
// nonnegative, which keeps the energy submodular and the MAP exactly solvable
// by one min cut.
struct CrfModel {
    double unary_scale = 1.0;
    Tensor cooc;    // BxB symmetric, zero diagonal, entries >= 0
    Tensor smooth;  // 1xB, entries >= 0

    std::size_t biomarker_count() const { return smooth.cols(); }

    void validate() const {
        if (!(unary_scale > 0.0)) throw ValueError("CrfModel: unary_scale must be positive");
        const std::size_t b = biomarker_count();
        if (cooc.rows() != b || cooc.cols() != b) {
            throw ShapeError("CrfModel: cooc must be BxB");
        }
        for (std::size_t i = 0; i < b; ++i) {
            if (cooc.at(i, i) != 0.0) throw ValueError("CrfModel: cooc diagonal must be zero");
            for (std::size_t j = 0; j < b; ++j) {
                if (cooc.at(i, j) < 0.0 || smooth[j] < 0.0) {
                    throw ValueError("CrfModel: negative pairwise weight violates submodularity");
                }
                if (cooc.at(i, j) != cooc.at(j, i)) {
                    throw ValueError("CrfModel: cooc must be symmetric");
                }
            }
        }
    }
};

inline CrfModel make_crf(std::size_t biomarkers, double cooc_scale, double smooth_scale,
                         double unary_scale = 1.0) {
    CrfModel m;
    m.unary_scale = unary_scale;
    m.cooc = Tensor(biomarkers, biomarkers);
    for (std::size_t i = 0; i < biomarkers; ++i) {
        for (std::size_t j = 0; j < biomarkers; ++j) {
            if (i != j) m.cooc.at(i, j) = cooc_scale;
        }
    }
    m.smooth = Tensor::full(1, biomarkers, smooth_scale);
    m.validate();
    return m;
}

// Energy over binary variables x indexed by node = s*B + b:
//   E(x) = sum_sb unary_one[s,b] * x_sb + sum_pairs w * [x_i != x_j].
// Assigning label 0 costs nothing; label 1 costs -unary_scale * logit.
struct EnergyGraph {
    std::size_t slices = 0;
    std::size_t biomarkers = 0;
    Tensor unary_one;  // SxB cost of label 1

    struct PairTerm {
        std::uint32_t a;
        std::uint32_t b;
        double weight;
    };
    std::vector<PairTerm> pairs;

    std::size_t node_count() const { return slices * biomarkers; }
    std::size_t node(std::size_t s, std::size_t b) const { return s * biomarkers + b; }
};

inline EnergyGraph build_energy(const CrfModel& model, const Tensor& logits) {
    model.validate();
    if (logits.cols() != model.biomarker_count()) {
        throw ShapeError("build_energy: logits are " + logits.shape_string() + " but model has " +
                         std::to_string(model.biomarker_count()) + " biomarkers");
    }
    if (!logits.all_finite()) throw NumericError("build_energy: non-finite logits");
    EnergyGraph g;
    g.slices = logits.rows();
    g.biomarkers = logits.cols();
    g.unary_one = scale_values(logits, -model.unary_scale);
    // Within-slice co-occurrence pairs.
    for (std::size_t s = 0; s < g.slices; ++s) {
        for (std::size_t b = 0; b < g.biomarkers; ++b) {
            for (std::size_t b2 = b + 1; b2 < g.biomarkers; ++b2) {
                const double w = model.cooc.at(b, b2);
                if (w > 0.0) {
                    g.pairs.push_back({static_cast<std::uint32_t>(g.node(s, b)),
                                       static_cast<std::uint32_t>(g.node(s, b2)), w});
                }
            }
        }
    }
    // Adjacent-slice smoothing pairs.
    for (std::size_t s = 0; s + 1 < g.slices; ++s) {
        for (std::size_t b = 0; b < g.biomarkers; ++b) {
            const double w = model.smooth[b];
            if (w > 0.0) {
                g.pairs.push_back({static_cast<std::uint32_t>(g.node(s, b)),
                                   static_cast<std::uint32_t>(g.node(s + 1, b)), w});
            }
        }
    }
    return g;
}

inline double energy_of(const EnergyGraph& g, const std::vector<std::uint8_t>& labeling) {
    if (labeling.size() != g.node_count()) throw ShapeError("energy_of: labeling size mismatch");
    double e = 0.0;
    for (std::size_t i = 0; i < labeling.size(); ++i) {
        if (labeling[i]) e += g.unary_one[i];
    }
    for (const auto& p : g.pairs) {
        if (labeling[p.a] != labeling[p.b]) e += p.weight;
    }
    return e;
}

// Exact MAP via min cut. Nodes that remain reachable from the source at
// equality stay on the source side, which fixes the returned minimizer.
inline std::vector<std::uint8_t> graph_cut_map(const EnergyGraph& g) {
    const std::size_t n = g.node_count();
    const std::size_t source = n;
    const std::size_t sink = n + 1;
    MaxFlow flow(n + 2);
    // Reparameterized terminal capacities: subtract min(theta0, theta1) per
    // node so both capacities are nonnegative; the subtracted mass is the
    // constant offset between min-cut value and MAP energy.
    double offset = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double cost_one = g.unary_one[i];
        const double base = std::min(0.0, cost_one);
        offset += base;
        // Source side is label 0: the source->node edge is cut (paid) exactly
        // when the node lands on the sink side, i.e. takes label 1.
        flow.add_edge(source, i, cost_one - base);
        flow.add_edge(i, sink, 0.0 - base);
    }
    for (const auto& p : g.pairs) {
        flow.add_edge(p.a, p.b, p.weight, p.weight);
    }
    const double cut = flow.solve(source, sink);

    std::vector<std::uint8_t> labeling(n);
    for (std::size_t i = 0; i < n; ++i) {
        labeling[i] = flow.on_source_side(i) ? 0 : 1;
    }
    const double energy = energy_of(g, labeling);
    const double scale = std::max(1.0, std::abs(energy));
    if (std::abs(cut + offset - energy) > 1e-6 * scale) {
        throw NumericError("graph_cut_map: min-cut value " + format_double(cut + offset) +
                           " disagrees with labeling energy " + format_double(energy));
    }
    return labeling;
}

// Exhaustive MAP for small instances; ties resolve to the lexicographically
// smallest labeling. The independent check for graph_cut_map.
inline std::vector<std::uint8_t> brute_force_map(const EnergyGraph& g) {
    const std::size_t n = g.node_count();
    if (n > 20) throw ValueError("brute_force_map: instance too large (limit 20 variables)");
    std::vector<std::uint8_t> best(n, 0);
    std::vector<std::uint8_t> current(n);
    double best_energy = energy_of(g, best);
    const std::uint64_t total = 1ull << n;
    for (std::uint64_t mask = 1; mask < total; ++mask) {
        // Bit i of the mask is variable i; enumerating masks in increasing
        // order visits labelings so that the first minimum found is the
        // lexicographically smallest under most-significant-first comparison.
        for (std::size_t i = 0; i < n; ++i) current[i] = (mask >> (n - 1 - i)) & 1u;
        const double e = energy_of(g, current);
        if (e < best_energy) {
            best_energy = e;
            best = current;
        }
    }
    return best;
}

inline Tensor labeling_to_tensor(const EnergyGraph& g, const std::vector<std::uint8_t>& labeling) {
    Tensor out(g.slices, g.biomarkers);
    for (std::size_t i = 0; i < labeling.size(); ++i) out[i] = labeling[i] ? 1.0 : 0.0;
    return out;
}

// Binary SxB prediction for one volume.
inline Tensor crf_predict(const CrfModel& model, const Tensor& logits) {
    const EnergyGraph g = build_energy(model, logits);
    return labeling_to_tensor(g, graph_cut_map(g));
}

struct CrfFitGrid {
    std::vector<double> cooc_scales{0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0};
    std::vector<double> smooth_scales{0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0};
    int rounds = 2;
};

// Coordinate-wise grid search over a shared co-occurrence scale and a shared
// smoothing scale, maximizing exact-match ratio on the supplied volumes. Ties
// keep the smaller scale, so absent coherence the zero candidate wins.
inline CrfModel fit_crf(const std::vector<Tensor>& logits, const std::vector<Tensor>& labels,
                        const CrfFitGrid& grid) {
    if (logits.empty() || logits.size() != labels.size()) {
        throw ValueError("fit_crf: need matching nonempty logit/label volumes");
    }
    if (grid.cooc_scales.empty() || grid.smooth_scales.empty()) {
        throw ValueError("fit_crf: empty candidate grid");
    }
    const std::size_t biomarkers = logits[0].cols();

    auto score = [&](double cooc_scale, double smooth_scale) {
        const CrfModel candidate = make_crf(biomarkers, cooc_scale, smooth_scale);
        double matched = 0.0, total = 0.0;
        for (std::size_t v = 0; v < logits.size(); ++v) {
            const Tensor pred = crf_predict(candidate, logits[v]);
            matched += emr(labels[v], pred, 0.5) * static_cast<double>(labels[v].rows());
            total += static_cast<double>(labels[v].rows());
        }
        return matched / total;
    };

    double best_cooc = grid.cooc_scales.front();
    double best_smooth = grid.smooth_scales.front();
    double best_emr = score(best_cooc, best_smooth);
    for (int round = 0; round < grid.rounds; ++round) {
        for (double c : grid.smooth_scales) {
            if (c == best_smooth) continue;
            const double e = score(best_cooc, c);
            if (e > best_emr) {
                best_emr = e;
                best_smooth = c;
            }
        }
        for (double c : grid.cooc_scales) {
            if (c == best_cooc) continue;
            const double e = score(c, best_smooth);
            if (e > best_emr) {
                best_emr = e;
                best_cooc = c;
            }
        }
    }
    return make_crf(biomarkers, best_cooc, best_smooth);
}

}  // namespace slicefuse
