#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "slicefuse/autodiff.hpp"
#include "slicefuse/rng.hpp"
#include "slicefuse/tensor.hpp"

namespace slicefuse {

// One shared LSTM cell: input weights DxH, recurrent weights HxH and bias 1xH
// for each of the four gates (input, forget, cell candidate, output).
struct LstmParams {
    Tensor w_input, w_forget, w_cell, w_output;
    Tensor u_input, u_forget, u_cell, u_output;
    Tensor b_input, b_forget, b_cell, b_output;

    std::size_t input_dim() const { return w_input.rows(); }
    std::size_t hidden_dim() const { return w_input.cols(); }

    // Fixed parameter order used by binding, checkpoints and the optimizer.
    std::array<Tensor*, 12> tensors() {
        return {&w_input, &w_forget, &w_cell, &w_output, &u_input, &u_forget,
                &u_cell,  &u_output, &b_input, &b_forget, &b_cell, &b_output};
    }
    std::array<const Tensor*, 12> tensors() const {
        return {&w_input, &w_forget, &w_cell, &w_output, &u_input, &u_forget,
                &u_cell,  &u_output, &b_input, &b_forget, &b_cell, &b_output};
    }
};

// Volume fusion network: one LstmParams instance drives both slice orders,
// and a per-slice head maps the two H-dimensional states to B probabilities.
//
// In the default mode the head is an affine map on the concatenated pair
// [h_s, h'_s] (width 2H). In symmetric mode a single HxB map is applied to
// both states and summed, which makes the whole network equivariant to
// reversing the slice order.
struct FusionModel {
    LstmParams lstm;
    Tensor head_w;  // 2HxB, or HxB in symmetric mode
    Tensor head_b;  // 1xB
    Tensor h0, c0;              // initial forward state
    Tensor h_back, c_back;      // initial backward state (position S+1)
    bool symmetric_head = false;

    std::size_t descriptor_dim() const { return lstm.input_dim(); }
    std::size_t hidden_dim() const { return lstm.hidden_dim(); }
    std::size_t biomarker_count() const { return head_b.cols(); }

    // Trainable tensors in fixed order; initial states are fixed at zero and
    // deliberately excluded.
    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (Tensor* t : lstm.tensors()) out.push_back(t);
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }
    std::vector<const Tensor*> parameters() const {
        std::vector<const Tensor*> out;
        for (const Tensor* t : lstm.tensors()) out.push_back(t);
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }
};

struct FusionDims {
    std::size_t descriptor_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t biomarkers = 11;
};

// Deterministic initialization: weights uniform in +-1/sqrt(fan-in), forget
// gate bias 1, every other bias 0, initial states zero.
inline FusionModel init_fusion(const FusionDims& dims, std::uint64_t seed,
                               bool symmetric_head = false) {
    if (dims.descriptor_dim == 0 || dims.hidden_dim == 0 || dims.biomarkers == 0) {
        throw ValueError("init_fusion: dimensions must be positive");
    }
    const std::size_t d = dims.descriptor_dim, h = dims.hidden_dim, b = dims.biomarkers;
    Rng rng(splitmix64(seed));
    auto uniform_init = [&rng](std::size_t rows, std::size_t cols, std::size_t fan_in) {
        Tensor t(rows, cols);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
        return t;
    };

    FusionModel m;
    m.symmetric_head = symmetric_head;
    m.lstm.w_input = uniform_init(d, h, d);
    m.lstm.w_forget = uniform_init(d, h, d);
    m.lstm.w_cell = uniform_init(d, h, d);
    m.lstm.w_output = uniform_init(d, h, d);
    m.lstm.u_input = uniform_init(h, h, h);
    m.lstm.u_forget = uniform_init(h, h, h);
    m.lstm.u_cell = uniform_init(h, h, h);
    m.lstm.u_output = uniform_init(h, h, h);
    m.lstm.b_input = Tensor(1, h);
    m.lstm.b_forget = Tensor::full(1, h, 1.0);
    m.lstm.b_cell = Tensor(1, h);
    m.lstm.b_output = Tensor(1, h);
    m.head_w = uniform_init(symmetric_head ? h : 2 * h, b, 2 * h);
    m.head_b = Tensor(1, b);
    m.h0 = Tensor(1, h);
    m.c0 = Tensor(1, h);
    m.h_back = Tensor(1, h);
    m.c_back = Tensor(1, h);
    return m;
}

// LstmParams bound onto a tape.
struct LstmNodes {
    NodeId w_input, w_forget, w_cell, w_output;
    NodeId u_input, u_forget, u_cell, u_output;
    NodeId b_input, b_forget, b_cell, b_output;
};

inline LstmNodes bind_lstm(Tape& tape, const LstmParams& p) {
    LstmNodes n;
    n.w_input = tape.leaf(p.w_input);
    n.w_forget = tape.leaf(p.w_forget);
    n.w_cell = tape.leaf(p.w_cell);
    n.w_output = tape.leaf(p.w_output);
    n.u_input = tape.leaf(p.u_input);
    n.u_forget = tape.leaf(p.u_forget);
    n.u_cell = tape.leaf(p.u_cell);
    n.u_output = tape.leaf(p.u_output);
    n.b_input = tape.leaf(p.b_input);
    n.b_forget = tape.leaf(p.b_forget);
    n.b_cell = tape.leaf(p.b_cell);
    n.b_output = tape.leaf(p.b_output);
    return n;
}

struct LstmState {
    NodeId h;
    NodeId c;
};

// One LSTM update on the tape:
//   i,f,o = sigmoid(d W_g + h U_g + b_g), g = tanh(d W_c + h U_c + b_c),
//   c = f*c_prev + i*g, h = o*tanh(c).
inline LstmState lstm_cell_step(Tape& tape, const LstmNodes& p, NodeId d, LstmState prev) {
    auto gate = [&](NodeId w, NodeId u, NodeId b) {
        return tape.add(tape.add(tape.matmul(d, w), tape.matmul(prev.h, u)), b);
    };
    NodeId gate_in = tape.sigmoid(gate(p.w_input, p.u_input, p.b_input));
    NodeId gate_forget = tape.sigmoid(gate(p.w_forget, p.u_forget, p.b_forget));
    NodeId candidate = tape.tanh(gate(p.w_cell, p.u_cell, p.b_cell));
    NodeId gate_out = tape.sigmoid(gate(p.w_output, p.u_output, p.b_output));
    NodeId c = tape.add(tape.mul(gate_forget, prev.c), tape.mul(gate_in, candidate));
    NodeId h = tape.mul(gate_out, tape.tanh(c));
    return {h, c};
}

// Value-level convenience for a single cell update.
inline std::pair<Tensor, Tensor> lstm_cell(const LstmParams& params, const Tensor& d,
                                           const Tensor& h_prev, const Tensor& c_prev) {
    if (d.rows() != 1 || d.cols() != params.input_dim()) {
        throw ShapeError("lstm_cell: descriptor shape " + d.shape_string() + " expects 1x" +
                         std::to_string(params.input_dim()));
    }
    if (h_prev.cols() != params.hidden_dim() || c_prev.cols() != params.hidden_dim()) {
        throw ShapeError("lstm_cell: state width must equal hidden dim");
    }
    Tape tape;
    LstmNodes p = bind_lstm(tape, params);
    LstmState s =
        lstm_cell_step(tape, p, tape.leaf(d), {tape.leaf(h_prev), tape.leaf(c_prev)});
    return {tape.value(s.h), tape.value(s.c)};
}

enum class Direction { forward, backward };

// Runs the shared cell over the slice sequence and returns the per-slice
// hidden state nodes, indexed by slice: out[s] holds h_{s+1} for the forward
// order and h'_{s+1} for the backward order.
inline std::vector<LstmState> run_direction_nodes(Tape& tape, const LstmNodes& params,
                                                  const std::vector<NodeId>& slice_rows,
                                                  LstmState init, Direction dir) {
    const std::size_t s_count = slice_rows.size();
    if (s_count == 0) throw ValueError("run_direction: empty volume");
    std::vector<LstmState> states(s_count);
    if (dir == Direction::forward) {
        LstmState prev = init;
        for (std::size_t s = 0; s < s_count; ++s) {
            prev = lstm_cell_step(tape, params, slice_rows[s], prev);
            states[s] = prev;
        }
    } else {
        LstmState prev = init;
        for (std::size_t s = s_count; s-- > 0;) {
            prev = lstm_cell_step(tape, params, slice_rows[s], prev);
            states[s] = prev;
        }
    }
    return states;
}

inline std::vector<NodeId> bind_descriptor_rows(Tape& tape, const Tensor& descriptors) {
    std::vector<NodeId> rows;
    rows.reserve(descriptors.rows());
    for (std::size_t s = 0; s < descriptors.rows(); ++s) {
        rows.push_back(tape.leaf(descriptors.row_slice(s)));
    }
    return rows;
}

// State sequence for one direction, reported in slice order (row s holds the
// state at slice s).
inline Tensor run_direction(const FusionModel& model, const Tensor& descriptors, Direction dir) {
    if (descriptors.cols() != model.descriptor_dim()) {
        throw ShapeError("run_direction: descriptor dim " + std::to_string(descriptors.cols()) +
                         " does not match model dim " + std::to_string(model.descriptor_dim()));
    }
    Tape tape;
    LstmNodes params = bind_lstm(tape, model.lstm);
    std::vector<NodeId> rows = bind_descriptor_rows(tape, descriptors);
    LstmState init = dir == Direction::forward
                         ? LstmState{tape.leaf(model.h0), tape.leaf(model.c0)}
                         : LstmState{tape.leaf(model.h_back), tape.leaf(model.c_back)};
    std::vector<LstmState> states = run_direction_nodes(tape, params, rows, init, dir);
    Tensor out(descriptors.rows(), model.hidden_dim());
    for (std::size_t s = 0; s < states.size(); ++s) {
        const Tensor& h = tape.value(states[s].h);
        for (std::size_t c = 0; c < h.cols(); ++c) out.at(s, c) = h[c];
    }
    return out;
}

// Fusion parameters bound onto a tape. One binding can serve several volume
// graphs in a batch, so gradients reduce over the batch on the tape itself.
struct FusionParamNodes {
    LstmNodes lstm;
    NodeId head_w;
    NodeId head_b;

    // Same order as FusionModel::parameters().
    std::vector<NodeId> ordered() const {
        return {lstm.w_input, lstm.w_forget, lstm.w_cell, lstm.w_output,
                lstm.u_input, lstm.u_forget, lstm.u_cell, lstm.u_output,
                lstm.b_input, lstm.b_forget, lstm.b_cell, lstm.b_output,
                head_w,       head_b};
    }
};

inline FusionParamNodes bind_fusion_params(Tape& tape, const FusionModel& model) {
    FusionParamNodes nodes;
    nodes.lstm = bind_lstm(tape, model.lstm);
    nodes.head_w = tape.leaf(model.head_w);
    nodes.head_b = tape.leaf(model.head_b);
    return nodes;
}

// Builds the full prediction graph (both directions plus head) for one volume
// on top of already-bound parameters. Returns the SxB probability node.
inline NodeId fusion_prediction(Tape& tape, const FusionModel& model,
                                const FusionParamNodes& params, const Tensor& descriptors) {
    if (descriptors.cols() != model.descriptor_dim()) {
        throw ShapeError("fuse_predict: descriptor dim " + std::to_string(descriptors.cols()) +
                         " does not match model dim " + std::to_string(model.descriptor_dim()));
    }
    std::vector<NodeId> rows = bind_descriptor_rows(tape, descriptors);
    LstmState fwd_init{tape.leaf(model.h0), tape.leaf(model.c0)};
    LstmState bwd_init{tape.leaf(model.h_back), tape.leaf(model.c_back)};
    std::vector<LstmState> fwd =
        run_direction_nodes(tape, params.lstm, rows, fwd_init, Direction::forward);
    std::vector<LstmState> bwd =
        run_direction_nodes(tape, params.lstm, rows, bwd_init, Direction::backward);

    std::vector<NodeId> pred_rows;
    pred_rows.reserve(rows.size());
    for (std::size_t s = 0; s < rows.size(); ++s) {
        NodeId logit;
        if (model.symmetric_head) {
            logit = tape.add(tape.add(tape.matmul(fwd[s].h, params.head_w),
                                      tape.matmul(bwd[s].h, params.head_w)),
                             params.head_b);
        } else {
            NodeId pair = tape.concat(fwd[s].h, bwd[s].h, 1);
            logit = tape.add(tape.matmul(pair, params.head_w), params.head_b);
        }
        pred_rows.push_back(tape.sigmoid(logit));
    }
    return tape.stack_rows(pred_rows);
}

struct FusionGraph {
    NodeId prediction;                // SxB probabilities
    std::vector<NodeId> param_nodes;  // same order as FusionModel::parameters()
};

inline FusionGraph build_fusion_graph(Tape& tape, const FusionModel& model,
                                      const Tensor& descriptors) {
    FusionParamNodes params = bind_fusion_params(tape, model);
    FusionGraph g;
    g.prediction = fusion_prediction(tape, model, params, descriptors);
    g.param_nodes = params.ordered();
    return g;
}

// SxB biomarker probabilities for one volume; every entry lies in (0, 1).
inline Tensor fuse_predict(const FusionModel& model, const Tensor& descriptors) {
    Tape tape;
    FusionGraph g = build_fusion_graph(tape, model, descriptors);
    return tape.value(g.prediction);
}

}  // namespace slicefuse
