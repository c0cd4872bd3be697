#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slicefuse/tensor.hpp"

namespace slicefuse {

struct NodeId {
    std::uint32_t index = UINT32_MAX;
    bool valid() const { return index != UINT32_MAX; }
    bool operator==(const NodeId&) const = default;
};

// Reverse-mode tape. Every operation appends a node holding its value and a
// pullback that routes the output adjoint to the inputs; inputs always precede
// their consumers, so a single reverse sweep from the loss node visits the
// graph in valid topological order.
//
// A tape is single-threaded. Distinct tapes are fully independent.
class Tape {
public:
    Tape() = default;

    // Non-finite screening at op boundaries. Defaults to on in debug builds,
    // off in release; tests flip it explicitly.
    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

    std::size_t node_count() const { return nodes_.size(); }

    const Tensor& value(NodeId id) const { return nodes_[id.index].value; }

    NodeId leaf(Tensor value) {
        return push(std::move(value), nullptr);
    }

    NodeId matmul(NodeId a, NodeId b) {
        Tensor out = matmul_values(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            t.accumulate(adj, a, matmul_values(g, transpose(t.value(b))));
            t.accumulate(adj, b, matmul_values(transpose(t.value(a)), g));
        });
    }

    NodeId add(NodeId a, NodeId b) {
        Tensor out = add_values(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            t.accumulate(adj, a, g);
            t.accumulate(adj, b, g);
        });
    }

    // Elementwise product.
    NodeId mul(NodeId a, NodeId b) {
        Tensor out = hadamard_values(value(a), value(b));
        return push(std::move(out), [a, b](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            t.accumulate(adj, a, hadamard_values(g, t.value(b)));
            t.accumulate(adj, b, hadamard_values(g, t.value(a)));
        });
    }

    NodeId scale(NodeId a, double k) {
        Tensor out = scale_values(value(a), k);
        return push(std::move(out), [a, k](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            t.accumulate(adj, a, scale_values(g, k));
        });
    }

    NodeId sigmoid(NodeId a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = slicefuse::sigmoid(out[i]);
        NodeId id = push(std::move(out), nullptr);
        nodes_[id.index].pull = [a, id](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            const Tensor& s = t.value(id);
            Tensor gx = g;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= s[i] * (1.0 - s[i]);
            t.accumulate(adj, a, gx);
        };
        return id;
    }

    NodeId tanh(NodeId a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
        NodeId id = push(std::move(out), nullptr);
        nodes_[id.index].pull = [a, id](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            const Tensor& v = t.value(id);
            Tensor gx = g;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - v[i] * v[i];
            t.accumulate(adj, a, gx);
        };
        return id;
    }

    NodeId relu(NodeId a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        NodeId id = push(std::move(out), nullptr);
        nodes_[id.index].pull = [a](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            const Tensor& x = t.value(a);
            Tensor gx = g;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > 0.0 ? gx[i] : 0.0;
            t.accumulate(adj, a, gx);
        };
        return id;
    }

    // Joins two matrices along axis 0 (rows) or axis 1 (columns).
    NodeId concat(NodeId a, NodeId b, int axis) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        Tensor out;
        if (axis == 0) {
            if (ta.cols() != tb.cols()) {
                throw ShapeError("concat axis 0: column mismatch: " + ta.shape_string() + " vs " +
                                 tb.shape_string());
            }
            out = Tensor(ta.rows() + tb.rows(), ta.cols());
            std::size_t i = 0;
            for (double v : ta.values()) out[i++] = v;
            for (double v : tb.values()) out[i++] = v;
        } else if (axis == 1) {
            if (ta.rows() != tb.rows()) {
                throw ShapeError("concat axis 1: row mismatch: " + ta.shape_string() + " vs " +
                                 tb.shape_string());
            }
            out = Tensor(ta.rows(), ta.cols() + tb.cols());
            for (std::size_t r = 0; r < ta.rows(); ++r) {
                for (std::size_t c = 0; c < ta.cols(); ++c) out.at(r, c) = ta.at(r, c);
                for (std::size_t c = 0; c < tb.cols(); ++c) out.at(r, ta.cols() + c) = tb.at(r, c);
            }
        } else {
            throw ValueError("concat: axis must be 0 or 1");
        }
        return push(std::move(out), [a, b, axis](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            const Tensor& ta = t.value(a);
            const Tensor& tb = t.value(b);
            Tensor ga(ta.rows(), ta.cols());
            Tensor gb(tb.rows(), tb.cols());
            if (axis == 0) {
                std::size_t i = 0;
                for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = g[i++];
                for (std::size_t k = 0; k < gb.size(); ++k) gb[k] = g[i++];
            } else {
                for (std::size_t r = 0; r < ta.rows(); ++r) {
                    for (std::size_t c = 0; c < ta.cols(); ++c) ga.at(r, c) = g.at(r, c);
                    for (std::size_t c = 0; c < tb.cols(); ++c) gb.at(r, c) = g.at(r, ta.cols() + c);
                }
            }
            t.accumulate(adj, a, ga);
            t.accumulate(adj, b, gb);
        });
    }

    // Stacks S single-row nodes into an SxC matrix.
    NodeId stack_rows(std::vector<NodeId> rows) {
        if (rows.empty()) throw ShapeError("stack_rows: empty input");
        const std::size_t cols = value(rows[0]).cols();
        Tensor out(rows.size(), cols);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const Tensor& row = value(rows[r]);
            if (row.rows() != 1 || row.cols() != cols) {
                throw ShapeError("stack_rows: row " + std::to_string(r) + " has shape " +
                                 row.shape_string());
            }
            for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = row.at(0, c);
        }
        return push(std::move(out), [rows](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            for (std::size_t r = 0; r < rows.size(); ++r) {
                Tensor gr(1, g.cols());
                for (std::size_t c = 0; c < g.cols(); ++c) gr[c] = g.at(r, c);
                t.accumulate(adj, rows[r], gr);
            }
        });
    }

    // Sum of all entries, as a 1x1 scalar.
    NodeId sum(NodeId a) {
        double s = 0.0;
        for (double v : value(a).values()) s += v;
        return push(Tensor::scalar(s), [a](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
            const Tensor& x = t.value(a);
            t.accumulate(adj, a, Tensor::full(x.rows(), x.cols(), g[0]));
        });
    }

    // Binary cross entropy against fixed {0,1} labels, summed over all
    // entries. Predictions are clamped into [eps, 1-eps] before the logs; the
    // clamp has zero gradient outside that interval.
    NodeId bce(NodeId yhat, const Tensor& labels, double eps) {
        const Tensor& p = value(yhat);
        if (!p.same_shape(labels)) {
            throw ShapeError("bce: prediction shape " + p.shape_string() + " vs label shape " +
                             Tensor::shape_string(labels.rows(), labels.cols()));
        }
        if (eps <= 0.0 || eps >= 0.5) throw ValueError("bce: clamp eps must lie in (0, 0.5)");
        double loss = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double y = labels[i];
            if (y != 0.0 && y != 1.0) throw ValueError("bce: labels must be exactly 0 or 1");
            const double q = clamp01(p[i], eps);
            loss -= (1.0 - y) * std::log(1.0 - q) + y * std::log(q);
        }
        Tensor labels_copy = labels;
        return push(Tensor::scalar(loss),
                    [yhat, labels_copy, eps](Tape& t, const Tensor& g, std::vector<Tensor>& adj) {
                        const Tensor& p = t.value(yhat);
                        Tensor gx(p.rows(), p.cols());
                        for (std::size_t i = 0; i < p.size(); ++i) {
                            if (p[i] < eps || p[i] > 1.0 - eps) continue;  // clamped: flat
                            const double y = labels_copy[i];
                            gx[i] = g[0] * (p[i] - y) / (p[i] * (1.0 - p[i]));
                        }
                        t.accumulate(adj, yhat, gx);
                    });
    }

    // Reverse sweep from a scalar loss node. Adjoints are computed in a local
    // buffer and then added into persistent per-node accumulators, so repeated
    // calls without reset_gradients() accumulate.
    void backward(NodeId loss) {
        if (!value(loss).is_scalar()) {
            throw ShapeError("backward: loss node must be scalar, got " +
                             value(loss).shape_string());
        }
        std::vector<Tensor> adj(nodes_.size());
        adj[loss.index] = Tensor::scalar(1.0);
        for (std::size_t i = loss.index + 1; i-- > 0;) {
            if (adj[i].size() == 0 || !nodes_[i].pull) continue;
            nodes_[i].pull(*this, adj[i], adj);
        }
        grads_.resize(nodes_.size());
        for (std::size_t i = 0; i < adj.size(); ++i) {
            if (adj[i].size() == 0) continue;
            if (grads_[i].size() == 0) {
                grads_[i] = std::move(adj[i]);
            } else {
                add_inplace(grads_[i], adj[i]);
            }
        }
    }

    // Accumulated gradient of the most recent backward passes for a node;
    // zeros if the node received no adjoint.
    Tensor grad(NodeId id) const {
        if (id.index < grads_.size() && grads_[id.index].size() != 0) return grads_[id.index];
        const Tensor& v = value(id);
        return Tensor(v.rows(), v.cols());
    }

    void reset_gradients() { grads_.clear(); }

    static double clamp01(double p, double eps) {
        if (p < eps) return eps;
        if (p > 1.0 - eps) return 1.0 - eps;
        return p;
    }

private:
    struct Node {
        Tensor value;
        std::function<void(Tape&, const Tensor&, std::vector<Tensor>&)> pull;
    };

    NodeId push(Tensor value, std::function<void(Tape&, const Tensor&, std::vector<Tensor>&)> pull) {
        if (check_finite_ && !value.all_finite()) {
            throw NumericError("non-finite value produced at tape node " +
                               std::to_string(nodes_.size()));
        }
        nodes_.push_back(Node{std::move(value), std::move(pull)});
        return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    void accumulate(std::vector<Tensor>& adj, NodeId id, const Tensor& delta) {
        Tensor& slot = adj[id.index];
        if (slot.size() == 0) {
            slot = delta;
        } else {
            add_inplace(slot, delta);
        }
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
#ifdef NDEBUG
    bool check_finite_ = false;
#else
    bool check_finite_ = true;
#endif
};

}  // namespace slicefuse
