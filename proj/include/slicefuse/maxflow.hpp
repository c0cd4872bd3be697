#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "slicefuse/common.hpp"

namespace slicefuse {

// Dinic max-flow on doubles. Deterministic: edges are explored in insertion
// order, so identical graphs give identical flows and identical min cuts.
class MaxFlow {
public:
    explicit MaxFlow(std::size_t nodes) : head_(nodes, -1) {}

    // Adds a directed edge and its residual twin.
    void add_edge(std::size_t from, std::size_t to, double capacity, double reverse_capacity = 0.0) {
        if (!(capacity >= 0.0) || !(reverse_capacity >= 0.0)) {
            throw NumericError("max-flow: capacities must be finite and nonnegative");
        }
        push_edge(from, to, capacity);
        push_edge(to, from, reverse_capacity);
    }

    std::size_t node_count() const { return head_.size(); }

    double solve(std::size_t source, std::size_t sink) {
        source_ = source;
        sink_ = sink;
        double flow = 0.0;
        while (build_levels()) {
            iter_ = head_;
            double pushed;
            while ((pushed = augment(source_, std::numeric_limits<double>::infinity())) > 0.0) {
                flow += pushed;
            }
        }
        solved_ = true;
        return flow;
    }

    // After solve(): true when the node sits on the source side of the min
    // cut (reachable through positive residual capacity).
    bool on_source_side(std::size_t node) const {
        if (!solved_) throw ValueError("max-flow: on_source_side before solve");
        return level_[node] >= 0;
    }

private:
    struct Edge {
        std::size_t to;
        double cap;
        int next;  // next edge out of the same node, -1 terminates
    };

    void push_edge(std::size_t from, std::size_t to, double cap) {
        edges_.push_back(Edge{to, cap, head_[from]});
        head_[from] = static_cast<int>(edges_.size() - 1);
    }

    bool build_levels() {
        level_.assign(head_.size(), -1);
        std::queue<std::size_t> queue;
        level_[source_] = 0;
        queue.push(source_);
        while (!queue.empty()) {
            const std::size_t u = queue.front();
            queue.pop();
            for (int e = head_[u]; e != -1; e = edges_[e].next) {
                const Edge& edge = edges_[e];
                if (edge.cap > 0.0 && level_[edge.to] < 0) {
                    level_[edge.to] = level_[u] + 1;
                    queue.push(edge.to);
                }
            }
        }
        return level_[sink_] >= 0;
    }

    double augment(std::size_t u, double limit) {
        if (u == sink_) return limit;
        for (int& e = iter_[u]; e != -1; e = edges_[e].next) {
            Edge& edge = edges_[e];
            if (edge.cap <= 0.0 || level_[edge.to] != level_[u] + 1) continue;
            const double pushed = augment(edge.to, limit < edge.cap ? limit : edge.cap);
            if (pushed > 0.0) {
                edge.cap -= pushed;
                edges_[e ^ 1].cap += pushed;
                return pushed;
            }
        }
        return 0.0;
    }

    std::vector<Edge> edges_;
    std::vector<int> head_;
    std::vector<int> iter_;
    std::vector<int> level_;
    std::size_t source_ = 0;
    std::size_t sink_ = 0;
    bool solved_ = false;
};

}  // namespace slicefuse
