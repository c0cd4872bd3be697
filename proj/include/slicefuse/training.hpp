#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "slicefuse/autodiff.hpp"
#include "slicefuse/data.hpp"
#include "slicefuse/fusion.hpp"
#include "slicefuse/metrics.hpp"
#include "slicefuse/mlp.hpp"
#include "slicefuse/rng.hpp"
#include "slicefuse/slice_head.hpp"

namespace slicefuse {

struct TrainConfig {
    double lr = 1e-2;
    double momentum = 0.9;
    int batch_volumes = 4;
    int stage1_batch_slices = 32;
    int patience_epochs = 10;
    double lr_decay_factor = 0.1;
    int max_epochs = 100;
    std::uint64_t seed = 0;
    double clamp_eps = 1e-7;

    void validate() const {
        if (!(lr > 0.0)) throw ValueError("TrainConfig: lr must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ValueError("TrainConfig: momentum in [0,1)");
        if (batch_volumes < 1) throw ValueError("TrainConfig: batch_volumes must be >= 1");
        if (stage1_batch_slices < 1) {
            throw ValueError("TrainConfig: stage1_batch_slices must be >= 1");
        }
        if (patience_epochs < 1) throw ValueError("TrainConfig: patience_epochs must be >= 1");
        if (!(lr_decay_factor > 0.0) || lr_decay_factor >= 1.0) {
            throw ValueError("TrainConfig: lr_decay_factor in (0,1)");
        }
        if (max_epochs < 1) throw ValueError("TrainConfig: max_epochs must be >= 1");
        if (!(clamp_eps > 0.0) || clamp_eps >= 0.5) {
            throw ValueError("TrainConfig: clamp_eps in (0, 0.5)");
        }
    }
};

// Flat key=value schema holding exactly the TrainConfig keys. Blank lines and
// '#' comments are ignored; an unknown key is a hard error.
inline TrainConfig parse_train_config(std::istream& in) {
    TrainConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
        line.erase(std::remove_if(line.begin(), line.end(), is_space), line.end());
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValueError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "lr") {
                cfg.lr = std::stod(value);
            } else if (key == "momentum") {
                cfg.momentum = std::stod(value);
            } else if (key == "batch_volumes") {
                cfg.batch_volumes = std::stoi(value);
            } else if (key == "stage1_batch_slices") {
                cfg.stage1_batch_slices = std::stoi(value);
            } else if (key == "patience_epochs") {
                cfg.patience_epochs = std::stoi(value);
            } else if (key == "lr_decay_factor") {
                cfg.lr_decay_factor = std::stod(value);
            } else if (key == "max_epochs") {
                cfg.max_epochs = std::stoi(value);
            } else if (key == "seed") {
                cfg.seed = std::stoull(value);
            } else if (key == "clamp_eps") {
                cfg.clamp_eps = std::stod(value);
            } else {
                throw ValueError("config line " + std::to_string(line_no) + ": unknown key '" +
                                 key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ValueError("config line " + std::to_string(line_no) + ": bad value for '" +
                             key + "'");
        } catch (const std::out_of_range&) {
            throw ValueError("config line " + std::to_string(line_no) + ": value out of range");
        }
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_train_config: cannot open " + path);
    return parse_train_config(in);
}

// Binary cross entropy summed over all entries; predictions are clamped into
// [eps, 1-eps] before the logs.
inline double bce_loss(const Tensor& y, const Tensor& yhat, double clamp_eps = 1e-7) {
    if (!y.same_shape(yhat)) {
        throw ShapeError("bce_loss: shape mismatch " + y.shape_string() + " vs " +
                         yhat.shape_string());
    }
    if (clamp_eps <= 0.0 || clamp_eps >= 0.5) throw ValueError("bce_loss: eps in (0, 0.5)");
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double label = y[i];
        if (label != 0.0 && label != 1.0) throw ValueError("bce_loss: labels must be 0 or 1");
        const double p = Tape::clamp01(yhat[i], clamp_eps);
        loss -= (1.0 - label) * std::log(1.0 - p) + label * std::log(p);
    }
    return loss;
}

// Per-element mean variant used for reporting and as the optimized objective,
// which keeps gradient magnitudes independent of S and B.
inline double bce_loss_mean(const Tensor& y, const Tensor& yhat, double clamp_eps = 1e-7) {
    return bce_loss(y, yhat, clamp_eps) / static_cast<double>(y.size());
}

// Classical momentum: v <- momentum*v + g, p <- p - lr*v.
struct OptimizerState {
    std::vector<Tensor> velocity;

    static OptimizerState for_parameters(const std::vector<Tensor*>& params) {
        OptimizerState state;
        state.velocity.reserve(params.size());
        for (const Tensor* p : params) state.velocity.emplace_back(p->rows(), p->cols());
        return state;
    }
};

inline void sgd_momentum_step(const std::vector<Tensor*>& params,
                              const std::vector<Tensor>& grads, OptimizerState& state, double lr,
                              double momentum) {
    if (params.size() != grads.size() || params.size() != state.velocity.size()) {
        throw ShapeError("sgd_momentum_step: parameter/gradient/velocity count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        Tensor& v = state.velocity[i];
        if (!p.same_shape(g) || !p.same_shape(v)) {
            throw ShapeError("sgd_momentum_step: shape mismatch at parameter " +
                             std::to_string(i));
        }
        for (std::size_t k = 0; k < p.size(); ++k) {
            v[k] = momentum * v[k] + g[k];
            p[k] -= lr * v[k];
        }
    }
}

// Plateau learning-rate schedule with early stop: after `patience` epochs
// without strict improvement the rate is multiplied by `factor`; after two
// full patience windows without improvement training stops.
class PlateauSchedule {
public:
    PlateauSchedule(double lr, int patience, double factor)
        : lr_(lr), patience_(patience), factor_(factor) {}

    double lr() const { return lr_; }
    double best() const { return best_; }

    // Returns true when `score` strictly improves on the best seen.
    bool observe(double score) {
        const bool improved = score > best_;
        if (improved) {
            best_ = score;
            since_best_ = 0;
            since_decay_ = 0;
        } else {
            ++since_best_;
            ++since_decay_;
            if (since_decay_ >= patience_) {
                lr_ *= factor_;
                since_decay_ = 0;
            }
        }
        return improved;
    }

    bool should_stop() const { return since_best_ >= 2 * patience_; }

private:
    double lr_;
    int patience_;
    double factor_;
    double best_ = -std::numeric_limits<double>::infinity();
    int since_best_ = 0;
    int since_decay_ = 0;
};

struct HistoryRow {
    int epoch = 0;
    std::string stage;
    double train_loss = 0.0;
    double val_map_micro = 0.0;
    double lr = 0.0;
};

inline void write_history_csv(const std::vector<HistoryRow>& history, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_history_csv: cannot open " + path);
    out << "epoch,stage,train_loss,val_map_micro,lr\n";
    for (const auto& row : history) {
        out << row.epoch << ',' << row.stage << ',' << format_double(row.train_loss) << ','
            << format_double(row.val_map_micro) << ',' << format_double(row.lr) << '\n';
    }
}

// Stacks labels and per-volume predictions and returns the micro mAP over all
// (slice, biomarker) pairs of the given volumes.
inline double validation_map_micro(const std::vector<VolumeRecord>& volumes,
                                   const std::function<Tensor(const VolumeRecord&)>& predict) {
    if (volumes.empty()) throw ValueError("validation_map_micro: empty volume set");
    std::size_t rows = 0;
    for (const auto& v : volumes) rows += v.slice_count();
    const std::size_t b = volumes[0].labels.cols();
    Tensor y(rows, b);
    Tensor yhat(rows, b);
    std::size_t r = 0;
    for (const auto& v : volumes) {
        const Tensor pred = predict(v);
        for (std::size_t s = 0; s < v.slice_count(); ++s, ++r) {
            for (std::size_t c = 0; c < b; ++c) {
                y.at(r, c) = v.labels.at(s, c);
                yhat.at(r, c) = pred.at(s, c);
            }
        }
    }
    return map_micro(y, yhat);
}

namespace detail {

inline void require_nonempty_split(const std::vector<VolumeRecord>& train,
                                   const std::vector<VolumeRecord>& val, const char* who) {
    if (train.empty() || val.empty()) {
        throw ValueError(std::string(who) + ": train and validation splits must be nonempty");
    }
}

}  // namespace detail

struct Stage1Result {
    SliceHeadModel model;
    std::vector<HistoryRow> history;
};

// Stage one: trains the temporary per-slice head on randomly sampled slices,
// minimizing slice-level cross entropy; keeps the model with the best
// validation micro mAP.
inline Stage1Result train_stage1(const std::vector<VolumeRecord>& train,
                                 const std::vector<VolumeRecord>& val, const TrainConfig& cfg) {
    cfg.validate();
    detail::require_nonempty_split(train, val, "train_stage1");
    const std::size_t d = train[0].descriptors.cols();
    const std::size_t b = train[0].labels.cols();

    SliceHeadModel model = init_slice_head(d, b, derive_seed(cfg.seed, 10, 0));
    std::vector<Tensor*> params = model.parameters();
    OptimizerState opt = OptimizerState::for_parameters(params);
    PlateauSchedule schedule(cfg.lr, cfg.patience_epochs, cfg.lr_decay_factor);

    std::vector<std::pair<std::size_t, std::size_t>> slice_index;  // (volume, slice)
    for (std::size_t v = 0; v < train.size(); ++v) {
        for (std::size_t s = 0; s < train[v].slice_count(); ++s) slice_index.push_back({v, s});
    }

    auto predict = [&model](const VolumeRecord& rec) { return head_predict(model, rec.descriptors); };

    Stage1Result result;
    SliceHeadModel best = model;
    Rng shuffle_rng(derive_seed(cfg.seed, 11, 0));
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(slice_index);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < slice_index.size();
             start += static_cast<std::size_t>(cfg.stage1_batch_slices)) {
            const std::size_t end = std::min(
                slice_index.size(), start + static_cast<std::size_t>(cfg.stage1_batch_slices));
            Tape tape;
            NodeId w = tape.leaf(model.w);
            NodeId bias = tape.leaf(model.b);
            NodeId loss{};
            for (std::size_t i = start; i < end; ++i) {
                const auto [vi, si] = slice_index[i];
                NodeId row = tape.leaf(train[vi].descriptors.row_slice(si));
                NodeId prob = tape.sigmoid(tape.add(tape.matmul(row, w), bias));
                NodeId item = tape.bce(prob, train[vi].labels.row_slice(si), cfg.clamp_eps);
                loss = loss.valid() ? tape.add(loss, item) : item;
            }
            // Mean over the slices and biomarkers in the batch.
            loss = tape.scale(loss, 1.0 / static_cast<double>((end - start) * b));
            tape.backward(loss);
            epoch_loss += tape.value(loss)[0];
            ++batches;
            const std::vector<Tensor> grads{tape.grad(w), tape.grad(bias)};
            sgd_momentum_step(params, grads, opt, schedule.lr(), cfg.momentum);
        }
        const double val_map = validation_map_micro(val, predict);
        const double prev_lr = schedule.lr();
        if (schedule.observe(val_map)) best = model;
        result.history.push_back(
            {epoch, "stage1", epoch_loss / static_cast<double>(batches), val_map, prev_lr});
        if (schedule.should_stop()) break;
    }
    result.model = std::move(best);
    return result;
}

struct Stage2Options {
    std::size_t hidden_dim = 64;
    bool symmetric_head = false;
};

struct Stage2Result {
    FusionModel model;
    std::vector<HistoryRow> history;
};

// Stage two: the descriptor source and the stage-1 head are frozen (enforced
// by checksum) and only the fusion network trains, on whole-volume batches.
inline Stage2Result train_stage2(const std::vector<VolumeRecord>& train,
                                 const std::vector<VolumeRecord>& val,
                                 const SliceHeadModel& frozen_head, const TrainConfig& cfg,
                                 const Stage2Options& options = {}) {
    cfg.validate();
    detail::require_nonempty_split(train, val, "train_stage2");
    const std::size_t d = train[0].descriptors.cols();
    const std::size_t b = train[0].labels.cols();
    if (frozen_head.descriptor_dim() != d || frozen_head.biomarker_count() != b) {
        throw ValueError("train_stage2: stage-1 head does not match the dataset dims");
    }

    std::uint64_t freeze_hash = descriptor_checksum(train);
    for (const Tensor* t : frozen_head.parameters()) freeze_hash = checksum(*t, freeze_hash);

    FusionModel model =
        init_fusion({d, options.hidden_dim, b}, derive_seed(cfg.seed, 20, 0),
                    options.symmetric_head);
    std::vector<Tensor*> params = model.parameters();
    OptimizerState opt = OptimizerState::for_parameters(params);
    PlateauSchedule schedule(cfg.lr, cfg.patience_epochs, cfg.lr_decay_factor);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto predict = [&model](const VolumeRecord& rec) { return fuse_predict(model, rec.descriptors); };

    Stage2Result result;
    FusionModel best = model;
    Rng shuffle_rng(derive_seed(cfg.seed, 21, 0));
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_volumes)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_volumes));
            Tape tape;
            // One parameter binding serves every volume in the batch, so
            // gradient reduction over the batch happens on the tape itself in
            // a fixed order.
            FusionParamNodes bound = bind_fusion_params(tape, model);
            NodeId loss{};
            double batch_slices = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const VolumeRecord& rec = train[order[i]];
                NodeId prediction = fusion_prediction(tape, model, bound, rec.descriptors);
                NodeId item = tape.bce(prediction, rec.labels, cfg.clamp_eps);
                loss = loss.valid() ? tape.add(loss, item) : item;
                batch_slices += static_cast<double>(rec.slice_count());
            }
            // Optimized objective: per-slice cross entropy (summed over
            // biomarkers) averaged over every slice in the batch, matching the
            // per-slice objective of stage 1.
            loss = tape.scale(loss, 1.0 / batch_slices);
            tape.backward(loss);
            epoch_loss += tape.value(loss)[0];
            ++batches;
            std::vector<Tensor> grads;
            const std::vector<NodeId> param_nodes = bound.ordered();
            grads.reserve(param_nodes.size());
            for (NodeId id : param_nodes) grads.push_back(tape.grad(id));
            sgd_momentum_step(params, grads, opt, schedule.lr(), cfg.momentum);
        }
        const double val_map = validation_map_micro(val, predict);
        const double prev_lr = schedule.lr();
        if (schedule.observe(val_map)) best = model;
        result.history.push_back(
            {epoch, "stage2", epoch_loss / static_cast<double>(batches), val_map, prev_lr});
        if (schedule.should_stop()) break;
    }

    std::uint64_t after_hash = descriptor_checksum(train);
    for (const Tensor* t : frozen_head.parameters()) after_hash = checksum(*t, after_hash);
    if (after_hash != freeze_hash) {
        throw NumericError("train_stage2: frozen descriptor source changed during training");
    }

    result.model = std::move(best);
    return result;
}

struct MlpOptions {
    std::size_t hidden_dim = 1024;
};

struct MlpResult {
    MlpModel model;
    std::vector<HistoryRow> history;
};

// MLP fusion baseline trained under the stage-2 regime (whole-volume batches,
// same schedule and selection rule).
inline MlpResult train_mlp(const std::vector<VolumeRecord>& train,
                           const std::vector<VolumeRecord>& val, const TrainConfig& cfg,
                           const MlpOptions& options = {}) {
    cfg.validate();
    detail::require_nonempty_split(train, val, "train_mlp");
    const std::size_t s = train[0].slice_count();
    const std::size_t d = train[0].descriptors.cols();
    const std::size_t b = train[0].labels.cols();
    for (const auto& rec : train) {
        if (rec.slice_count() != s) {
            throw ValueError("train_mlp: the MLP needs a uniform slice count, volume " +
                             rec.volume_id + " differs");
        }
    }

    MlpModel model = init_mlp(s, d, b, options.hidden_dim, derive_seed(cfg.seed, 30, 0));
    std::vector<Tensor*> params = model.parameters();
    OptimizerState opt = OptimizerState::for_parameters(params);
    PlateauSchedule schedule(cfg.lr, cfg.patience_epochs, cfg.lr_decay_factor);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto predict = [&model](const VolumeRecord& rec) { return mlp_predict(model, rec.descriptors); };

    MlpResult result;
    MlpModel best = model;
    Rng shuffle_rng(derive_seed(cfg.seed, 31, 0));
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_volumes)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_volumes));
            Tape tape;
            NodeId w1 = tape.leaf(model.w1);
            NodeId b1 = tape.leaf(model.b1);
            NodeId w2 = tape.leaf(model.w2);
            NodeId b2 = tape.leaf(model.b2);
            NodeId loss{};
            for (std::size_t i = start; i < end; ++i) {
                const VolumeRecord& rec = train[order[i]];
                NodeId flat = tape.leaf(rec.descriptors.flatten());
                NodeId hidden = tape.relu(tape.add(tape.matmul(flat, w1), b1));
                NodeId prob = tape.sigmoid(tape.add(tape.matmul(hidden, w2), b2));
                NodeId item = tape.bce(prob, rec.labels.flatten(), cfg.clamp_eps);
                loss = loss.valid() ? tape.add(loss, item) : item;
            }
            // Same objective as stage 2: whole-volume sum, batch mean.
            loss = tape.scale(loss, 1.0 / static_cast<double>(end - start));
            tape.backward(loss);
            epoch_loss += tape.value(loss)[0];
            ++batches;
            const std::vector<Tensor> grads{tape.grad(w1), tape.grad(b1), tape.grad(w2),
                                            tape.grad(b2)};
            sgd_momentum_step(params, grads, opt, schedule.lr(), cfg.momentum);
        }
        const double val_map = validation_map_micro(val, predict);
        const double prev_lr = schedule.lr();
        if (schedule.observe(val_map)) best = model;
        result.history.push_back(
            {epoch, "mlp", epoch_loss / static_cast<double>(batches), val_map, prev_lr});
        if (schedule.should_stop()) break;
    }
    result.model = std::move(best);
    return result;
}

}  // namespace slicefuse
