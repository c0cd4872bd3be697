#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slicefuse/checkpoint.hpp"
#include "slicefuse/crf.hpp"
#include "slicefuse/data.hpp"
#include "slicefuse/metrics.hpp"
#include "slicefuse/training.hpp"

namespace slicefuse {

enum class ModelKind { base, fused, mlp, crf };

inline std::string model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::base: return "base";
        case ModelKind::fused: return "fused";
        case ModelKind::mlp: return "mlp";
        case ModelKind::crf: return "crf";
    }
    throw ValueError("model_kind_name: unreachable");
}

inline ModelKind parse_model_kind(const std::string& name) {
    if (name == "base") return ModelKind::base;
    if (name == "fused") return ModelKind::fused;
    if (name == "mlp") return ModelKind::mlp;
    if (name == "crf") return ModelKind::crf;
    throw ValueError("unknown model kind '" + name + "' (expected base|fused|mlp|crf)");
}

// ---- canonical report serialization ----
// nlohmann::json objects keep keys sorted, so dumping a report is a canonical
// form: identical reports give identical bytes.

inline nlohmann::json report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    nlohmann::json aps = nlohmann::json::array();
    for (const auto& ap : report.per_biomarker_ap) {
        if (ap.has_value()) {
            aps.push_back(*ap);
        } else {
            aps.push_back(nullptr);
        }
    }
    j["per_biomarker_ap"] = aps;
    j["support"] = report.support;
    j["map_micro"] = report.map_micro;
    j["map_macro"] = report.map_macro;
    j["macro_excluded_classes"] = report.macro_excluded_classes;
    j["emr"] = report.emr;
    j["max_f1"] = report.max_f1;
    j["f1_threshold"] = report.f1_threshold;
    j["precision_at_threshold"] = report.precision_at_threshold;
    j["recall_at_threshold"] = report.recall_at_threshold;
    j["ap_comparable"] = report.ap_comparable;
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport report;
    for (const auto& ap : j.at("per_biomarker_ap")) {
        if (ap.is_null()) {
            report.per_biomarker_ap.push_back(std::nullopt);
        } else {
            report.per_biomarker_ap.push_back(ap.get<double>());
        }
    }
    report.support = j.at("support").get<std::vector<std::size_t>>();
    report.map_micro = j.at("map_micro").get<double>();
    report.map_macro = j.at("map_macro").get<double>();
    report.macro_excluded_classes = j.at("macro_excluded_classes").get<std::size_t>();
    report.emr = j.at("emr").get<double>();
    report.max_f1 = j.at("max_f1").get<double>();
    report.f1_threshold = j.at("f1_threshold").get<double>();
    report.precision_at_threshold = j.at("precision_at_threshold").get<double>();
    report.recall_at_threshold = j.at("recall_at_threshold").get<double>();
    report.ap_comparable = j.at("ap_comparable").get<bool>();
    return report;
}

inline void write_report(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_report: cannot open " + path);
    out << report_to_json(report).dump(2) << '\n';
}

inline MetricsReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_report: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("read_report: " + path + ": " + e.what());
    }
    return report_from_json(j);
}

// ---- cross-validation folds ----

struct FoldSplit {
    std::vector<VolumeRecord> train;
    std::vector<VolumeRecord> val;
    std::vector<std::string> val_patients;
};

// Partitions the training pool by patient into `folds` rotations. One fold is
// a plain 90/10 carve-out; otherwise patients are shuffled and dealt
// round-robin, and fold k validates on group k.
inline std::vector<FoldSplit> make_folds(const std::vector<VolumeRecord>& pool, int folds,
                                         std::uint64_t seed) {
    if (folds < 1) throw ValueError("make_folds: folds must be >= 1");
    if (pool.empty()) throw ValueError("make_folds: empty training pool");

    std::vector<std::string> patients;
    for (const auto& rec : pool) {
        if (std::find(patients.begin(), patients.end(), rec.patient_id) == patients.end()) {
            patients.push_back(rec.patient_id);
        }
    }
    if (folds > 1 && patients.size() < static_cast<std::size_t>(folds)) {
        throw ValueError("make_folds: fewer patients than folds");
    }

    Rng rng(derive_seed(seed, 3, 0));
    rng.shuffle(patients);

    std::vector<std::vector<std::string>> groups;
    if (folds == 1) {
        const std::size_t val_count =
            std::max<std::size_t>(1, static_cast<std::size_t>(
                                         std::floor(0.1 * static_cast<double>(patients.size()) + 0.5)));
        groups.push_back(
            std::vector<std::string>(patients.end() - static_cast<std::ptrdiff_t>(val_count),
                                     patients.end()));
    } else {
        groups.resize(static_cast<std::size_t>(folds));
        for (std::size_t i = 0; i < patients.size(); ++i) {
            groups[i % static_cast<std::size_t>(folds)].push_back(patients[i]);
        }
    }

    std::vector<FoldSplit> out;
    for (const auto& group : groups) {
        FoldSplit fold;
        fold.val_patients = group;
        for (const auto& rec : pool) {
            if (std::find(group.begin(), group.end(), rec.patient_id) != group.end()) {
                fold.val.push_back(rec);
            } else {
                fold.train.push_back(rec);
            }
        }
        if (fold.train.empty() || fold.val.empty()) {
            throw ValueError("make_folds: a fold came out empty; too few patients");
        }
        out.push_back(std::move(fold));
    }
    return out;
}

// ---- prediction dispatch ----

// Everything eval needs for one model kind, loaded from a checkpoint bundle.
struct LoadedModel {
    ModelKind kind = ModelKind::base;
    SliceHeadModel head;   // base, crf
    FusionModel fusion;    // fused
    MlpModel mlp;          // mlp
    CrfModel crf;          // crf

    Tensor predict(const Tensor& descriptors) const {
        switch (kind) {
            case ModelKind::base: return head_predict(head, descriptors);
            case ModelKind::fused: return fuse_predict(fusion, descriptors);
            case ModelKind::mlp: return mlp_predict(mlp, descriptors);
            case ModelKind::crf: return crf_predict(crf, base_logits(head, descriptors));
        }
        throw ValueError("LoadedModel::predict: unreachable");
    }
};

inline LoadedModel load_model(const std::string& checkpoint_path, ModelKind kind) {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    LoadedModel model;
    model.kind = kind;
    auto need = [&](const char* tag) -> const CheckpointSection& {
        const auto* section = ckpt.find(tag);
        if (!section) {
            throw DataError("checkpoint " + checkpoint_path + " lacks a '" + tag + "' section");
        }
        return *section;
    };
    switch (kind) {
        case ModelKind::base: model.head = decode_slice_head(need(kTagSliceHead)); break;
        case ModelKind::fused: model.fusion = decode_fusion(need(kTagFusion)); break;
        case ModelKind::mlp: model.mlp = decode_mlp(need(kTagMlp)); break;
        case ModelKind::crf:
            model.head = decode_slice_head(need(kTagSliceHead));
            model.crf = decode_crf(need(kTagCrf));
            break;
    }
    return model;
}

// Stacked metrics report over a volume set.
inline MetricsReport evaluate_model(const LoadedModel& model,
                                    const std::vector<VolumeRecord>& volumes,
                                    EmrPolicy policy = EmrPolicy::strict) {
    if (volumes.empty()) throw ValueError("evaluate_model: no volumes");
    std::size_t rows = 0;
    for (const auto& v : volumes) rows += v.slice_count();
    const std::size_t b = volumes[0].labels.cols();
    Tensor y(rows, b);
    Tensor yhat(rows, b);
    std::size_t r = 0;
    for (const auto& v : volumes) {
        const Tensor pred = model.predict(v.descriptors);
        for (std::size_t s = 0; s < v.slice_count(); ++s, ++r) {
            for (std::size_t c = 0; c < b; ++c) {
                y.at(r, c) = v.labels.at(s, c);
                yhat.at(r, c) = pred.at(s, c);
            }
        }
    }
    return metrics_report(y, yhat, policy);
}

// ---- fold aggregation and the comparison table ----

struct AggregateCell {
    double mean = 0.0;
    double stddev = 0.0;  // population
    bool comparable = true;
};

inline AggregateCell aggregate(const std::vector<double>& values, bool comparable = true) {
    AggregateCell cell;
    cell.comparable = comparable;
    if (values.empty()) return cell;
    double sum = 0.0;
    for (double v : values) sum += v;
    cell.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - cell.mean) * (v - cell.mean);
    cell.stddev = std::sqrt(sq / static_cast<double>(values.size()));
    return cell;
}

inline std::string format_cell(const AggregateCell& cell) {
    if (!cell.comparable) return "-";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f+-%.3f", cell.mean, cell.stddev);
    return buf;
}

// Renders the per-fold reports of several models as an aligned text table:
// one row per biomarker AP, then micro/macro mAP and the starred metrics.
// AP rows of binary-output models (CRF) are shown as "-".
inline std::string render_comparison_table(
    const std::vector<std::string>& model_names,
    const std::vector<std::vector<MetricsReport>>& per_model_reports) {
    if (model_names.empty() || model_names.size() != per_model_reports.size()) {
        throw ValueError("render_comparison_table: model/report mismatch");
    }
    std::size_t biomarkers = 0;
    for (const auto& reports : per_model_reports) {
        if (reports.empty()) throw ValueError("render_comparison_table: a model has no reports");
        biomarkers = reports[0].per_biomarker_ap.size();
    }

    std::vector<std::string> row_names;
    for (std::size_t b = 0; b < biomarkers; ++b) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "bm%02zu", b);
        const auto& support = per_model_reports[0][0].support;
        row_names.push_back(std::string(buf) + " (" + std::to_string(support[b]) + ")");
    }
    row_names.push_back("mAP (micro)");
    row_names.push_back("mAP (macro)");
    row_names.push_back("EMR*");
    row_names.push_back("F1*");

    std::vector<std::vector<std::string>> cells(row_names.size());
    for (std::size_t m = 0; m < per_model_reports.size(); ++m) {
        const auto& reports = per_model_reports[m];
        const bool comparable = reports[0].ap_comparable;
        for (std::size_t b = 0; b < biomarkers; ++b) {
            std::vector<double> values;
            bool defined = comparable;
            for (const auto& rep : reports) {
                if (rep.per_biomarker_ap[b].has_value()) {
                    values.push_back(*rep.per_biomarker_ap[b]);
                } else {
                    defined = false;
                }
            }
            cells[b].push_back(defined ? format_cell(aggregate(values)) : "-");
        }
        auto push_metric = [&](std::size_t row, auto getter, bool needs_ap) {
            std::vector<double> values;
            for (const auto& rep : reports) values.push_back(getter(rep));
            cells[row].push_back(format_cell(aggregate(values, !needs_ap || comparable)));
        };
        push_metric(biomarkers + 0, [](const MetricsReport& r) { return r.map_micro; }, true);
        push_metric(biomarkers + 1, [](const MetricsReport& r) { return r.map_macro; }, true);
        push_metric(biomarkers + 2, [](const MetricsReport& r) { return r.emr; }, false);
        push_metric(biomarkers + 3, [](const MetricsReport& r) { return r.max_f1; }, false);
    }

    std::size_t name_width = std::string("Biomarker").size();
    for (const auto& n : row_names) name_width = std::max(name_width, n.size());
    std::size_t cell_width = 0;
    for (const auto& n : model_names) cell_width = std::max(cell_width, n.size());
    for (const auto& row : cells) {
        for (const auto& c : row) cell_width = std::max(cell_width, c.size());
    }

    auto pad = [](const std::string& s, std::size_t width) {
        return s + std::string(width - s.size(), ' ');
    };

    std::string out = pad("Biomarker", name_width);
    for (const auto& n : model_names) out += "  " + pad(n, cell_width);
    out += '\n';
    out += std::string(name_width + model_names.size() * (cell_width + 2), '-');
    out += '\n';
    for (std::size_t r = 0; r < row_names.size(); ++r) {
        out += pad(row_names[r], name_width);
        for (const auto& c : cells[r]) out += "  " + pad(c, cell_width);
        out += '\n';
    }
    out += "(*) threshold taken at the max F1 score, per fold\n";
    return out;
}

}  // namespace slicefuse
