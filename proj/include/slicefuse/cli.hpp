#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slicefuse/dataset_io.hpp"
#include "slicefuse/experiment.hpp"

namespace slicefuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace fs = std::filesystem;

struct GenDataArgs {
    std::string out;
    SyntheticConfig cfg;
};

inline void run_gen_data(const GenDataArgs& args, std::ostream& log) {
    const auto records = generate_synthetic(args.cfg);
    write_dataset(records, args.out);

    const std::size_t b = records[0].labels.cols();
    std::vector<double> rate(b, 0.0);
    double agree = 0.0, pairs = 0.0, slices = 0.0;
    for (const auto& rec : records) {
        for (std::size_t s = 0; s < rec.slice_count(); ++s) {
            slices += 1.0;
            for (std::size_t c = 0; c < b; ++c) {
                rate[c] += rec.labels.at(s, c);
                if (s > 0) {
                    pairs += 1.0;
                    if (rec.labels.at(s, c) == rec.labels.at(s - 1, c)) agree += 1.0;
                }
            }
        }
    }
    log << "wrote " << records.size() << " volumes (" << static_cast<std::size_t>(slices)
        << " slices) to " << args.out << "\n";
    log << "  manifest: " << manifest_path(args.out) << "\n";
    log << "  biomarkers: " << b << ", descriptor dim: " << records[0].descriptors.cols() << "\n";
    log << "  positive rate per biomarker:";
    for (std::size_t c = 0; c < b; ++c) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), " %.3f", rate[c] / slices);
        log << buf;
    }
    log << "\n";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", agree / pairs);
    log << "  adjacent-slice agreement: " << buf << "\n";
}

struct TrainArgs {
    std::string data;
    std::string model = "fused";
    std::string out_dir;
    int folds = 10;
    double test_fraction = 0.1;
    std::size_t hidden = 64;
    std::size_t mlp_hidden = 1024;
    bool symmetric_head = false;
    TrainConfig cfg;
};

namespace detail {

inline SliceHeadModel ensure_stage1(const FoldSplit& fold, const fs::path& fold_dir,
                                    const TrainConfig& cfg, std::ostream& log) {
    const fs::path base_path = fold_dir / "base.ckpt";
    if (fs::exists(base_path)) {
        log << "  reusing stage-1 checkpoint " << base_path.string() << "\n";
        const Checkpoint ckpt = load_checkpoint(base_path.string());
        const auto* section = ckpt.find(kTagSliceHead);
        if (!section) throw DataError("checkpoint " + base_path.string() + " lacks slice_head");
        return decode_slice_head(*section);
    }
    log << "  training stage 1 (slice head)\n";
    Stage1Result stage1 = train_stage1(fold.train, fold.val, cfg);
    save_checkpoint({{encode_slice_head(stage1.model)}}, base_path.string());
    write_history_csv(stage1.history, (fold_dir / "history_base.csv").string());
    return std::move(stage1.model);
}

}  // namespace detail

inline void run_train(const TrainArgs& args, std::ostream& log) {
    const ModelKind kind = parse_model_kind(args.model);
    const auto records = read_dataset(args.data);
    const DatasetSplit split =
        split_patients(records, {1.0 - args.test_fraction, 0.0, args.test_fraction}, args.cfg.seed);
    const auto folds = make_folds(split.train, args.folds, args.cfg.seed);

    fs::create_directories(args.out_dir);
    {
        std::ofstream folds_log(fs::path(args.out_dir) / "folds.txt", std::ios::trunc);
        folds_log << "# patient-disjoint fold assignments\n";
        folds_log << "test:";
        std::vector<std::string> test_patients;
        for (const auto& rec : split.test) {
            if (std::find(test_patients.begin(), test_patients.end(), rec.patient_id) ==
                test_patients.end()) {
                test_patients.push_back(rec.patient_id);
            }
        }
        for (const auto& p : test_patients) folds_log << ' ' << p;
        folds_log << '\n';
        for (std::size_t k = 0; k < folds.size(); ++k) {
            folds_log << "fold_" << k << " val:";
            for (const auto& p : folds[k].val_patients) folds_log << ' ' << p;
            folds_log << '\n';
        }
    }

    for (std::size_t k = 0; k < folds.size(); ++k) {
        const fs::path fold_dir = fs::path(args.out_dir) / ("fold_" + std::to_string(k));
        fs::create_directories(fold_dir);
        log << "fold " << k << ": " << folds[k].train.size() << " train / "
            << folds[k].val.size() << " val volumes\n";

        const SliceHeadModel head = detail::ensure_stage1(folds[k], fold_dir, args.cfg, log);

        switch (kind) {
            case ModelKind::base:
                break;
            case ModelKind::fused: {
                log << "  training stage 2 (fusion network)\n";
                Stage2Options options;
                options.hidden_dim = args.hidden;
                options.symmetric_head = args.symmetric_head;
                Stage2Result stage2 = train_stage2(folds[k].train, folds[k].val, head, args.cfg,
                                                   options);
                save_checkpoint({{encode_fusion(stage2.model)}},
                                (fold_dir / "fused.ckpt").string());
                write_history_csv(stage2.history, (fold_dir / "history_fused.csv").string());
                break;
            }
            case ModelKind::mlp: {
                log << "  training MLP baseline\n";
                MlpOptions options;
                options.hidden_dim = args.mlp_hidden;
                MlpResult mlp = train_mlp(folds[k].train, folds[k].val, args.cfg, options);
                save_checkpoint({{encode_mlp(mlp.model)}}, (fold_dir / "mlp.ckpt").string());
                write_history_csv(mlp.history, (fold_dir / "history_mlp.csv").string());
                break;
            }
            case ModelKind::crf: {
                log << "  fitting CRF baseline on validation exact-match ratio\n";
                std::uint64_t freeze = 0xcbf29ce484222325ull;
                for (const Tensor* t : head.parameters()) freeze = checksum(*t, freeze);
                std::vector<Tensor> logits, labels;
                for (const auto& rec : folds[k].val) {
                    logits.push_back(base_logits(head, rec.descriptors));
                    labels.push_back(rec.labels);
                }
                const CrfModel crf = fit_crf(logits, labels, CrfFitGrid{});
                std::uint64_t after = 0xcbf29ce484222325ull;
                for (const Tensor* t : head.parameters()) after = checksum(*t, after);
                if (after != freeze) {
                    throw NumericError("crf fit mutated the frozen slice head");
                }
                save_checkpoint({{encode_slice_head(head), encode_crf(crf)}},
                                (fold_dir / "crf.ckpt").string());
                log << "  selected cooc scale "
                    << (crf.biomarker_count() > 1 ? crf.cooc.at(0, 1) : 0.0) << ", smooth scale "
                    << crf.smooth[0] << "\n";
                break;
            }
        }
    }
    log << "checkpoints written under " << args.out_dir << "\n";
}

struct EvalArgs {
    std::string data;
    std::string dir;
    std::vector<std::string> models{"base", "fused"};
    int folds = 10;
    double test_fraction = 0.1;
    std::uint64_t seed = 0;
    bool emr_misses_only = false;
    bool from_reports = false;
};

inline std::string checkpoint_file_for(ModelKind kind) {
    return model_kind_name(kind) + ".ckpt";
}

inline void run_eval(const EvalArgs& args, std::ostream& log) {
    std::vector<std::vector<MetricsReport>> per_model_reports;
    const EmrPolicy policy = args.emr_misses_only ? EmrPolicy::no_missed : EmrPolicy::strict;

    std::vector<VolumeRecord> test;
    if (!args.from_reports) {
        const auto records = read_dataset(args.data);
        DatasetSplit split = split_patients(
            records, {1.0 - args.test_fraction, 0.0, args.test_fraction}, args.seed);
        test = std::move(split.test);
        if (test.empty()) throw ValueError("eval: the held-out test split is empty");
    }

    for (const auto& name : args.models) {
        const ModelKind kind = parse_model_kind(name);
        std::vector<MetricsReport> reports;
        for (int k = 0; k < args.folds; ++k) {
            const fs::path fold_dir = fs::path(args.dir) / ("fold_" + std::to_string(k));
            const fs::path report_path = fold_dir / ("report_" + name + ".json");
            if (args.from_reports) {
                reports.push_back(read_report(report_path.string()));
            } else {
                const LoadedModel model =
                    load_model((fold_dir / checkpoint_file_for(kind)).string(), kind);
                MetricsReport report = evaluate_model(model, test, policy);
                write_report(report, report_path.string());
                reports.push_back(std::move(report));
            }
        }
        per_model_reports.push_back(std::move(reports));
    }

    const std::string table = render_comparison_table(args.models, per_model_reports);
    {
        std::ofstream out(fs::path(args.dir) / "table.txt", std::ios::trunc);
        if (!out) throw IoError("eval: cannot write table.txt");
        out << table;
    }
    {
        std::ofstream out(fs::path(args.dir) / "summary.csv", std::ios::trunc);
        if (!out) throw IoError("eval: cannot write summary.csv");
        out << "model,metric,mean,stddev\n";
        for (std::size_t m = 0; m < args.models.size(); ++m) {
            auto emit = [&](const std::string& metric, auto getter, bool needs_ap) {
                std::vector<double> values;
                for (const auto& rep : per_model_reports[m]) values.push_back(getter(rep));
                const AggregateCell cell =
                    aggregate(values, !needs_ap || per_model_reports[m][0].ap_comparable);
                out << args.models[m] << ',' << metric << ',';
                if (cell.comparable) {
                    out << format_double(cell.mean) << ',' << format_double(cell.stddev);
                } else {
                    out << "-,-";
                }
                out << '\n';
            };
            emit("map_micro", [](const MetricsReport& r) { return r.map_micro; }, true);
            emit("map_macro", [](const MetricsReport& r) { return r.map_macro; }, true);
            emit("emr", [](const MetricsReport& r) { return r.emr; }, false);
            emit("max_f1", [](const MetricsReport& r) { return r.max_f1; }, false);
        }
    }
    log << table;
}

struct PredictArgs {
    std::string data;
    std::string checkpoint;
    std::string model = "fused";
    std::string out;
};

inline void run_predict(const PredictArgs& args, std::ostream& log) {
    const ModelKind kind = parse_model_kind(args.model);
    const auto records = read_dataset(args.data);
    const LoadedModel model = load_model(args.checkpoint, kind);

    std::ofstream out(args.out, std::ios::trunc);
    if (!out) throw IoError("predict: cannot open " + args.out);
    const std::size_t b = records[0].labels.cols();
    out << "volume_id,slice";
    for (std::size_t c = 0; c < b; ++c) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), ",bm%02zu", c);
        out << buf;
    }
    out << '\n';
    for (const auto& rec : records) {
        const Tensor pred = model.predict(rec.descriptors);
        for (std::size_t s = 0; s < rec.slice_count(); ++s) {
            out << rec.volume_id << ',' << s;
            for (std::size_t c = 0; c < b; ++c) out << ',' << format_double(pred.at(s, c));
            out << '\n';
        }
    }
    log << "wrote per-slice probabilities for " << records.size() << " volumes to " << args.out
        << "\n";
}

// Builds the CLI and runs one invocation. Returns a process exit code:
// 0 success, 1 usage, 2 data error, 3 numeric failure.
inline int run(const std::vector<std::string>& args, std::ostream& log = std::cout,
               std::ostream& err = std::cerr) {
    CLI::App app{"fused multi-label prediction over ordered slice sequences"};
    app.require_subcommand(1);

    GenDataArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset container");
    gen_cmd->add_option("--out", gen.out, "output dataset path")->required();
    gen_cmd->add_option("--volumes", gen.cfg.volumes, "number of volumes");
    gen_cmd->add_option("--slices", gen.cfg.slices, "slices per volume");
    gen_cmd->add_option("--dim", gen.cfg.descriptor_dim, "descriptor dimension");
    gen_cmd->add_option("--biomarkers", gen.cfg.biomarkers, "biomarker count");
    gen_cmd->add_option("--volumes-per-patient", gen.cfg.volumes_per_patient,
                        "volumes attributed to each patient");
    gen_cmd->add_option("--p-stay", gen.cfg.p_stay, "label coherence along slices, 0.5 = none")
        ->check(CLI::Range(0.0, 1.0));
    gen_cmd->add_option("--pi", gen.cfg.positive_rate, "stationary positive rate")
        ->check(CLI::Range(0.0, 1.0));
    gen_cmd->add_option("--mu", gen.cfg.mean_separation, "class-conditional mean separation");
    gen_cmd->add_option("--sigma", gen.cfg.noise_sigma, "descriptor noise sigma");
    gen_cmd->add_option("--label-noise", gen.cfg.label_noise, "label flip rate")
        ->check(CLI::Range(0.0, 1.0));
    gen_cmd->add_option("--seed", gen.cfg.seed, "generation seed");
    gen_cmd->add_flag("--healthy-column", gen.cfg.healthy_column,
                      "append a healthy biomarker as the complement of all others");

    TrainArgs train;
    std::string train_config_path;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model per cross-validation fold");
    train_cmd->add_option("--data", train.data, "dataset container path")->required();
    train_cmd->add_option("--model", train.model, "base|fused|mlp|crf")->required();
    train_cmd->add_option("--out", train.out_dir, "output directory")->required();
    train_cmd->add_option("--folds", train.folds, "cross-validation folds")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--test-fraction", train.test_fraction, "held-out test fraction")
        ->check(CLI::Range(0.0, 0.9));
    train_cmd->add_option("--hidden", train.hidden, "LSTM hidden state size");
    train_cmd->add_option("--mlp-hidden", train.mlp_hidden, "MLP hidden layer width");
    train_cmd->add_flag("--symmetric-head", train.symmetric_head,
                        "tie the head weights over both directions");
    train_cmd->add_option("--config", train_config_path, "TrainConfig key=value file");
    train_cmd->add_option("--lr", train.cfg.lr, "base learning rate");
    train_cmd->add_option("--max-epochs", train.cfg.max_epochs, "epoch cap");
    train_cmd->add_option("--seed", train.cfg.seed, "training and split seed");

    EvalArgs eval;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "evaluate trained checkpoints on the held-out test split");
    eval_cmd->add_option("--data", eval.data, "dataset container path");
    eval_cmd->add_option("--dir", eval.dir, "directory produced by train")->required();
    eval_cmd->add_option("--models", eval.models, "model kinds to evaluate")->delimiter(',');
    eval_cmd->add_option("--folds", eval.folds, "fold count used at training time")
        ->check(CLI::PositiveNumber);
    eval_cmd->add_option("--test-fraction", eval.test_fraction, "held-out test fraction")
        ->check(CLI::Range(0.0, 0.9));
    eval_cmd->add_option("--seed", eval.seed, "split seed used at training time");
    eval_cmd->add_flag("--emr-misses-only", eval.emr_misses_only,
                       "EMR forgives false positives (alternative reading)");
    eval_cmd->add_flag("--from-reports", eval.from_reports,
                       "rebuild the table from stored per-fold reports");

    PredictArgs predict;
    CLI::App* predict_cmd =
        app.add_subcommand("predict", "emit per-slice probabilities for every volume");
    predict_cmd->add_option("--data", predict.data, "dataset container path")->required();
    predict_cmd->add_option("--checkpoint", predict.checkpoint, "checkpoint path")->required();
    predict_cmd->add_option("--model", predict.model, "base|fused|mlp|crf");
    predict_cmd->add_option("--out", predict.out, "output CSV path")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            // --help and friends.
            log << app.help();
            return kExitOk;
        }
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) {
            run_gen_data(gen, log);
        } else if (train_cmd->parsed()) {
            if (!train_config_path.empty()) {
                const TrainConfig from_file = load_train_config(train_config_path);
                // Flags given on the command line override the file.
                TrainConfig merged = from_file;
                if (train_cmd->count("--lr")) merged.lr = train.cfg.lr;
                if (train_cmd->count("--max-epochs")) merged.max_epochs = train.cfg.max_epochs;
                if (train_cmd->count("--seed")) merged.seed = train.cfg.seed;
                train.cfg = merged;
            }
            train.cfg.validate();
            run_train(train, log);
        } else if (eval_cmd->parsed()) {
            if (!eval.from_reports && eval.data.empty()) {
                throw ValueError("eval: --data is required unless --from-reports is given");
            }
            run_eval(eval, log);
        } else if (predict_cmd->parsed()) {
            run_predict(predict, log);
        }
    } catch (const ValueError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitOk;
}

}  // namespace slicefuse::cli
