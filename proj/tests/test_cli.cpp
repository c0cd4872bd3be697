#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "slicefuse/cli.hpp"

using namespace slicefuse;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "slicefuse_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
    std::ostringstream log, err;
    const int code = cli::run(args, log, err);
    if (out) *out = log.str() + err.str();
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<std::string> small_gen_args(const fs::path& out, const std::string& seed) {
    return {"gen-data",      "--out",  out.string(), "--volumes", "12",   "--slices",
            "8",             "--dim",  "6",          "--biomarkers", "2", "--volumes-per-patient",
            "1",             "--seed", seed};
}

}  // namespace

TEST_CASE("gen-data is deterministic and loadable", "[cli]") {
    const auto dir = fresh_dir("gen");
    const auto a = dir / "a.sfd";
    const auto b = dir / "b.sfd";
    REQUIRE(run_cli(small_gen_args(a, "7")) == cli::kExitOk);
    REQUIRE(run_cli(small_gen_args(b, "7")) == cli::kExitOk);
    CHECK(slurp(a) == slurp(b));
    CHECK(read_dataset(a.string()).size() == 12);

    const auto c = dir / "c.sfd";
    REQUIRE(run_cli(small_gen_args(c, "8")) == cli::kExitOk);
    CHECK(slurp(a) != slurp(c));
}

TEST_CASE("invalid flag values exit with the usage code", "[cli]") {
    const auto dir = fresh_dir("badflags");
    std::string output;
    const int code = run_cli({"gen-data", "--out", (dir / "x.sfd").string(), "--p-stay", "1.2"},
                             &output);
    CHECK(code == cli::kExitUsage);
    CHECK_FALSE(fs::exists(dir / "x.sfd"));

    CHECK(run_cli({"train", "--model", "nonsense", "--data", "x", "--out", "y"}) ==
          cli::kExitUsage);
    CHECK(run_cli({"no-such-command"}) == cli::kExitUsage);
}

TEST_CASE("missing dataset is a data error", "[cli]") {
    const auto dir = fresh_dir("missing");
    const int code = run_cli({"train", "--data", (dir / "absent.sfd").string(), "--model", "base",
                              "--out", (dir / "out").string(), "--folds", "1"});
    CHECK(code == cli::kExitData);
}

TEST_CASE("train-eval-predict round trip on a tiny corpus", "[cli]") {
    const auto dir = fresh_dir("pipeline");
    const auto data = dir / "data.sfd";
    REQUIRE(run_cli({"gen-data", "--out", data.string(), "--volumes", "16", "--slices", "10",
                     "--dim", "6", "--biomarkers", "2", "--volumes-per-patient", "1", "--mu",
                     "2.5", "--sigma", "1.0", "--seed", "5"}) == cli::kExitOk);

    const auto run_dir = dir / "run";
    const std::vector<std::string> common{"--data",  data.string(), "--out", run_dir.string(),
                                          "--folds", "1",           "--max-epochs", "6",
                                          "--seed",  "3"};
    auto with_model = [&](const std::string& model) {
        std::vector<std::string> args{"train", "--model", model, "--hidden", "6", "--mlp-hidden",
                                      "16"};
        args.insert(args.end(), common.begin(), common.end());
        return args;
    };

    REQUIRE(run_cli(with_model("fused")) == cli::kExitOk);  // trains stage 1 automatically
    CHECK(fs::exists(run_dir / "fold_0" / "base.ckpt"));
    CHECK(fs::exists(run_dir / "fold_0" / "fused.ckpt"));
    CHECK(fs::exists(run_dir / "fold_0" / "history_base.csv"));
    CHECK(fs::exists(run_dir / "fold_0" / "history_fused.csv"));
    CHECK(fs::exists(run_dir / "folds.txt"));

    const std::string base_bytes = slurp(run_dir / "fold_0" / "base.ckpt");
    REQUIRE(run_cli(with_model("mlp")) == cli::kExitOk);
    REQUIRE(run_cli(with_model("crf")) == cli::kExitOk);
    // The stage-1 checkpoint is reused, not retrained.
    CHECK(slurp(run_dir / "fold_0" / "base.ckpt") == base_bytes);

    std::string eval_out;
    REQUIRE(run_cli({"eval", "--data", data.string(), "--dir", run_dir.string(), "--models",
                     "base,fused,mlp,crf", "--folds", "1", "--seed", "3"},
                    &eval_out) == cli::kExitOk);
    CHECK(eval_out.find("mAP (micro)") != std::string::npos);
    CHECK(fs::exists(run_dir / "table.txt"));
    CHECK(fs::exists(run_dir / "summary.csv"));
    CHECK(fs::exists(run_dir / "fold_0" / "report_crf.json"));

    // CRF AP cells are not comparable.
    const MetricsReport crf_report = read_report((run_dir / "fold_0" / "report_crf.json").string());
    CHECK_FALSE(crf_report.ap_comparable);
    const std::string table = slurp(run_dir / "table.txt");
    CHECK(table.find('-') != std::string::npos);

    // Table regeneration from the stored reports is bit-identical.
    REQUIRE(run_cli({"eval", "--dir", run_dir.string(), "--models", "base,fused,mlp,crf",
                     "--folds", "1", "--from-reports"}) == cli::kExitOk);
    CHECK(slurp(run_dir / "table.txt") == table);

    // predict writes one row per slice.
    const auto pred_csv = dir / "pred.csv";
    REQUIRE(run_cli({"predict", "--data", data.string(), "--checkpoint",
                     (run_dir / "fold_0" / "fused.ckpt").string(), "--model", "fused", "--out",
                     pred_csv.string()}) == cli::kExitOk);
    std::ifstream in(pred_csv);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 1 + 16 * 10);

    // Evaluating a model kind that was never trained is a data error.
    CHECK(run_cli({"eval", "--data", data.string(), "--dir", (dir / "empty").string(),
                   "--models", "fused", "--folds", "1", "--seed", "3"}) == cli::kExitData);
}

TEST_CASE("identical train invocations produce identical artifacts", "[cli]") {
    const auto dir = fresh_dir("determinism");
    const auto data = dir / "data.sfd";
    REQUIRE(run_cli({"gen-data", "--out", data.string(), "--volumes", "10", "--slices", "6",
                     "--dim", "5", "--biomarkers", "2", "--volumes-per-patient", "1", "--seed",
                     "11"}) == cli::kExitOk);

    auto train_into = [&](const std::string& name) {
        const auto out = dir / name;
        REQUIRE(run_cli({"train", "--data", data.string(), "--model", "fused", "--out",
                         out.string(), "--folds", "1", "--max-epochs", "4", "--hidden", "5",
                         "--seed", "9"}) == cli::kExitOk);
        return out;
    };
    const auto a = train_into("runA");
    const auto b = train_into("runB");
    CHECK(slurp(a / "fold_0" / "base.ckpt") == slurp(b / "fold_0" / "base.ckpt"));
    CHECK(slurp(a / "fold_0" / "fused.ckpt") == slurp(b / "fold_0" / "fused.ckpt"));
    CHECK(slurp(a / "fold_0" / "history_fused.csv") == slurp(b / "fold_0" / "history_fused.csv"));
    CHECK(slurp(a / "folds.txt") == slurp(b / "folds.txt"));
}

TEST_CASE("train accepts a config file with overrides", "[cli]") {
    const auto dir = fresh_dir("config");
    const auto data = dir / "data.sfd";
    REQUIRE(run_cli(small_gen_args(data, "2")) == cli::kExitOk);

    const auto cfg_path = dir / "train.cfg";
    std::ofstream(cfg_path) << "lr = 0.02\nmax_epochs = 3\nseed = 4\n";
    REQUIRE(run_cli({"train", "--data", data.string(), "--model", "base", "--out",
                     (dir / "out").string(), "--folds", "1", "--config", cfg_path.string()}) ==
            cli::kExitOk);
    // History reflects the configured epoch cap and learning rate.
    const std::string history = slurp(dir / "out" / "fold_0" / "history_base.csv");
    CHECK(history.find("1,stage1") != std::string::npos);
    CHECK(history.find("0.02") != std::string::npos);
    CHECK(history.find("4,stage1") == std::string::npos);

    const auto bad_cfg = dir / "bad.cfg";
    std::ofstream(bad_cfg) << "unknown_key = 1\n";
    CHECK(run_cli({"train", "--data", data.string(), "--model", "base", "--out",
                   (dir / "out2").string(), "--folds", "1", "--config", bad_cfg.string()}) ==
          cli::kExitUsage);
}

TEST_CASE("help exits cleanly", "[cli]") {
    std::string output;
    CHECK(run_cli({"--help"}, &output) == cli::kExitOk);
    CHECK(output.find("gen-data") != std::string::npos);
}
