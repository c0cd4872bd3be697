#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "slicefuse/data.hpp"
#include "slicefuse/dataset_io.hpp"

using namespace slicefuse;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "slicefuse_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("p_stay of one freezes every biomarker along the volume", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 8;
    cfg.slices = 20;
    cfg.descriptor_dim = 6;
    cfg.biomarkers = 3;
    cfg.p_stay = 1.0;
    cfg.seed = 1;
    for (const auto& rec : generate_synthetic(cfg)) {
        for (std::size_t b = 0; b < 3; ++b) {
            for (std::size_t s = 1; s < 20; ++s) {
                REQUIRE(rec.labels.at(s, b) == rec.labels.at(0, b));
            }
        }
    }
}

TEST_CASE("p_stay of one half decorrelates adjacent slices", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 250;
    cfg.slices = 49;
    cfg.descriptor_dim = 4;
    cfg.biomarkers = 2;
    cfg.p_stay = 0.5;
    cfg.positive_rate = 0.4;
    cfg.seed = 2;
    const auto records = generate_synthetic(cfg);

    double n = 0.0, sum = 0.0, sum_sq = 0.0, cross = 0.0, pairs = 0.0;
    for (const auto& rec : records) {
        for (std::size_t b = 0; b < 2; ++b) {
            for (std::size_t s = 0; s < cfg.slices; ++s) {
                const double x = rec.labels.at(s, b);
                sum += x;
                sum_sq += x * x;
                n += 1.0;
                if (s > 0) {
                    cross += x * rec.labels.at(s - 1, b);
                    pairs += 1.0;
                }
            }
        }
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    const double cov = cross / pairs - mean * mean;
    const double autocorr = cov / var;
    CHECK_THAT(autocorr, Catch::Matchers::WithinAbs(0.0, 0.03));
    CHECK_THAT(mean, Catch::Matchers::WithinAbs(cfg.positive_rate, 0.02));
}

TEST_CASE("strong coherence yields the configured autocorrelation and rate", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 250;
    cfg.slices = 49;
    cfg.descriptor_dim = 4;
    cfg.biomarkers = 2;
    cfg.p_stay = 0.9;
    cfg.positive_rate = 0.3;
    cfg.seed = 3;
    const auto records = generate_synthetic(cfg);
    double n = 0.0, sum = 0.0, cross = 0.0, pairs = 0.0;
    for (const auto& rec : records) {
        for (std::size_t b = 0; b < 2; ++b) {
            for (std::size_t s = 0; s < cfg.slices; ++s) {
                sum += rec.labels.at(s, b);
                n += 1.0;
                if (s > 0) {
                    cross += rec.labels.at(s, b) * rec.labels.at(s - 1, b);
                    pairs += 1.0;
                }
            }
        }
    }
    const double mean = sum / n;
    const double var = mean - mean * mean;
    const double autocorr = (cross / pairs - mean * mean) / var;
    CHECK_THAT(mean, Catch::Matchers::WithinAbs(cfg.positive_rate, 0.02));
    CHECK_THAT(autocorr, Catch::Matchers::WithinAbs(2.0 * cfg.p_stay - 1.0, 0.03));
}

TEST_CASE("generation is deterministic and volume-indexed", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 4;
    cfg.slices = 8;
    cfg.descriptor_dim = 5;
    cfg.biomarkers = 2;
    cfg.seed = 77;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].descriptors == b[i].descriptors);
        CHECK(a[i].labels == b[i].labels);
        CHECK(a[i].volume_id == b[i].volume_id);
    }
    cfg.seed = 78;
    const auto c = generate_synthetic(cfg);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i].labels == c[i].labels) || !(a[i].descriptors == c[i].descriptors)) {
            any_diff = true;
        }
    }
    CHECK(any_diff);
}

TEST_CASE("healthy column is the complement of all other biomarkers", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 5;
    cfg.slices = 12;
    cfg.descriptor_dim = 8;
    cfg.biomarkers = 3;
    cfg.healthy_column = true;
    cfg.seed = 5;
    for (const auto& rec : generate_synthetic(cfg)) {
        REQUIRE(rec.labels.cols() == 4);
        for (std::size_t s = 0; s < 12; ++s) {
            bool any = false;
            for (std::size_t b = 0; b < 3; ++b) any = any || rec.labels.at(s, b) == 1.0;
            REQUIRE(rec.labels.at(s, 3) == (any ? 0.0 : 1.0));
        }
    }
}

TEST_CASE("invalid configs are rejected", "[data]") {
    SyntheticConfig cfg;
    cfg.p_stay = 1.2;
    CHECK_THROWS_AS(generate_synthetic(cfg), ValueError);
    cfg.p_stay = 0.9;
    cfg.noise_sigma = 0.0;
    CHECK_THROWS_AS(generate_synthetic(cfg), ValueError);
    cfg.noise_sigma = 1.0;
    cfg.descriptor_dim = 2;
    cfg.biomarkers = 11;
    CHECK_THROWS_AS(generate_synthetic(cfg), ValueError);
}

TEST_CASE("patients never straddle a split", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 30;
    cfg.slices = 4;
    cfg.descriptor_dim = 4;
    cfg.biomarkers = 2;
    cfg.volumes_per_patient = 3;
    cfg.seed = 11;
    const auto records = generate_synthetic(cfg);
    const DatasetSplit split = split_patients(records, {0.6, 0.2, 0.2}, 9);

    std::set<std::string> train_p, val_p, test_p;
    for (const auto& r : split.train) train_p.insert(r.patient_id);
    for (const auto& r : split.val) val_p.insert(r.patient_id);
    for (const auto& r : split.test) test_p.insert(r.patient_id);
    for (const auto& p : train_p) {
        CHECK_FALSE(val_p.count(p));
        CHECK_FALSE(test_p.count(p));
    }
    for (const auto& p : val_p) CHECK_FALSE(test_p.count(p));
    CHECK(split.train.size() + split.val.size() + split.test.size() == records.size());

    // A patient with three volumes keeps all three together.
    std::map<std::string, int> counts;
    for (const auto& r : split.train) counts[r.patient_id]++;
    for (const auto& [patient, count] : counts) CHECK(count == 3);
}

TEST_CASE("degenerate fractions and deterministic sizes", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 100;
    cfg.slices = 2;
    cfg.descriptor_dim = 4;
    cfg.biomarkers = 2;
    cfg.volumes_per_patient = 1;
    cfg.seed = 13;
    const auto records = generate_synthetic(cfg);

    const DatasetSplit all_train = split_patients(records, {1.0, 0.0, 0.0}, 1);
    CHECK(all_train.train.size() == 100);
    CHECK(all_train.val.empty());
    CHECK(all_train.test.empty());

    const DatasetSplit split = split_patients(records, {0.8, 0.1, 0.1}, 5);
    CHECK(split.train.size() == 80);
    CHECK(split.val.size() == 10);
    CHECK(split.test.size() == 10);

    const DatasetSplit again = split_patients(records, {0.8, 0.1, 0.1}, 5);
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        REQUIRE(split.train[i].volume_id == again.train[i].volume_id);
    }

    CHECK_THROWS_AS(split_patients(records, {0.5, 0.4, 0.2}, 1), ValueError);
    const std::vector<VolumeRecord> two(records.begin(), records.begin() + 2);
    CHECK_THROWS_AS(split_patients(two, {0.4, 0.3, 0.3}, 1), ValueError);
}

TEST_CASE("dataset round-trip is bitwise lossless", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 6;
    cfg.slices = 7;
    cfg.descriptor_dim = 5;
    cfg.biomarkers = 3;
    cfg.seed = 21;
    const auto records = generate_synthetic(cfg);
    const auto path = temp_file("roundtrip.sfd");
    write_dataset(records, path.string());
    const auto loaded = read_dataset(path.string());
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].volume_id == records[i].volume_id);
        CHECK(loaded[i].patient_id == records[i].patient_id);
        CHECK(loaded[i].descriptors == records[i].descriptors);
        CHECK(loaded[i].labels == records[i].labels);
    }
    // Writing the same records twice gives identical bytes.
    const auto path2 = temp_file("roundtrip2.sfd");
    write_dataset(loaded, path2.string());
    CHECK(slurp(path) == slurp(path2));
    // Manifest exists and lists every volume.
    const std::string manifest = slurp(manifest_path(path.string()));
    for (const auto& rec : records) {
        CHECK(manifest.find(rec.volume_id) != std::string::npos);
    }
}

TEST_CASE("corrupted containers raise specific errors", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 2;
    cfg.slices = 3;
    cfg.descriptor_dim = 4;
    cfg.biomarkers = 2;
    cfg.seed = 31;
    const auto records = generate_synthetic(cfg);
    const auto path = temp_file("corrupt.sfd");
    write_dataset(records, path.string());
    std::string bytes = slurp(path);

    SECTION("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        const auto p = temp_file("bad_magic.sfd");
        std::ofstream(p, std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_AS(read_dataset(p.string()), DataError);
    }
    SECTION("truncation") {
        std::string bad = bytes.substr(0, bytes.size() - 5);
        const auto p = temp_file("truncated.sfd");
        std::ofstream(p, std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_AS(read_dataset(p.string()), DataError);
    }
    SECTION("row count inconsistency names the volume") {
        // Patch the first volume's label row count (second u32 after the ids).
        std::string bad = bytes;
        const std::size_t header = 8 + 4 + 4 + 4 * 4;
        // volume id: 4-byte length + "vol00000" (8 bytes); patient likewise.
        const std::size_t vol_id = header + 4 + 8 + 4 + 8;
        const std::size_t s_labels_at = vol_id + 4;
        bad[s_labels_at] = 2;  // was 3
        const auto p = temp_file("badrows.sfd");
        std::ofstream(p, std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
        try {
            read_dataset(p.string());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("vol00000") != std::string::npos);
        }
    }
    SECTION("missing file is an IoError") {
        CHECK_THROWS_AS(read_dataset(temp_file("nope.sfd").string()), IoError);
    }
}

TEST_CASE("descriptor checksum tracks content", "[data]") {
    SyntheticConfig cfg;
    cfg.volumes = 3;
    cfg.slices = 4;
    cfg.descriptor_dim = 4;
    cfg.biomarkers = 2;
    cfg.seed = 41;
    auto records = generate_synthetic(cfg);
    const std::uint64_t before = descriptor_checksum(records);
    CHECK(before == descriptor_checksum(records));
    records[1].descriptors.at(0, 0) += 1.0;
    CHECK(before != descriptor_checksum(records));
}
