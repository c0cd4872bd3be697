#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "slicefuse/rng.hpp"
#include "slicefuse/tensor.hpp"

namespace slicefuse {

// One annotated volume: an ordered stack of slice descriptors plus the binary
// per-slice biomarker labels. Row s of both matrices is slice s in
// acquisition order.
struct VolumeRecord {
    std::string volume_id;
    std::string patient_id;
    Tensor descriptors;  // SxD
    Tensor labels;       // SxB, entries in {0,1}

    std::size_t slice_count() const { return descriptors.rows(); }

    void validate() const {
        if (patient_id.empty()) throw ValueError("VolumeRecord: patient id must be nonempty");
        if (descriptors.rows() != labels.rows()) {
            throw ValueError("VolumeRecord " + volume_id + ": descriptor rows " +
                             std::to_string(descriptors.rows()) + " != label rows " +
                             std::to_string(labels.rows()));
        }
        for (double v : labels.values()) {
            if (v != 0.0 && v != 1.0) {
                throw ValueError("VolumeRecord " + volume_id + ": labels must be 0 or 1");
            }
        }
    }
};

// Synthetic corpus with controllable inter-slice coherence. Per biomarker the
// labels follow a two-state Markov chain parameterized by its stationary
// positive rate pi and an adjacent-slice autocorrelation of 2*p_stay - 1:
// p_stay = 1 freezes each biomarker along the volume, p_stay = 0.5 makes
// slices independent. Descriptors place mean mu on one fixed axis per present
// biomarker plus isotropic Gaussian noise sigma.
struct SyntheticConfig {
    std::size_t volumes = 60;
    std::size_t slices = 49;
    std::size_t descriptor_dim = 64;
    std::size_t biomarkers = 11;
    std::size_t volumes_per_patient = 2;
    double p_stay = 0.9;
    double positive_rate = 0.3;
    double mean_separation = 2.0;
    double noise_sigma = 1.0;
    double label_noise = 0.0;
    std::uint64_t seed = 0;
    bool healthy_column = false;  // appends a complement-of-all-others biomarker

    void validate() const {
        if (volumes == 0 || slices == 0 || descriptor_dim == 0 || biomarkers == 0) {
            throw ValueError("SyntheticConfig: counts must be positive");
        }
        if (volumes_per_patient == 0) {
            throw ValueError("SyntheticConfig: volumes_per_patient must be positive");
        }
        if (p_stay < 0.0 || p_stay > 1.0) throw ValueError("SyntheticConfig: p_stay outside [0,1]");
        if (positive_rate < 0.0 || positive_rate > 1.0) {
            throw ValueError("SyntheticConfig: positive_rate outside [0,1]");
        }
        if (label_noise < 0.0 || label_noise > 1.0) {
            throw ValueError("SyntheticConfig: label_noise outside [0,1]");
        }
        if (!(noise_sigma > 0.0)) throw ValueError("SyntheticConfig: noise_sigma must be > 0");
        const std::size_t effective = healthy_column ? biomarkers + 1 : biomarkers;
        if (descriptor_dim < effective) {
            throw ValueError("SyntheticConfig: descriptor_dim must be >= biomarker count");
        }
        // The chain P(1|1) = pi + lambda(1-pi), P(1|0) = pi(1-lambda) needs
        // lambda >= -pi/(1-pi) to stay a probability.
        const double lambda = 2.0 * p_stay - 1.0;
        if (lambda < 0.0 && positive_rate < 1.0 && lambda < -positive_rate / (1.0 - positive_rate)) {
            throw ValueError("SyntheticConfig: p_stay too small for the requested positive_rate");
        }
    }
};

inline std::string synthetic_volume_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "vol%05zu", index);
    return buf;
}

inline std::string synthetic_patient_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "pat%05zu", index);
    return buf;
}

// Deterministic given the seed: each volume draws from its own derived
// stream, so generation order (or a parallel schedule) cannot change output.
inline std::vector<VolumeRecord> generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const double lambda = 2.0 * cfg.p_stay - 1.0;
    const double p_one_given_one = cfg.positive_rate + lambda * (1.0 - cfg.positive_rate);
    const double p_one_given_zero = cfg.positive_rate * (1.0 - lambda);
    const std::size_t total_biomarkers = cfg.healthy_column ? cfg.biomarkers + 1 : cfg.biomarkers;

    std::vector<VolumeRecord> records;
    records.reserve(cfg.volumes);
    for (std::size_t m = 0; m < cfg.volumes; ++m) {
        Rng rng(derive_seed(cfg.seed, 1, m));
        VolumeRecord rec;
        rec.volume_id = synthetic_volume_id(m);
        rec.patient_id = synthetic_patient_id(m / cfg.volumes_per_patient);
        rec.labels = Tensor(cfg.slices, total_biomarkers);
        for (std::size_t b = 0; b < cfg.biomarkers; ++b) {
            bool state = rng.bernoulli(cfg.positive_rate);
            for (std::size_t s = 0; s < cfg.slices; ++s) {
                if (s > 0) state = rng.bernoulli(state ? p_one_given_one : p_one_given_zero);
                bool label = state;
                if (cfg.label_noise > 0.0 && rng.bernoulli(cfg.label_noise)) label = !label;
                rec.labels.at(s, b) = label ? 1.0 : 0.0;
            }
        }
        if (cfg.healthy_column) {
            for (std::size_t s = 0; s < cfg.slices; ++s) {
                bool any = false;
                for (std::size_t b = 0; b < cfg.biomarkers; ++b) {
                    if (rec.labels.at(s, b) == 1.0) any = true;
                }
                rec.labels.at(s, cfg.biomarkers) = any ? 0.0 : 1.0;
            }
        }
        rec.descriptors = Tensor(cfg.slices, cfg.descriptor_dim);
        for (std::size_t s = 0; s < cfg.slices; ++s) {
            for (std::size_t d = 0; d < cfg.descriptor_dim; ++d) {
                double v = cfg.noise_sigma * rng.normal();
                if (d < total_biomarkers && rec.labels.at(s, d) == 1.0) {
                    v += cfg.mean_separation;
                }
                // Stored as 32-bit floats on disk; rounding here keeps the
                // in-memory corpus identical to its serialized form.
                rec.descriptors.at(s, d) = static_cast<double>(static_cast<float>(v));
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetSplit {
    std::vector<VolumeRecord> train;
    std::vector<VolumeRecord> val;
    std::vector<VolumeRecord> test;
};

// Splits by patient: all volumes of one individual land in exactly one part.
// Patients are shuffled deterministically and assigned by rounded cumulative
// fractions.
inline DatasetSplit split_patients(const std::vector<VolumeRecord>& records,
                                   const SplitFractions& fractions, std::uint64_t seed) {
    const double sum = fractions.train + fractions.val + fractions.test;
    if (std::abs(sum - 1.0) > 1e-9) throw ValueError("split_patients: fractions must sum to 1");
    if (fractions.train < 0.0 || fractions.val < 0.0 || fractions.test < 0.0) {
        throw ValueError("split_patients: fractions must be nonnegative");
    }

    std::vector<std::string> patients;
    for (const auto& rec : records) {
        if (std::find(patients.begin(), patients.end(), rec.patient_id) == patients.end()) {
            patients.push_back(rec.patient_id);
        }
    }
    std::size_t wanted_parts = 0;
    for (double f : {fractions.train, fractions.val, fractions.test}) {
        if (f > 0.0) ++wanted_parts;
    }
    if (patients.size() < wanted_parts) {
        throw ValueError("split_patients: fewer patients (" + std::to_string(patients.size()) +
                         ") than requested splits (" + std::to_string(wanted_parts) + ")");
    }

    Rng rng(derive_seed(seed, 2, 0));
    rng.shuffle(patients);
    const double p = static_cast<double>(patients.size());
    const std::size_t cut1 = static_cast<std::size_t>(std::floor(fractions.train * p + 0.5));
    const std::size_t cut2 =
        static_cast<std::size_t>(std::floor((fractions.train + fractions.val) * p + 0.5));

    auto part_of = [&](const std::string& patient) {
        const auto it = std::find(patients.begin(), patients.end(), patient);
        const std::size_t pos = static_cast<std::size_t>(it - patients.begin());
        if (pos < cut1) return 0;
        if (pos < cut2) return 1;
        return 2;
    };

    DatasetSplit split;
    for (const auto& rec : records) {
        switch (part_of(rec.patient_id)) {
            case 0: split.train.push_back(rec); break;
            case 1: split.val.push_back(rec); break;
            default: split.test.push_back(rec); break;
        }
    }
    return split;
}

inline std::uint64_t descriptor_checksum(const std::vector<VolumeRecord>& records) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& rec : records) {
        h = fnv1a64(rec.volume_id.data(), rec.volume_id.size(), h);
        h = checksum(rec.descriptors, h);
    }
    return h;
}

}  // namespace slicefuse
