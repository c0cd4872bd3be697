#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "slicefuse/crf.hpp"
#include "slicefuse/fusion.hpp"
#include "slicefuse/mlp.hpp"
#include "slicefuse/slice_head.hpp"

namespace slicefuse {

// Model checkpoint container, version 1. One file holds a sequence of tagged
// sections so a baseline bundle (e.g. slice head + CRF weights) travels as a
// unit. Little-endian; tensors are rows, cols, then row-major f64 payload.
// Round-trips are bitwise exact.
//
//   magic    8 bytes "SFCKPT1\n"
//   version  u32
//   sections u32
//   per section: tag (u32 length + bytes), payload byte count u64, payload
inline constexpr char kCheckpointMagic[8] = {'S', 'F', 'C', 'K', 'P', 'T', '1', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointSection {
    std::string tag;
    std::string payload;
};

struct Checkpoint {
    std::vector<CheckpointSection> sections;

    const CheckpointSection* find(const std::string& tag) const {
        for (const auto& s : sections) {
            if (s.tag == tag) return &s;
        }
        return nullptr;
    }
};

inline void write_tensor(std::ostream& out, const Tensor& t) {
    write_u32_le(out, static_cast<std::uint32_t>(t.rows()));
    write_u32_le(out, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.values()) write_f64_le(out, v);
}

inline Tensor read_tensor(std::istream& in, const char* what) {
    const std::uint32_t rows = read_u32_le(in, what);
    const std::uint32_t cols = read_u32_le(in, what);
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = read_f64_le(in, what);
    return t;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(kCheckpointMagic, 8);
    write_u32_le(out, kCheckpointVersion);
    write_u32_le(out, static_cast<std::uint32_t>(ckpt.sections.size()));
    for (const auto& section : ckpt.sections) {
        write_string(out, section.tag);
        write_u64_le(out, section.payload.size());
        out.write(section.payload.data(), static_cast<std::streamsize>(section.payload.size()));
    }
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    read_exact(in, magic, 8, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw DataError("load_checkpoint: " + path + " is not a checkpoint (bad magic)");
    }
    const std::uint32_t version = read_u32_le(in, "version");
    if (version != kCheckpointVersion) {
        throw DataError("load_checkpoint: unsupported checkpoint version " +
                        std::to_string(version));
    }
    const std::uint32_t count = read_u32_le(in, "section count");
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointSection section;
        section.tag = read_string(in, "section tag");
        const std::uint64_t size = read_u64_le(in, "section size");
        section.payload.resize(size);
        if (size > 0) read_exact(in, section.payload.data(), size, "section payload");
        ckpt.sections.push_back(std::move(section));
    }
    return ckpt;
}

// ---- section codecs ----
// Tensor order within each section is fixed and mirrors the documented
// parameter order of the corresponding model.

inline constexpr const char* kTagFusion = "fusion";
inline constexpr const char* kTagSliceHead = "slice_head";
inline constexpr const char* kTagMlp = "mlp";
inline constexpr const char* kTagCrf = "crf";

inline CheckpointSection encode_fusion(const FusionModel& m) {
    std::ostringstream out(std::ios::binary);
    write_u32_le(out, static_cast<std::uint32_t>(m.descriptor_dim()));
    write_u32_le(out, static_cast<std::uint32_t>(m.hidden_dim()));
    write_u32_le(out, static_cast<std::uint32_t>(m.biomarker_count()));
    write_u8(out, m.symmetric_head ? 1 : 0);
    for (const Tensor* t : m.parameters()) write_tensor(out, *t);
    write_tensor(out, m.h0);
    write_tensor(out, m.c0);
    write_tensor(out, m.h_back);
    write_tensor(out, m.c_back);
    return {kTagFusion, std::move(out).str()};
}

inline FusionModel decode_fusion(const CheckpointSection& section) {
    std::istringstream in(section.payload, std::ios::binary);
    const std::uint32_t d = read_u32_le(in, "fusion dims");
    const std::uint32_t h = read_u32_le(in, "fusion dims");
    const std::uint32_t b = read_u32_le(in, "fusion dims");
    FusionModel m = init_fusion({d, h, b}, 0, read_u8(in, "fusion head mode") != 0);
    for (Tensor* t : m.parameters()) {
        Tensor loaded = read_tensor(in, "fusion tensor");
        if (!loaded.same_shape(*t)) {
            throw DataError("decode_fusion: tensor shape " + loaded.shape_string() +
                            " does not match header dims");
        }
        *t = std::move(loaded);
    }
    m.h0 = read_tensor(in, "fusion state");
    m.c0 = read_tensor(in, "fusion state");
    m.h_back = read_tensor(in, "fusion state");
    m.c_back = read_tensor(in, "fusion state");
    return m;
}

inline CheckpointSection encode_slice_head(const SliceHeadModel& m) {
    std::ostringstream out(std::ios::binary);
    write_u32_le(out, static_cast<std::uint32_t>(m.descriptor_dim()));
    write_u32_le(out, static_cast<std::uint32_t>(m.biomarker_count()));
    write_tensor(out, m.w);
    write_tensor(out, m.b);
    return {kTagSliceHead, std::move(out).str()};
}

inline SliceHeadModel decode_slice_head(const CheckpointSection& section) {
    std::istringstream in(section.payload, std::ios::binary);
    const std::uint32_t d = read_u32_le(in, "slice head dims");
    const std::uint32_t b = read_u32_le(in, "slice head dims");
    SliceHeadModel m;
    m.w = read_tensor(in, "slice head weight");
    m.b = read_tensor(in, "slice head bias");
    if (m.w.rows() != d || m.w.cols() != b || m.b.cols() != b) {
        throw DataError("decode_slice_head: tensor shapes do not match header dims");
    }
    return m;
}

inline CheckpointSection encode_mlp(const MlpModel& m) {
    std::ostringstream out(std::ios::binary);
    write_u32_le(out, static_cast<std::uint32_t>(m.slices));
    write_u32_le(out, static_cast<std::uint32_t>(m.descriptor_dim));
    write_u32_le(out, static_cast<std::uint32_t>(m.biomarkers));
    write_u32_le(out, static_cast<std::uint32_t>(m.hidden_dim()));
    for (const Tensor* t : m.parameters()) write_tensor(out, *t);
    return {kTagMlp, std::move(out).str()};
}

inline MlpModel decode_mlp(const CheckpointSection& section) {
    std::istringstream in(section.payload, std::ios::binary);
    MlpModel m;
    m.slices = read_u32_le(in, "mlp dims");
    m.descriptor_dim = read_u32_le(in, "mlp dims");
    m.biomarkers = read_u32_le(in, "mlp dims");
    const std::uint32_t hidden = read_u32_le(in, "mlp dims");
    m.w1 = read_tensor(in, "mlp tensor");
    m.b1 = read_tensor(in, "mlp tensor");
    m.w2 = read_tensor(in, "mlp tensor");
    m.b2 = read_tensor(in, "mlp tensor");
    if (m.w1.rows() != m.slices * m.descriptor_dim || m.w1.cols() != hidden ||
        m.w2.cols() != m.slices * m.biomarkers) {
        throw DataError("decode_mlp: tensor shapes do not match header dims");
    }
    return m;
}

inline CheckpointSection encode_crf(const CrfModel& m) {
    std::ostringstream out(std::ios::binary);
    write_u32_le(out, static_cast<std::uint32_t>(m.biomarker_count()));
    write_f64_le(out, m.unary_scale);
    write_tensor(out, m.cooc);
    write_tensor(out, m.smooth);
    return {kTagCrf, std::move(out).str()};
}

inline CrfModel decode_crf(const CheckpointSection& section) {
    std::istringstream in(section.payload, std::ios::binary);
    const std::uint32_t b = read_u32_le(in, "crf dims");
    CrfModel m;
    m.unary_scale = read_f64_le(in, "crf unary scale");
    m.cooc = read_tensor(in, "crf cooc");
    m.smooth = read_tensor(in, "crf smooth");
    if (m.smooth.cols() != b) throw DataError("decode_crf: tensor shapes do not match header");
    m.validate();
    return m;
}

}  // namespace slicefuse
