#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "slicefuse/data.hpp"

namespace slicefuse {

// Dataset container, version 1. Little-endian throughout.
//
//   magic    8 bytes  "SFDATA1\n"
//   version  u32
//   endian   u32      0x01020304 written little-endian
//   M        u32      volume count
//   S        u32      slices per volume (uniform within a file)
//   D        u32      descriptor dimension
//   B        u32      biomarker count
//   per volume:
//     volume id   u32 length + UTF-8 bytes
//     patient id  u32 length + UTF-8 bytes
//     S_desc      u32   descriptor row count, must equal S
//     S_labels    u32   label row count, must equal S_desc
//     descriptors S*D f32, row-major
//     labels      ceil(S*B/8) bytes, row-major bits, LSB first
//
// A plain-text manifest (path + ".manifest") lists volume and patient ids.
inline constexpr char kDatasetMagic[8] = {'S', 'F', 'D', 'A', 'T', 'A', '1', '\n'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kEndianTag = 0x01020304;

inline std::string manifest_path(const std::string& dataset_path) {
    return dataset_path + ".manifest";
}

inline void write_dataset(const std::vector<VolumeRecord>& records, const std::string& path) {
    if (records.empty()) throw ValueError("write_dataset: no volumes");
    const std::size_t s = records[0].descriptors.rows();
    const std::size_t d = records[0].descriptors.cols();
    const std::size_t b = records[0].labels.cols();
    for (const auto& rec : records) {
        rec.validate();
        if (rec.descriptors.rows() != s || rec.descriptors.cols() != d ||
            rec.labels.cols() != b) {
            throw ValueError("write_dataset: volume " + rec.volume_id +
                             " does not match the container-wide shape");
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_dataset: cannot open " + path);
    out.write(kDatasetMagic, 8);
    write_u32_le(out, kDatasetVersion);
    write_u32_le(out, kEndianTag);
    write_u32_le(out, static_cast<std::uint32_t>(records.size()));
    write_u32_le(out, static_cast<std::uint32_t>(s));
    write_u32_le(out, static_cast<std::uint32_t>(d));
    write_u32_le(out, static_cast<std::uint32_t>(b));
    for (const auto& rec : records) {
        write_string(out, rec.volume_id);
        write_string(out, rec.patient_id);
        write_u32_le(out, static_cast<std::uint32_t>(rec.descriptors.rows()));
        write_u32_le(out, static_cast<std::uint32_t>(rec.labels.rows()));
        for (double v : rec.descriptors.values()) {
            write_f32_le(out, static_cast<float>(v));
        }
        const std::size_t bits = rec.labels.size();
        std::uint8_t byte = 0;
        for (std::size_t i = 0; i < bits; ++i) {
            if (rec.labels[i] == 1.0) byte |= static_cast<std::uint8_t>(1u << (i % 8));
            if (i % 8 == 7 || i + 1 == bits) {
                write_u8(out, byte);
                byte = 0;
            }
        }
    }
    if (!out) throw IoError("write_dataset: write failed for " + path);
    out.close();

    std::ofstream manifest(manifest_path(path), std::ios::trunc);
    if (!manifest) throw IoError("write_dataset: cannot open " + manifest_path(path));
    manifest << "# volume_id\tpatient_id\tslices\n";
    for (const auto& rec : records) {
        manifest << rec.volume_id << '\t' << rec.patient_id << '\t' << rec.slice_count() << '\n';
    }
}

inline std::vector<VolumeRecord> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_dataset: cannot open " + path);
    char magic[8];
    read_exact(in, magic, 8, "magic");
    if (std::memcmp(magic, kDatasetMagic, 8) != 0) {
        throw DataError("read_dataset: " + path + " is not a dataset container (bad magic)");
    }
    const std::uint32_t version = read_u32_le(in, "version");
    if (version != kDatasetVersion) {
        throw DataError("read_dataset: unsupported container version " + std::to_string(version));
    }
    const std::uint32_t endian = read_u32_le(in, "endian tag");
    if (endian != kEndianTag) {
        throw DataError("read_dataset: unexpected endianness tag");
    }
    const std::uint32_t m = read_u32_le(in, "volume count");
    const std::uint32_t s = read_u32_le(in, "slice count");
    const std::uint32_t d = read_u32_le(in, "descriptor dim");
    const std::uint32_t b = read_u32_le(in, "biomarker count");
    if (m == 0 || s == 0 || d == 0 || b == 0) {
        throw DataError("read_dataset: degenerate header dimensions");
    }

    std::vector<VolumeRecord> records;
    records.reserve(m);
    for (std::uint32_t v = 0; v < m; ++v) {
        VolumeRecord rec;
        rec.volume_id = read_string(in, "volume id");
        rec.patient_id = read_string(in, "patient id");
        const std::uint32_t s_desc = read_u32_le(in, "descriptor row count");
        const std::uint32_t s_labels = read_u32_le(in, "label row count");
        if (s_desc != s_labels) {
            throw DataError("read_dataset: volume " + rec.volume_id + " has " +
                            std::to_string(s_desc) + " descriptor rows but " +
                            std::to_string(s_labels) + " label rows");
        }
        if (s_desc != s) {
            throw DataError("read_dataset: volume " + rec.volume_id + " has " +
                            std::to_string(s_desc) + " rows, header says " + std::to_string(s));
        }
        rec.descriptors = Tensor(s, d);
        for (std::size_t i = 0; i < rec.descriptors.size(); ++i) {
            rec.descriptors[i] = static_cast<double>(read_f32_le(in, "descriptors"));
        }
        rec.labels = Tensor(s, b);
        const std::size_t bits = rec.labels.size();
        std::uint8_t byte = 0;
        for (std::size_t i = 0; i < bits; ++i) {
            if (i % 8 == 0) byte = read_u8(in, "labels");
            rec.labels[i] = (byte >> (i % 8)) & 1u ? 1.0 : 0.0;
        }
        rec.validate();
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace slicefuse
