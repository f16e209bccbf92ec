/*
 * seqsynth: MRI sequence synthesis library
 *
 * Copyright 2026 The seqsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "seqsynth/errors.hpp"
#include "seqsynth/volume.hpp"

// Minimal NIfTI-1 single-file (.nii / .nii.gz) codec. Covers exactly what this
// pipeline produces and consumes: 3-d volumes, the common scalar datatypes,
// scl_slope/scl_inter, and byte-swapped files. Separate .hdr/.img pairs and
// real 4-d series are rejected.

namespace seqsynth {
namespace nifti_detail {

#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;      // 348
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348 bytes");

enum DataType : std::int16_t {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
    DT_INT8 = 256,
    DT_UINT16 = 512,
    DT_UINT32 = 768,
};

template <typename T>
inline void byteswap(T& v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

inline void swap_header(Nifti1Header& h) {
    byteswap(h.sizeof_hdr);
    byteswap(h.extents);
    byteswap(h.session_error);
    for (auto& d : h.dim) byteswap(d);
    byteswap(h.intent_p1);
    byteswap(h.intent_p2);
    byteswap(h.intent_p3);
    byteswap(h.intent_code);
    byteswap(h.datatype);
    byteswap(h.bitpix);
    byteswap(h.slice_start);
    for (auto& d : h.pixdim) byteswap(d);
    byteswap(h.vox_offset);
    byteswap(h.scl_slope);
    byteswap(h.scl_inter);
    byteswap(h.slice_end);
    byteswap(h.cal_max);
    byteswap(h.cal_min);
    byteswap(h.slice_duration);
    byteswap(h.toffset);
    byteswap(h.glmax);
    byteswap(h.glmin);
    byteswap(h.qform_code);
    byteswap(h.sform_code);
    byteswap(h.quatern_b);
    byteswap(h.quatern_c);
    byteswap(h.quatern_d);
    byteswap(h.qoffset_x);
    byteswap(h.qoffset_y);
    byteswap(h.qoffset_z);
    for (auto& v : h.srow_x) byteswap(v);
    for (auto& v : h.srow_y) byteswap(v);
    for (auto& v : h.srow_z) byteswap(v);
}

class GzFile {
 public:
    GzFile(const std::filesystem::path& path, const char* mode) : f_(gzopen(path.string().c_str(), mode)) {
        if (!f_) throw IoError("cannot open " + path.string());
    }
    ~GzFile() {
        if (f_) gzclose(f_);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;

    void read_exact(void* buf, std::size_t n, const std::string& what) {
        const int got = gzread(f_, buf, static_cast<unsigned>(n));
        if (got < 0 || static_cast<std::size_t>(got) != n) throw FormatError("truncated file while reading " + what);
    }
    void write_exact(const void* buf, std::size_t n, const std::string& what) {
        const int put = gzwrite(f_, buf, static_cast<unsigned>(n));
        if (put <= 0 || static_cast<std::size_t>(put) != n) throw IoError("short write while writing " + what);
    }
    void skip(std::size_t n) {
        std::vector<char> junk(4096);
        while (n > 0) {
            const std::size_t chunk = std::min(n, junk.size());
            read_exact(junk.data(), chunk, "header extension");
            n -= chunk;
        }
    }

 private:
    gzFile f_;
};

inline bool is_gz_path(const std::filesystem::path& p) { return p.extension() == ".gz"; }

template <typename Raw>
inline void decode_voxels(GzFile& f, std::int64_t n, bool swap, double slope, double inter,
                          std::vector<float>& out) {
    std::vector<Raw> raw(static_cast<std::size_t>(n));
    f.read_exact(raw.data(), raw.size() * sizeof(Raw), "voxel data");
    out.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Raw v = raw[static_cast<std::size_t>(i)];
        if (swap) byteswap(v);
        out[static_cast<std::size_t>(i)] = static_cast<float>(static_cast<double>(v) * slope + inter);
    }
}

struct Decoded {
    std::array<std::int64_t, 3> shape;
    std::array<double, 3> spacing;
    std::vector<float> values;
};

inline Decoded read_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    GzFile f(path, "rb");
    Nifti1Header h{};
    f.read_exact(&h, sizeof(h), "header");
    bool swap = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swap = true;
        if (h.sizeof_hdr != 348) throw FormatError(path.string() + ": not a NIfTI-1 file (bad sizeof_hdr)");
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0) {
        if (std::strncmp(h.magic, "ni1", 3) == 0)
            throw FormatError(path.string() + ": two-file NIfTI (.hdr/.img) is not supported");
        throw FormatError(path.string() + ": bad magic");
    }
    const int ndim = h.dim[0];
    if (ndim < 3 || ndim > 7) throw FormatError(path.string() + ": unsupported dimensionality " + std::to_string(ndim));
    for (int d = 4; d <= ndim; ++d)
        if (h.dim[d] > 1)
            throw FormatError(path.string() + ": volume has " + std::to_string(ndim) +
                              " dimensions; only 3-d volumes are supported");
    std::array<std::int64_t, 3> shape{h.dim[1], h.dim[2], h.dim[3]};
    for (auto d : shape)
        if (d <= 0) throw FormatError(path.string() + ": non-positive dimension in header");
    std::array<double, 3> spacing{h.pixdim[1], h.pixdim[2], h.pixdim[3]};
    for (auto& s : spacing)
        if (!(s > 0.0) || !std::isfinite(s)) s = 1.0;

    const std::int64_t n = shape[0] * shape[1] * shape[2];
    double slope = h.scl_slope;
    double inter = h.scl_inter;
    if (slope == 0.0 || !std::isfinite(slope)) {
        slope = 1.0;
        inter = 0.0;
    }
    if (!std::isfinite(inter)) inter = 0.0;

    const long offset = static_cast<long>(h.vox_offset);
    if (offset < 348) throw FormatError(path.string() + ": bad vox_offset");
    f.skip(static_cast<std::size_t>(offset - 348));

    Decoded out;
    out.shape = shape;
    out.spacing = spacing;
    switch (h.datatype) {
        case DT_UINT8: decode_voxels<std::uint8_t>(f, n, false, slope, inter, out.values); break;
        case DT_INT8: decode_voxels<std::int8_t>(f, n, false, slope, inter, out.values); break;
        case DT_INT16: decode_voxels<std::int16_t>(f, n, swap, slope, inter, out.values); break;
        case DT_UINT16: decode_voxels<std::uint16_t>(f, n, swap, slope, inter, out.values); break;
        case DT_INT32: decode_voxels<std::int32_t>(f, n, swap, slope, inter, out.values); break;
        case DT_UINT32: decode_voxels<std::uint32_t>(f, n, swap, slope, inter, out.values); break;
        case DT_FLOAT32: decode_voxels<float>(f, n, swap, slope, inter, out.values); break;
        case DT_FLOAT64: decode_voxels<double>(f, n, swap, slope, inter, out.values); break;
        default: throw FormatError(path.string() + ": unsupported datatype " + std::to_string(h.datatype));
    }
    for (float v : out.values)
        if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite voxel value");
    return out;
}

inline Nifti1Header make_header(const std::array<std::int64_t, 3>& shape, const std::array<double, 3>& spacing,
                                std::int16_t datatype, std::int16_t bitpix) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    for (int a = 0; a < 3; ++a) {
        if (shape[a] <= 0 || shape[a] > std::numeric_limits<std::int16_t>::max())
            throw ShapeError("volume dimension out of NIfTI-1 range");
        h.dim[a + 1] = static_cast<std::int16_t>(shape[a]);
    }
    for (int a = 4; a < 8; ++a) h.dim[a] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.0f;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(spacing[a]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimetres
    std::snprintf(h.descrip, sizeof(h.descrip), "seqsynth");
    h.qform_code = 0;
    h.sform_code = 1;
    h.srow_x[0] = static_cast<float>(spacing[0]);
    h.srow_y[1] = static_cast<float>(spacing[1]);
    h.srow_z[2] = static_cast<float>(spacing[2]);
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

inline const char* write_mode(const std::filesystem::path& p) {
    // "T" writes without the gzip wrapper so plain .nii stays plain.
    return is_gz_path(p) ? "wb6" : "wbT";
}

}  // namespace nifti_detail

inline Volume load_volume(const std::filesystem::path& path) {
    auto dec = nifti_detail::read_file(path);
    Volume v;
    v.shape = dec.shape;
    v.spacing = dec.spacing;
    v.data = std::move(dec.values);
    return v;
}

inline void save_volume(const std::filesystem::path& path, const Volume& v) {
    if (v.numel() == 0) throw ArgumentError("refusing to write an empty volume");
    auto h = nifti_detail::make_header(v.shape, v.spacing, nifti_detail::DT_FLOAT32, 32);
    nifti_detail::GzFile f(path, nifti_detail::write_mode(path));
    f.write_exact(&h, sizeof(h), "header");
    const char pad[4] = {0, 0, 0, 0};
    f.write_exact(pad, 4, "extension flag");
    f.write_exact(v.data.data(), v.data.size() * sizeof(float), "voxel data");
}

inline LabelVolume load_label_volume(const std::filesystem::path& path) {
    auto dec = nifti_detail::read_file(path);
    LabelVolume lv;
    lv.shape = dec.shape;
    lv.spacing = dec.spacing;
    lv.labels.resize(dec.values.size());
    for (std::size_t i = 0; i < dec.values.size(); ++i) {
        const float v = dec.values[i];
        const float r = std::nearbyint(v);
        if (v < 0.0f || std::fabs(v - r) > 1e-3f || r > 65535.0f)
            throw FormatError(path.string() + ": label volume holds non-integer or out-of-range values");
        lv.labels[i] = static_cast<std::uint16_t>(r);
    }
    return lv;
}

inline void save_label_volume(const std::filesystem::path& path, const LabelVolume& lv) {
    if (lv.numel() == 0) throw ArgumentError("refusing to write an empty label volume");
    auto h = nifti_detail::make_header(lv.shape, lv.spacing, nifti_detail::DT_UINT16, 16);
    nifti_detail::GzFile f(path, nifti_detail::write_mode(path));
    f.write_exact(&h, sizeof(h), "header");
    const char pad[4] = {0, 0, 0, 0};
    f.write_exact(pad, 4, "extension flag");
    f.write_exact(lv.labels.data(), lv.labels.size() * sizeof(std::uint16_t), "label data");
}

}  // namespace seqsynth
