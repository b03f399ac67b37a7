#include "uad/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <vector>

#include "uad/errors.hpp"

namespace uad {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;
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

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

// datatype codes
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtInt8 = 256;
constexpr std::int16_t kDtUint16 = 512;
constexpr std::int16_t kDtUint32 = 768;

template <typename T>
void swap_bytes(T& v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

void swap_header(Nifti1Header& h) {
    swap_bytes(h.sizeof_hdr);
    swap_bytes(h.extents);
    swap_bytes(h.session_error);
    for (auto& d : h.dim) swap_bytes(d);
    swap_bytes(h.intent_p1);
    swap_bytes(h.intent_p2);
    swap_bytes(h.intent_p3);
    swap_bytes(h.intent_code);
    swap_bytes(h.datatype);
    swap_bytes(h.bitpix);
    swap_bytes(h.slice_start);
    for (auto& p : h.pixdim) swap_bytes(p);
    swap_bytes(h.vox_offset);
    swap_bytes(h.scl_slope);
    swap_bytes(h.scl_inter);
    swap_bytes(h.slice_end);
    swap_bytes(h.cal_max);
    swap_bytes(h.cal_min);
    swap_bytes(h.slice_duration);
    swap_bytes(h.toffset);
    swap_bytes(h.glmax);
    swap_bytes(h.glmin);
    swap_bytes(h.qform_code);
    swap_bytes(h.sform_code);
    swap_bytes(h.quatern_b);
    swap_bytes(h.quatern_c);
    swap_bytes(h.quatern_d);
    swap_bytes(h.qoffset_x);
    swap_bytes(h.qoffset_y);
    swap_bytes(h.qoffset_z);
    for (auto& s : h.srow_x) swap_bytes(s);
    for (auto& s : h.srow_y) swap_bytes(s);
    for (auto& s : h.srow_z) swap_bytes(s);
}

struct RawNifti {
    Nifti1Header hdr{};
    bool swapped = false;
    std::vector<unsigned char> data;  // voxel payload, byte order fixed to native
    Shape3 shape{0, 0, 0};
    Spacing spacing{1.0, 1.0, 1.0};
    std::size_t nvox = 0;
};

int dtype_bytes(std::int16_t dt) {
    switch (dt) {
        case kDtUint8:
        case kDtInt8: return 1;
        case kDtInt16:
        case kDtUint16: return 2;
        case kDtInt32:
        case kDtUint32:
        case kDtFloat32: return 4;
        case kDtFloat64: return 8;
        default: return 0;
    }
}

RawNifti read_raw(const std::string& path) {
    if (!std::filesystem::exists(path)) throw IoError("volume file does not exist: " + path);
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open volume file: " + path);

    RawNifti r;
    if (gzread(f, &r.hdr, sizeof(r.hdr)) != static_cast<int>(sizeof(r.hdr))) {
        gzclose(f);
        throw DataError("file too short for a NIfTI-1 header: " + path);
    }
    if (r.hdr.sizeof_hdr != 348) {
        auto probe = r.hdr.sizeof_hdr;
        swap_bytes(probe);
        if (probe != 348) {
            gzclose(f);
            throw DataError("not a NIfTI-1 file (bad sizeof_hdr): " + path);
        }
        swap_header(r.hdr);
        r.swapped = true;
    }
    if (std::strncmp(r.hdr.magic, "n+1", 3) != 0) {
        gzclose(f);
        if (std::strncmp(r.hdr.magic, "ni1", 3) == 0) {
            throw DataError("two-file NIfTI (.hdr/.img) is not supported: " + path);
        }
        throw DataError("missing NIfTI-1 magic 'n+1': " + path);
    }
    const int nd = r.hdr.dim[0];
    if (nd < 3 || nd > 7) {
        gzclose(f);
        throw DataError("non-3D payload (dim[0]=" + std::to_string(nd) + "): " + path);
    }
    for (int d = 4; d <= nd; ++d) {
        if (r.hdr.dim[d] > 1) {
            gzclose(f);
            throw DataError("non-3D payload (dim[" + std::to_string(d) + "]=" +
                            std::to_string(r.hdr.dim[d]) + "): " + path);
        }
    }
    for (int d = 1; d <= 3; ++d) {
        if (r.hdr.dim[d] < 1) {
            gzclose(f);
            throw DataError("invalid dimension " + std::to_string(r.hdr.dim[d]) + " in " + path);
        }
    }
    const int bytes = dtype_bytes(r.hdr.datatype);
    if (bytes == 0) {
        gzclose(f);
        throw DataError("unsupported NIfTI datatype code " + std::to_string(r.hdr.datatype) +
                        ": " + path);
    }
    r.shape = {r.hdr.dim[1], r.hdr.dim[2], r.hdr.dim[3]};
    r.spacing = {r.hdr.pixdim[1], r.hdr.pixdim[2], r.hdr.pixdim[3]};
    r.nvox = static_cast<std::size_t>(r.shape[0]) * r.shape[1] * r.shape[2];

    const long offset = static_cast<long>(r.hdr.vox_offset);
    if (offset < static_cast<long>(sizeof(r.hdr))) {
        gzclose(f);
        throw DataError("invalid vox_offset in " + path);
    }
    // skip extension bytes between header and payload
    long to_skip = offset - static_cast<long>(sizeof(r.hdr));
    std::vector<char> skip_buf(4096);
    while (to_skip > 0) {
        const int chunk = static_cast<int>(std::min<long>(to_skip, skip_buf.size()));
        if (gzread(f, skip_buf.data(), chunk) != chunk) {
            gzclose(f);
            throw DataError("truncated NIfTI payload in " + path);
        }
        to_skip -= chunk;
    }

    r.data.resize(r.nvox * bytes);
    std::size_t got = 0;
    while (got < r.data.size()) {
        const unsigned chunk =
            static_cast<unsigned>(std::min<std::size_t>(r.data.size() - got, 1u << 28));
        const int n = gzread(f, r.data.data() + got, chunk);
        if (n <= 0) break;
        got += static_cast<std::size_t>(n);
    }
    gzclose(f);
    if (got != r.data.size()) {
        throw DataError("truncated voxel payload (" + std::to_string(got) + " of " +
                        std::to_string(r.data.size()) + " bytes) in " + path);
    }
    if (r.swapped && bytes > 1) {
        for (std::size_t i = 0; i < r.nvox; ++i) {
            auto* p = r.data.data() + i * bytes;
            for (int b = 0; b < bytes / 2; ++b) std::swap(p[b], p[bytes - 1 - b]);
        }
    }
    return r;
}

template <typename T, typename F>
void convert(const RawNifti& r, F&& emit) {
    const T* p = reinterpret_cast<const T*>(r.data.data());
    for (std::size_t i = 0; i < r.nvox; ++i) emit(i, static_cast<double>(p[i]));
}

template <typename F>
void for_each_voxel(const RawNifti& r, F&& emit) {
    switch (r.hdr.datatype) {
        case kDtUint8: convert<std::uint8_t>(r, emit); break;
        case kDtInt8: convert<std::int8_t>(r, emit); break;
        case kDtInt16: convert<std::int16_t>(r, emit); break;
        case kDtUint16: convert<std::uint16_t>(r, emit); break;
        case kDtInt32: convert<std::int32_t>(r, emit); break;
        case kDtUint32: convert<std::uint32_t>(r, emit); break;
        case kDtFloat32: convert<float>(r, emit); break;
        case kDtFloat64: convert<double>(r, emit); break;
        default: throw DataError("unsupported datatype");
    }
}

Nifti1Header make_header(Shape3 shape, Spacing spacing, std::int16_t datatype,
                         const std::string& descrip) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(shape[0]);
    h.dim[2] = static_cast<std::int16_t>(shape[1]);
    h.dim[3] = static_cast<std::int16_t>(shape[2]);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = datatype;
    h.bitpix = static_cast<std::int16_t>(dtype_bytes(datatype) * 8);
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(spacing[0]);
    h.pixdim[2] = static_cast<float>(spacing[1]);
    h.pixdim[3] = static_cast<float>(spacing[2]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // mm
    std::snprintf(h.descrip, sizeof(h.descrip), "%s", descrip.c_str());
    h.sform_code = 1;
    h.srow_x[0] = static_cast<float>(spacing[0]);
    h.srow_y[1] = static_cast<float>(spacing[1]);
    h.srow_z[2] = static_cast<float>(spacing[2]);
    std::memcpy(h.magic, "n+1\0", 4);
    return h;
}

void write_file(const std::string& path, const Nifti1Header& h, const void* payload,
                std::size_t payload_bytes) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty() && !std::filesystem::exists(parent)) {
        throw IoError("parent directory does not exist: " + parent.string());
    }
    const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    // 'T' writes the stream transparently (no gzip wrapper) for plain .nii.
    gzFile f = gzopen(path.c_str(), gz ? "wb" : "wbT");
    if (!f) throw IoError("cannot open for writing: " + path);
    const char ext[4] = {0, 0, 0, 0};
    bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h));
    ok = ok && gzwrite(f, ext, 4) == 4;
    std::size_t written = 0;
    const auto* bytes = static_cast<const unsigned char*>(payload);
    while (ok && written < payload_bytes) {
        const unsigned chunk =
            static_cast<unsigned>(std::min<std::size_t>(payload_bytes - written, 1u << 28));
        ok = gzwrite(f, bytes + written, chunk) == static_cast<int>(chunk);
        written += chunk;
    }
    if (gzclose(f) != Z_OK || !ok) throw IoError("failed writing volume file: " + path);
}

std::string stem_of(const std::string& path) {
    auto stem = std::filesystem::path(path).filename().string();
    for (const char* suffix : {".gz", ".nii"}) {
        const std::size_t n = std::strlen(suffix);
        if (stem.size() > n && stem.compare(stem.size() - n, n, suffix) == 0) {
            stem.resize(stem.size() - n);
        }
    }
    return stem;
}

}  // namespace

Volume load_volume(const std::string& path) {
    RawNifti r = read_raw(path);
    for (int a = 0; a < 3; ++a) {
        if (!(r.spacing[a] > 0.0f)) {
            throw DataError("non-positive pixdim[" + std::to_string(a + 1) + "]=" +
                            std::to_string(r.spacing[a]) + " in " + path);
        }
    }
    Volume v(r.shape, r.spacing, stem_of(path));
    const double slope = (r.hdr.scl_slope == 0.0f) ? 1.0 : static_cast<double>(r.hdr.scl_slope);
    const double inter = (r.hdr.scl_slope == 0.0f) ? 0.0 : static_cast<double>(r.hdr.scl_inter);
    std::size_t bad = r.nvox;
    for_each_voxel(r, [&](std::size_t i, double x) {
        const double y = slope * x + inter;
        v.voxels[i] = static_cast<float>(y);
        if (!std::isfinite(y) && bad == r.nvox) bad = i;
    });
    if (bad != r.nvox) {
        throw DataError("non-finite voxel at linear index " + std::to_string(bad) + " in " + path);
    }
    return v;
}

void save_volume(const Volume& v, const std::string& path, const std::string& descrip) {
    v.validate();
    const Nifti1Header h = make_header(v.shape, v.spacing, kDtFloat32, descrip);
    write_file(path, h, v.voxels.data(), v.voxels.size() * sizeof(float));
}

SegmentationMask load_mask(const std::string& path,
                           const std::map<std::int32_t, std::string>& label_names,
                           const std::string& annotator) {
    RawNifti r = read_raw(path);
    if (r.hdr.scl_slope != 0.0f && r.hdr.scl_slope != 1.0f) {
        throw DataError("mask file has intensity scaling (scl_slope=" +
                        std::to_string(r.hdr.scl_slope) + "), labels would be distorted: " + path);
    }
    SegmentationMask m(r.shape, label_names, annotator);
    for_each_voxel(r, [&](std::size_t i, double x) {
        const double rounded = std::nearbyint(x);
        if (!std::isfinite(x) || std::fabs(x - rounded) > 1e-9 || rounded < 0.0) {
            throw DataError("mask voxel at linear index " + std::to_string(i) +
                            " is not a nonnegative integer (" + std::to_string(x) + "): " + path);
        }
        m.labels[i] = static_cast<std::int32_t>(rounded);
    });
    m.validate();
    return m;
}

void save_mask(const SegmentationMask& m, const std::string& path, Spacing spacing,
               const std::string& descrip) {
    m.validate();
    const Nifti1Header h = make_header(m.shape, spacing, kDtInt32, descrip);
    write_file(path, h, m.labels.data(), m.labels.size() * sizeof(std::int32_t));
}

}  // namespace uad
