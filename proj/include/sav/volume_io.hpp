#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "sav/common.hpp"
#include "sav/volume.hpp"

namespace sav {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Two on-disk formats:
//   * NIfTI-1 (.nii, .nii.gz): shape from dim[1..3], spacing from pixdim[1..3].
//     Orientation codes are read but volumes are kept axis-as-stored; scl
//     slope/intercept are ignored so loading never rescales intensities.
//   * raw (.raw): little-endian f32 or u8, D fastest, with a JSON sidecar
//     <stem>.json holding { "shape": [H,W,D], "spacing": [sx,sy,sz], "dtype" }.
// ---------------------------------------------------------------------------

namespace io_detail {

#pragma pack(push, 1)
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum NiftiDatatype : int16_t {
    NIFTI_UINT8 = 2,
    NIFTI_INT16 = 4,
    NIFTI_INT32 = 8,
    NIFTI_FLOAT32 = 16,
    NIFTI_FLOAT64 = 64,
};

template <typename T>
void bswap(T& v) {
    char* p = reinterpret_cast<char*>(&v);
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

inline void swap_header(Nifti1Header& h) {
    bswap(h.sizeof_hdr);
    for (auto& d : h.dim) bswap(d);
    bswap(h.datatype);
    bswap(h.bitpix);
    for (auto& p : h.pixdim) bswap(p);
    bswap(h.vox_offset);
    bswap(h.scl_slope);
    bswap(h.scl_inter);
    bswap(h.qform_code);
    bswap(h.sform_code);
}

// gzread handles plain files transparently, so one read path covers .nii and .nii.gz
inline std::vector<char> read_file_maybe_gz(const fs::path& path) {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open file: " + path.string());
    std::vector<char> out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("error while reading: " + path.string());
    return out;
}

inline void write_file_maybe_gz(const fs::path& path, const char* data, size_t len, bool gz) {
    if (gz) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f) throw std::runtime_error("cannot open file for writing: " + path.string());
        size_t done = 0;
        while (done < len) {
            unsigned chunk = static_cast<unsigned>(std::min<size_t>(len - done, 1u << 28));
            if (gzwrite(f, data + done, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw std::runtime_error("error while writing: " + path.string());
            }
            done += chunk;
        }
        gzclose(f);
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open file for writing: " + path.string());
        f.write(data, static_cast<std::streamsize>(len));
        if (!f) throw std::runtime_error("error while writing: " + path.string());
    }
}

inline bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline bool is_nifti_path(const fs::path& p) {
    std::string s = p.string();
    return has_suffix(s, ".nii") || has_suffix(s, ".nii.gz");
}

inline bool is_raw_path(const fs::path& p) { return p.extension() == ".raw"; }

inline fs::path sidecar_path(const fs::path& raw) {
    fs::path p = raw;
    p.replace_extension(".json");
    return p;
}

// pull element i out of the raw buffer as double, after endian fixup
inline double fetch_value(const char* base, int16_t dtype, size_t i, bool swap) {
    switch (dtype) {
        case NIFTI_UINT8:
            return static_cast<double>(reinterpret_cast<const uint8_t*>(base)[i]);
        case NIFTI_INT16: {
            int16_t v;
            std::memcpy(&v, base + 2 * i, 2);
            if (swap) bswap(v);
            return v;
        }
        case NIFTI_INT32: {
            int32_t v;
            std::memcpy(&v, base + 4 * i, 4);
            if (swap) bswap(v);
            return v;
        }
        case NIFTI_FLOAT32: {
            float v;
            std::memcpy(&v, base + 4 * i, 4);
            if (swap) bswap(v);
            return v;
        }
        case NIFTI_FLOAT64: {
            double v;
            std::memcpy(&v, base + 8 * i, 8);
            if (swap) bswap(v);
            return v;
        }
        default:
            throw std::runtime_error("unsupported NIfTI datatype " + std::to_string(dtype));
    }
}

}  // namespace io_detail

// --------------------------------------------------------------- NIfTI -----

inline Volume load_nifti(const fs::path& path) {
    using namespace io_detail;
    std::vector<char> buf = read_file_maybe_gz(path);
    if (buf.size() < sizeof(Nifti1Header)) throw std::runtime_error("truncated NIfTI file: " + path.string());

    Nifti1Header h;
    std::memcpy(&h, buf.data(), sizeof(h));
    bool swap = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swap = true;
        if (h.sizeof_hdr != 348) throw std::runtime_error("not a NIfTI-1 file: " + path.string());
    }
    if (h.dim[0] < 3 || h.dim[1] < 1 || h.dim[2] < 1 || h.dim[3] < 1)
        throw std::runtime_error("NIfTI file is not a 3D volume: " + path.string());
    for (int a = 4; a <= h.dim[0]; ++a)
        if (h.dim[a] > 1) throw std::runtime_error("NIfTI volume has more than 3 non-singleton axes: " + path.string());

    const int H = h.dim[1], W = h.dim[2], D = h.dim[3];
    size_t nvox = static_cast<size_t>(H) * W * D;
    size_t offset = static_cast<size_t>(h.vox_offset);
    if (offset < sizeof(Nifti1Header)) offset = 352;
    size_t elem = static_cast<size_t>(h.bitpix) / 8;
    if (buf.size() < offset + nvox * elem) throw std::runtime_error("truncated NIfTI data: " + path.string());

    Grid3<float> g(H, W, D);
    const char* base = buf.data() + offset;
    size_t i = 0;
    for (int d = 0; d < D; ++d)
        for (int w = 0; w < W; ++w)
            for (int hh = 0; hh < H; ++hh, ++i)
                g(hh, w, d) = static_cast<float>(fetch_value(base, h.datatype, i, swap));

    std::array<double, 3> spacing{h.pixdim[1], h.pixdim[2], h.pixdim[3]};
    for (double& s : spacing)
        if (!(s > 0.0)) s = 1.0;
    return Volume(std::move(g), spacing);
}

template <typename T>
void save_nifti(const fs::path& path, const Grid3<T>& g, const std::array<double, 3>& spacing) {
    using namespace io_detail;
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, uint8_t>);
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(g.h());
    h.dim[2] = static_cast<int16_t>(g.w());
    h.dim[3] = static_cast<int16_t>(g.d());
    for (int a = 4; a < 8; ++a) h.dim[a] = 1;
    h.datatype = std::is_same_v<T, float> ? NIFTI_FLOAT32 : NIFTI_UINT8;
    h.bitpix = std::is_same_v<T, float> ? 32 : 8;
    h.pixdim[0] = 1.f;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(spacing[a]);
    h.vox_offset = 352.f;
    h.scl_slope = 1.f;
    h.magic[0] = 'n';
    h.magic[1] = '+';
    h.magic[2] = '1';
    h.magic[3] = '\0';

    std::vector<char> out(352 + g.size() * sizeof(T), 0);
    std::memcpy(out.data(), &h, sizeof(h));
    T* base = reinterpret_cast<T*>(out.data() + 352);
    size_t i = 0;
    for (int d = 0; d < g.d(); ++d)
        for (int w = 0; w < g.w(); ++w)
            for (int hh = 0; hh < g.h(); ++hh, ++i) base[i] = g(hh, w, d);

    write_file_maybe_gz(path, out.data(), out.size(), has_suffix(path.string(), ".gz"));
}

// ----------------------------------------------------- raw + JSON sidecar --

struct RawInfo {
    Shape3 shape;
    std::array<double, 3> spacing;
    std::string dtype;  // "f32" | "u8"
};

inline RawInfo read_sidecar(const fs::path& raw_path) {
    fs::path sp = io_detail::sidecar_path(raw_path);
    std::ifstream f(sp);
    if (!f) throw std::runtime_error("missing sidecar JSON: " + sp.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("bad sidecar JSON " + sp.string() + ": " + e.what());
    }
    RawInfo info;
    auto sh = j.at("shape");
    auto sc = j.at("spacing");
    if (sh.size() != 3 || sc.size() != 3) throw std::runtime_error("sidecar shape/spacing must have 3 entries: " + sp.string());
    for (int a = 0; a < 3; ++a) {
        info.shape[a] = sh[a].get<int>();
        info.spacing[a] = sc[a].get<double>();
    }
    info.dtype = j.at("dtype").get<std::string>();
    if (info.dtype != "f32" && info.dtype != "u8")
        throw std::runtime_error("sidecar dtype must be f32 or u8: " + sp.string());
    return info;
}

inline Volume load_raw_volume(const fs::path& path) {
    RawInfo info = read_sidecar(path);
    std::vector<char> buf = io_detail::read_file_maybe_gz(path);
    size_t nvox = static_cast<size_t>(info.shape[0]) * info.shape[1] * info.shape[2];
    size_t elem = info.dtype == "f32" ? 4 : 1;
    if (buf.size() != nvox * elem)
        throw std::runtime_error("raw file size " + std::to_string(buf.size()) + " does not match sidecar shape: " +
                                 path.string());
    Grid3<float> g(info.shape);
    if (info.dtype == "f32") {
        std::memcpy(g.data(), buf.data(), buf.size());
    } else {
        const uint8_t* p = reinterpret_cast<const uint8_t*>(buf.data());
        for (size_t i = 0; i < nvox; ++i) g[i] = static_cast<float>(p[i]);
    }
    return Volume(std::move(g), info.spacing);
}

template <typename T>
void save_raw(const fs::path& path, const Grid3<T>& g, const std::array<double, 3>& spacing) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, uint8_t>);
    json j;
    j["shape"] = {g.h(), g.w(), g.d()};
    j["spacing"] = {spacing[0], spacing[1], spacing[2]};
    j["dtype"] = std::is_same_v<T, float> ? "f32" : "u8";
    std::ofstream sf(io_detail::sidecar_path(path));
    if (!sf) throw std::runtime_error("cannot write sidecar for: " + path.string());
    sf << j.dump(2) << "\n";
    io_detail::write_file_maybe_gz(path, reinterpret_cast<const char*>(g.data()), g.size() * sizeof(T), false);
}

// ------------------------------------------------------------ case level ---

inline Volume load_volume(const fs::path& path) {
    if (io_detail::is_nifti_path(path)) return load_nifti(path);
    if (io_detail::is_raw_path(path)) return load_raw_volume(path);
    throw std::runtime_error("unsupported volume format (expect .nii, .nii.gz or .raw): " + path.string());
}

inline LabelMask volume_to_mask(const Volume& v, const std::string& origin) {
    Grid3<uint8_t> m(v.data.dims());
    for (size_t i = 0; i < v.data.size(); ++i) {
        float x = v.data[i];
        if (x != 0.f && x != 1.f && x != 2.f)
            throw std::runtime_error("illegal label value " + std::to_string(x) + " in " + origin +
                                     " (allowed: 0, 1, 2)");
        m[i] = static_cast<uint8_t>(x);
    }
    return LabelMask(std::move(m));
}

inline LabelMask load_mask(const fs::path& path) { return volume_to_mask(load_volume(path), path.string()); }

inline Case load_case(const fs::path& image_path, const std::optional<fs::path>& truth_path,
                      const std::string& scanner) {
    Case c;
    c.id = image_path.stem().string();
    if (io_detail::has_suffix(c.id, ".nii")) c.id = c.id.substr(0, c.id.size() - 4);
    c.scanner = scanner;
    c.image = load_volume(image_path);
    if (truth_path) {
        c.truth = load_mask(*truth_path);
        if (!c.truth->data.same_shape(c.image.data))
            throw std::runtime_error("shape mismatch: image " + shape3_str(c.image.data.dims()) + " vs truth " +
                                     shape3_str(c.truth->data.dims()) + " for " + image_path.string());
    }
    return c;
}

inline void save_mask(const LabelMask& mask, const fs::path& path,
                      const std::array<double, 3>& spacing = {1.0, 1.0, 1.0}) {
    mask.validate();
    if (io_detail::is_nifti_path(path))
        save_nifti(path, mask.data, spacing);
    else if (io_detail::is_raw_path(path))
        save_raw(path, mask.data, spacing);
    else
        throw std::runtime_error("unsupported mask format (expect .nii, .nii.gz or .raw): " + path.string());
}

inline void save_volume(const Volume& v, const fs::path& path) {
    if (io_detail::is_nifti_path(path))
        save_nifti(path, v.data, v.spacing);
    else if (io_detail::is_raw_path(path))
        save_raw(path, v.data, v.spacing);
    else
        throw std::runtime_error("unsupported volume format: " + path.string());
}

// ------------------------------------------------------- dataset manifest --
// dataset.json: { "cases": [ { "id", "scanner", "image", "truth"? } ] }
// with image/truth paths relative to the manifest directory.

struct DatasetEntry {
    std::string id;
    std::string scanner;
    std::string image;
    std::optional<std::string> truth;
};

inline std::vector<DatasetEntry> read_dataset_manifest(const fs::path& dir) {
    fs::path mp = dir / "dataset.json";
    std::ifstream f(mp);
    if (!f) throw std::runtime_error("dataset manifest not found: " + mp.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("bad dataset manifest " + mp.string() + ": " + e.what());
    }
    std::vector<DatasetEntry> out;
    for (const auto& cj : j.at("cases")) {
        DatasetEntry e;
        e.id = cj.at("id").get<std::string>();
        e.scanner = cj.value("scanner", std::string("unknown"));
        e.image = cj.at("image").get<std::string>();
        if (cj.contains("truth") && !cj["truth"].is_null()) e.truth = cj["truth"].get<std::string>();
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_dataset_manifest(const fs::path& dir, const std::vector<DatasetEntry>& entries) {
    json cases = json::array();
    for (const auto& e : entries) {
        json cj{{"id", e.id}, {"scanner", e.scanner}, {"image", e.image}};
        if (e.truth) cj["truth"] = *e.truth;
        cases.push_back(cj);
    }
    std::ofstream f(dir / "dataset.json");
    if (!f) throw std::runtime_error("cannot write dataset manifest in: " + dir.string());
    f << json{{"cases", cases}}.dump(2) << "\n";
}

inline std::vector<Case> load_dataset(const fs::path& dir, bool need_truth) {
    auto entries = read_dataset_manifest(dir);
    std::vector<Case> cases;
    for (const auto& e : entries) {
        std::optional<fs::path> tp;
        if (e.truth) tp = dir / *e.truth;
        if (need_truth && !tp) throw std::runtime_error("case " + e.id + " has no truth mask in " + dir.string());
        Case c = load_case(dir / e.image, tp, e.scanner);
        c.id = e.id;
        cases.push_back(std::move(c));
    }
    return cases;
}

}  // namespace sav
