#include "trackrank/data.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <map>

#include "trackrank/parallel.hpp"

namespace trackrank {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'K', 'F'};
constexpr uint32_t kVersion = 1;

void put_u32(char* out, uint32_t v) {
    out[0] = static_cast<char>(v & 0xff);
    out[1] = static_cast<char>((v >> 8) & 0xff);
    out[2] = static_cast<char>((v >> 16) & 0xff);
    out[3] = static_cast<char>((v >> 24) & 0xff);
}

uint32_t get_u32(const char* in) {
    return static_cast<uint32_t>(static_cast<unsigned char>(in[0])) |
           static_cast<uint32_t>(static_cast<unsigned char>(in[1])) << 8 |
           static_cast<uint32_t>(static_cast<unsigned char>(in[2])) << 16 |
           static_cast<uint32_t>(static_cast<unsigned char>(in[3])) << 24;
}

template <typename UInt>
void put_bits(std::vector<char>& out, UInt bits) {
    for (size_t b = 0; b < sizeof(UInt); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

template <typename UInt>
UInt get_bits(const char* in) {
    UInt bits = 0;
    for (size_t b = 0; b < sizeof(UInt); ++b)
        bits |= static_cast<UInt>(static_cast<unsigned char>(in[b])) << (8 * b);
    return bits;
}

}  // namespace

void write_trkf(const std::filesystem::path& path, const Tensor& tensor, StorageDtype dtype) {
    if (!tensor.defined() || tensor.rank() < 1 || tensor.rank() > 4)
        throw IoError("write_trkf: tensor rank must be 1..4");
    std::vector<char> buf;
    buf.resize(32, 0);
    buf[0] = kMagic[0];
    buf[1] = kMagic[1];
    buf[2] = kMagic[2];
    buf[3] = kMagic[3];
    put_u32(buf.data() + 4, kVersion);
    put_u32(buf.data() + 8, static_cast<uint32_t>(dtype));
    put_u32(buf.data() + 12, static_cast<uint32_t>(tensor.rank()));
    for (int64_t i = 0; i < tensor.rank(); ++i)
        put_u32(buf.data() + 16 + 4 * i, static_cast<uint32_t>(tensor.dim(i)));
    buf.reserve(32 + tensor.value().size() * (dtype == StorageDtype::f32 ? 4 : 8));
    for (double v : tensor.value()) {
        if (dtype == StorageDtype::f32)
            put_bits(buf, std::bit_cast<uint32_t>(static_cast<float>(v)));
        else
            put_bits(buf, std::bit_cast<uint64_t>(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("write_trkf: cannot open " + path.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write_trkf: short write to " + path.string());
}

Tensor read_trkf(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_trkf: cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 32) throw IoError("read_trkf: " + path.string() + " holds no 32-byte header");
    for (size_t i = 0; i < 4; ++i)
        if (buf[i] != kMagic[i])
            throw IoError("read_trkf: " + path.string() + ": bad magic at byte " + std::to_string(i));
    const uint32_t version = get_u32(buf.data() + 4);
    if (version != kVersion)
        throw IoError("read_trkf: " + path.string() + ": unsupported version " + std::to_string(version));
    const uint32_t dtype = get_u32(buf.data() + 8);
    if (dtype > 1) throw IoError("read_trkf: " + path.string() + ": unknown dtype code " + std::to_string(dtype));
    const uint32_t rank = get_u32(buf.data() + 12);
    if (rank < 1 || rank > 4)
        throw IoError("read_trkf: " + path.string() + ": rank " + std::to_string(rank) + " outside 1..4");
    Shape shape;
    int64_t numel = 1;
    for (uint32_t i = 0; i < 4; ++i) {
        const uint32_t d = get_u32(buf.data() + 16 + 4 * i);
        if (i < rank) {
            if (d == 0) throw IoError("read_trkf: " + path.string() + ": zero extent in dimension " + std::to_string(i));
            shape.push_back(static_cast<int64_t>(d));
            numel *= static_cast<int64_t>(d);
        } else if (d != 0) {
            throw IoError("read_trkf: " + path.string() + ": nonzero padding in header dims");
        }
    }
    const size_t width = dtype == 0 ? 4 : 8;
    if (buf.size() != 32 + static_cast<size_t>(numel) * width)
        throw IoError("read_trkf: " + path.string() + ": payload holds " + std::to_string(buf.size() - 32) +
                      " bytes, header declares " + std::to_string(static_cast<size_t>(numel) * width));
    std::vector<double> data(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) {
        const char* p = buf.data() + 32 + static_cast<size_t>(i) * width;
        data[static_cast<size_t>(i)] = dtype == 0 ? static_cast<double>(std::bit_cast<float>(get_bits<uint32_t>(p)))
                                                  : std::bit_cast<double>(get_bits<uint64_t>(p));
    }
    return Tensor::from(shape, std::move(data));
}

namespace {

using nlohmann::json;

void expect_keys(const json& obj, const std::vector<std::string>& keys, const std::string& where) {
    for (const auto& item : obj.items())
        if (std::find(keys.begin(), keys.end(), item.key()) == keys.end())
            throw IoError("manifest: unknown key '" + item.key() + "' in " + where);
    for (const auto& k : keys)
        if (!obj.contains(k)) throw IoError("manifest: missing key '" + k + "' in " + where);
}

}  // namespace

FrameLayout layout_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind")) throw IoError("manifest: layout must be an object with 'kind'");
    const std::string kind = j.at("kind").get<std::string>();
    FrameLayout layout;
    if (kind == "vector") {
        expect_keys(j, {"kind", "dim"}, "layout");
        layout = {1, 1, j.at("dim").get<int64_t>()};
    } else if (kind == "map") {
        expect_keys(j, {"kind", "width", "height", "channels"}, "layout");
        layout = {j.at("width").get<int64_t>(), j.at("height").get<int64_t>(), j.at("channels").get<int64_t>()};
    } else {
        throw IoError("manifest: layout kind must be 'vector' or 'map', got '" + kind + "'");
    }
    if (layout.w < 1 || layout.h < 1 || layout.c < 1) throw IoError("manifest: layout extents must be >= 1");
    return layout;
}

nlohmann::json layout_to_json(const FrameLayout& layout) {
    if (layout.is_map())
        return {{"kind", "map"}, {"width", layout.w}, {"height", layout.h}, {"channels", layout.c}};
    return {{"kind", "vector"}, {"dim", layout.c}};
}

namespace {

Shape expected_frames_shape(const FrameLayout& layout, int64_t frames) {
    if (layout.is_map()) return {frames, layout.w, layout.h, layout.c};
    return {frames, layout.c};
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("load_dataset: cannot open " + manifest_path.string());
    json m;
    try {
        m = json::parse(f);
    } catch (const json::parse_error& e) {
        throw IoError("load_dataset: " + manifest_path.string() + ": " + e.what());
    }
    expect_keys(m, {"version", "layout", "tracklets"}, "manifest");
    if (m.at("version").get<int64_t>() != 1)
        throw IoError("load_dataset: unsupported manifest version " + m.at("version").dump());
    Dataset ds;
    ds.layout = layout_from_json(m.at("layout"));
    const auto& list = m.at("tracklets");
    if (!list.is_array()) throw IoError("manifest: tracklets must be an array");

    const std::filesystem::path base = manifest_path.parent_path();
    struct Declared {
        int identity;
        int camera;
        std::filesystem::path path;
        int64_t frames;
    };
    std::vector<Declared> declared;
    for (size_t i = 0; i < list.size(); ++i) {
        const auto& t = list[i];
        expect_keys(t, {"identity", "camera", "path", "frames"}, "tracklet " + std::to_string(i));
        Declared d{t.at("identity").get<int>(), t.at("camera").get<int>(),
                   base / t.at("path").get<std::string>(), t.at("frames").get<int64_t>()};
        if (d.identity < 0 || d.camera < 0 || d.frames < 1)
            throw IoError("manifest: tracklet " + std::to_string(i) + " has invalid identity/camera/frames");
        declared.push_back(std::move(d));
    }

    ds.tracklets.resize(declared.size());
    parallel_for(static_cast<int64_t>(declared.size()), [&](int64_t i) {
        const Declared& d = declared[static_cast<size_t>(i)];
        Tensor frames = read_trkf(d.path);
        const Shape want = expected_frames_shape(ds.layout, d.frames);
        if (frames.shape() != want)
            throw IoError("load_dataset: tracklet " + std::to_string(i) + " (" + d.path.string() + "): declared " +
                          shape_str(want) + ", file holds " + shape_str(frames.shape()));
        ds.tracklets[static_cast<size_t>(i)] = Tracklet{d.identity, d.camera, frames};
    });

    // contiguous identity re-index, ascending original id
    std::map<int, int> remap;
    for (const auto& t : ds.tracklets) remap.emplace(t.identity, 0);
    for (auto& [orig, contig] : remap) {
        contig = static_cast<int>(ds.identity_map.size());
        ds.identity_map.push_back(orig);
    }
    for (auto& t : ds.tracklets) t.identity = remap.at(t.identity);
    return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& name,
                   StorageDtype dtype) {
    std::filesystem::create_directories(dir);
    json tracklets = json::array();
    for (size_t i = 0; i < dataset.tracklets.size(); ++i) {
        const Tracklet& t = dataset.tracklets[i];
        char suffix[16];
        std::snprintf(suffix, sizeof(suffix), "_%04zu.trkf", i);
        const std::string fname = name + suffix;
        write_trkf(dir / fname, t.frames, dtype);
        tracklets.push_back({{"identity", dataset.original_identity(t.identity)},
                             {"camera", t.camera},
                             {"path", fname},
                             {"frames", t.length()}});
    }
    const json manifest = {{"version", 1}, {"layout", layout_to_json(dataset.layout)}, {"tracklets", tracklets}};
    std::ofstream f(dir / (name + ".json"), std::ios::trunc);
    if (!f) throw IoError("write_dataset: cannot open " + (dir / (name + ".json")).string());
    f << manifest.dump(2) << "\n";
}

SyntheticData generate_synthetic(const SynthConfig& config) {
    if (config.num_identities < 1) throw IoError("generate_synthetic: need at least one identity");
    if (config.tracklets_per_identity < 2)
        throw IoError("generate_synthetic: need >= 2 tracklets per identity for a query/gallery split");
    if (config.frames_per_tracklet < 1) throw IoError("generate_synthetic: frames_per_tracklet must be >= 1");
    if (config.layout.w < 1 || config.layout.h < 1 || config.layout.c < 1)
        throw IoError("generate_synthetic: layout extents must be >= 1");
    if (config.num_cameras < 2)
        throw IoError("generate_synthetic: a single camera cannot support the cross-camera evaluation split");
    if (config.sigma_within < 0) throw IoError("generate_synthetic: sigma_within must be >= 0");
    if (config.sigma_between <= 0) throw IoError("generate_synthetic: sigma_between must be > 0");
    const double drift = config.drift_rate < 0 ? 0.05 * config.sigma_within : config.drift_rate;
    const int64_t F = config.layout.frame_dim();

    auto make_split = [&](uint64_t stream, int id_base) {
        auto rng = seeded_engine(config.seed, stream);
        std::normal_distribution<double> n01(0.0, 1.0);
        Dataset ds;
        ds.layout = config.layout;
        for (int64_t id = 0; id < config.num_identities; ++id) {
            std::vector<double> centroid(static_cast<size_t>(F));
            for (auto& v : centroid) v = config.sigma_between * n01(rng);
            for (int64_t tr = 0; tr < config.tracklets_per_identity; ++tr) {
                std::vector<double> dir(static_cast<size_t>(F));
                double norm = 0.0;
                for (auto& v : dir) {
                    v = n01(rng);
                    norm += v * v;
                }
                norm = std::sqrt(norm);
                if (norm > 0)
                    for (auto& v : dir) v /= norm;
                std::vector<double> frames(static_cast<size_t>(config.frames_per_tracklet * F));
                for (int64_t fidx = 0; fidx < config.frames_per_tracklet; ++fidx)
                    for (int64_t d = 0; d < F; ++d)
                        frames[static_cast<size_t>(fidx * F + d)] =
                            centroid[static_cast<size_t>(d)] + config.sigma_within * n01(rng) +
                            drift * static_cast<double>(fidx) * dir[static_cast<size_t>(d)];
                Tracklet t;
                t.identity = static_cast<int>(id);
                t.camera = static_cast<int>(tr % config.num_cameras);
                t.frames = Tensor::from(expected_frames_shape(config.layout, config.frames_per_tracklet),
                                        std::move(frames));
                ds.tracklets.push_back(std::move(t));
            }
            ds.identity_map.push_back(id_base + static_cast<int>(id));
        }
        return ds;
    };

    SyntheticData out;
    out.train = make_split(0, 0);
    Dataset test = make_split(1, static_cast<int>(config.num_identities));
    out.query.layout = out.gallery.layout = config.layout;
    out.query.identity_map = out.gallery.identity_map = test.identity_map;
    for (size_t i = 0; i < test.tracklets.size(); ++i) {
        // first tracklet of each identity is the query, the rest the gallery
        if (i % static_cast<size_t>(config.tracklets_per_identity) == 0)
            out.query.tracklets.push_back(test.tracklets[i]);
        else
            out.gallery.tracklets.push_back(test.tracklets[i]);
    }
    return out;
}

}  // namespace trackrank
