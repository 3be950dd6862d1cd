#pragma once

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "trackrank/sampling.hpp"

namespace trackrank {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class StorageDtype { f32 = 0, f64 = 1 };

/// Manifest encoding of a frame layout: {"kind":"vector","dim":D} or
/// {"kind":"map","width":W,"height":H,"channels":C}.
FrameLayout layout_from_json(const nlohmann::json& j);
nlohmann::json layout_to_json(const FrameLayout& layout);

/// Fixed 32-byte header (magic "TRKF", u32 version, u32 dtype, u32 rank,
/// u32 dims[4]) followed by the row-major little-endian payload.
void write_trkf(const std::filesystem::path& path, const Tensor& tensor, StorageDtype dtype = StorageDtype::f64);
Tensor read_trkf(const std::filesystem::path& path);

struct Dataset {
    FrameLayout layout;
    std::vector<Tracklet> tracklets;  // identity holds the contiguous re-index
    std::vector<int> identity_map;    // contiguous id -> original manifest id
    int64_t num_identities() const { return static_cast<int64_t>(identity_map.size()); }
    int original_identity(int contiguous) const { return identity_map.at(static_cast<size_t>(contiguous)); }
};

/// Parses a JSON manifest ({version, layout, tracklets}), loads every feature
/// file, verifies declared shapes, and re-indexes identities contiguously.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes <dir>/<name>.json plus one <name>_NNNN.trkf per tracklet; the
/// manifest records original identities so a round trip is the identity.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& name,
                   StorageDtype dtype = StorageDtype::f64);

struct SynthConfig {
    int64_t num_identities = 16;  // per split: train and test draw disjoint sets
    int64_t tracklets_per_identity = 4;
    int64_t frames_per_tracklet = 16;
    FrameLayout layout{1, 1, 32};
    int num_cameras = 2;
    double sigma_within = 1.0;   // per-frame noise around the identity centroid
    double sigma_between = 10.0; // centroid scale
    double drift_rate = -1.0;    // < 0 selects the default 0.05 * sigma_within
    uint64_t seed = 0;
};

struct SyntheticData {
    Dataset train;
    Dataset query;    // first tracklet of every test identity
    Dataset gallery;  // the remaining test tracklets
};

/// Per identity, a centroid from N(0, sigma_between^2 I); per frame,
/// centroid + N(0, sigma_within^2 I) + f * drift along a per-tracklet unit
/// direction. Cameras alternate over tracklets so every identity appears in
/// at least two. Pure function of the config.
SyntheticData generate_synthetic(const SynthConfig& config);

}  // namespace trackrank
