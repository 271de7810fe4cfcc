#pragma once

#include "vlgs/query.hpp"
#include "vlgs/training.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vlgs {

// ---- Tensor files --------------------------------------------------------
//
// "MGST" | u32 version = 1 | u32 rank | rank x u32 dims | u8 dtype | payload
// All integers and the payload are little-endian; the payload is row-major.

inline constexpr std::uint32_t kTensorVersion = 1;

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1 };

struct Tensor {
    std::vector<std::uint32_t> dims;
    DType dtype = DType::Float32;
    std::vector<double> values;  // float32 payloads are held widened

    Tensor() = default;
    Tensor(std::vector<std::uint32_t> dims, DType dtype, std::vector<double> values);

    std::size_t element_count() const;
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

void write_tensor(std::ostream& out, const Tensor& t);
/// Throws LoadError naming `source` on bad magic, version, dtype, truncation or trailing bytes.
Tensor read_tensor(std::istream& in, const std::string& source = "<stream>");

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

Tensor feature_map_tensor(const FeatureMap& map, DType dtype = DType::Float32);
FeatureMap tensor_feature_map(const Tensor& t, const std::string& source);

// ---- Images --------------------------------------------------------------

/// 8-bit RGB PNG; values are clamped to [0,1] and rounded.
void save_png(const std::filesystem::path& path, const Image& image);
/// Decodes 8-bit gray/RGB/RGBA PNGs into [0,1].
Image load_png(const std::filesystem::path& path);

/// Min-max normalized scalar field through the heatmap lookup table.
Image heatmap(const std::vector<double>& values, int width, int height);

// ---- Scenes --------------------------------------------------------------

/// {"fx","fy","cx","cy","width","height","quaternion":[w,x,y,z],"translation":[x,y,z]}
std::string camera_json(const Camera& camera);
Camera parse_camera_json(const std::string& text, const std::string& where = "camera");

struct Frame {
    std::string name;
    TrainSample sample;
    bool held_out = false;
    std::optional<LabelMap> labels;
    std::vector<Box> boxes;
};

struct Scene {
    std::filesystem::path root;
    int feature_dim = kDefaultFeatureDim;
    std::vector<Frame> frames;
    std::optional<QuerySet> queries;
    /// Initialization points, N x 6 (position, color); empty when absent.
    std::vector<double> points;
    /// Parameters the scene was rendered from, when known.
    std::optional<std::filesystem::path> ground_truth;

    Dataset dataset() const;
    bool has_annotations() const;
};

/// Reads scene.json (or the manifest file itself) and everything it references.
Scene load_scene(const std::filesystem::path& path);

// ---- Checkpoints ---------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    TrainState state;
    FusionMode fusion = FusionMode::SelfAttention;
    IndicatorMode indicator;
    std::string config;       // canonical training configuration
    std::string config_hash;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg);

/// Writes `dir/index.json` and one `.mgst` block per array.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Throws LoadError on missing files, version mismatch or checksum failure.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// FNV-1a 64 of a byte string, hex encoded.
std::string checksum(const std::string& bytes);

}  // namespace vlgs
