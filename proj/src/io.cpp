#include "vlgs/io.hpp"

#include "vlgs/colormap.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace vlgs {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'G', 'S', 'T'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
public:
    Reader(std::istream& in, const std::string& source) : in_(in), source_(source) {}

    void bytes(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw LoadError(fmt::format("{}: truncated tensor file (while reading {})", source_, what));
        }
    }
    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4, what);
        return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
    }
    std::uint64_t u64(const char* what) {
        unsigned char b[8];
        bytes(reinterpret_cast<char*>(b), 8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = v << 8 | b[i];
        return v;
    }

private:
    std::istream& in_;
    const std::string& source_;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(fmt::format("failed writing '{}'", path.string()));
}

std::string tensor_bytes(const Tensor& t) {
    std::ostringstream ss;
    write_tensor(ss, t);
    return ss.str();
}

// ---- JSON helpers ----

template <class T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) {
        throw LoadError(fmt::format("{}: missing field '{}'", where, key));
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw LoadError(fmt::format("{}: field '{}' has the wrong type ({})", where, key, e.what()));
    }
}

json camera_to_json(const Camera& c) {
    return json{{"fx", c.fx},
                {"fy", c.fy},
                {"cx", c.cx},
                {"cy", c.cy},
                {"width", c.width},
                {"height", c.height},
                {"quaternion", {c.rotation[0], c.rotation[1], c.rotation[2], c.rotation[3]}},
                {"translation", {c.translation[0], c.translation[1], c.translation[2]}}};
}

Camera camera_from_json(const json& j, const std::string& where) {
    Camera c;
    c.fx = field<double>(j, "fx", where);
    c.fy = field<double>(j, "fy", where);
    c.cx = field<double>(j, "cx", where);
    c.cy = field<double>(j, "cy", where);
    c.width = field<int>(j, "width", where);
    c.height = field<int>(j, "height", where);
    const auto q = field<std::vector<double>>(j, "quaternion", where);
    const auto t = field<std::vector<double>>(j, "translation", where);
    if (q.size() != 4 || t.size() != 3) {
        throw LoadError(fmt::format("{}: camera quaternion needs 4 values and translation 3", where));
    }
    c.rotation = Eigen::Vector4d(q[0], q[1], q[2], q[3]);
    c.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    try {
        c.validate();
    } catch (const InvalidParameter& e) {
        throw LoadError(fmt::format("{}: {}", where, e.what()));
    }
    return c;
}

fs::path resolve(const fs::path& root, const std::string& rel) { return root / rel; }

Tensor load_existing_tensor(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) throw LoadError(fmt::format("{} '{}' does not exist", what, path.string()));
    return load_tensor(path);
}

LabelMap tensor_label_map(const Tensor& t, const std::string& source) {
    if (t.dims.size() != 2) throw LoadError(fmt::format("{}: label map must be H x W", source));
    LabelMap m(static_cast<int>(t.dims[1]), static_cast<int>(t.dims[0]));
    for (std::size_t i = 0; i < t.values.size(); ++i) {
        const double v = t.values[i];
        if (v != std::floor(v) || v < -1.0) throw LoadError(fmt::format("{}: label {} is not valid", source, v));
        m.labels[i] = static_cast<int>(v);
    }
    return m;
}

}  // namespace

std::string camera_json(const Camera& camera) { return camera_to_json(camera).dump(); }

Camera parse_camera_json(const std::string& text, const std::string& where) {
    try {
        return camera_from_json(json::parse(text), where);
    } catch (const json::parse_error& e) {
        throw LoadError(fmt::format("{}: invalid camera JSON ({})", where, e.what()));
    }
}

// ---- Tensors ----

Tensor::Tensor(std::vector<std::uint32_t> dims_, DType dtype_, std::vector<double> values_)
    : dims(std::move(dims_)), dtype(dtype_), values(std::move(values_)) {
    if (element_count() != values.size()) {
        throw InvalidParameter(fmt::format("tensor has {} values but its shape holds {}", values.size(),
                                           element_count()));
    }
}

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
}

void write_tensor(std::ostream& out, const Tensor& t) {
    if (t.element_count() != t.values.size()) throw InvalidParameter("tensor shape and payload disagree");
    if (t.dims.size() > kMaxRank) throw InvalidParameter("tensor rank too large");
    std::string buf(kMagic, 4);
    put_u32(buf, kTensorVersion);
    put_u32(buf, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32(buf, d);
    buf.push_back(static_cast<char>(t.dtype));
    buf.reserve(buf.size() + t.values.size() * (t.dtype == DType::Float32 ? 4 : 8));
    for (double v : t.values) {
        if (t.dtype == DType::Float32) {
            put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            put_u64(buf, std::bit_cast<std::uint64_t>(v));
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Tensor read_tensor(std::istream& in, const std::string& source) {
    Reader r(in, source);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw LoadError(fmt::format("{}: bad magic, not a tensor file", source));
    }
    const std::uint32_t version = r.u32("version");
    if (version != kTensorVersion) {
        throw LoadError(fmt::format("{}: unsupported tensor version {} (expected {})", source, version,
                                    kTensorVersion));
    }
    const std::uint32_t rank = r.u32("rank");
    if (rank > kMaxRank) throw LoadError(fmt::format("{}: corrupt header, rank {}", source, rank));
    Tensor t;
    t.dims.resize(rank);
    std::uint64_t count = 1;
    for (auto& d : t.dims) {
        d = r.u32("dims");
        count *= d;
        if (count > (std::uint64_t{1} << 34)) throw LoadError(fmt::format("{}: corrupt header, huge shape", source));
    }
    char dtype = 0;
    r.bytes(&dtype, 1, "dtype");
    if (dtype != 0 && dtype != 1) throw LoadError(fmt::format("{}: unknown dtype {}", source, int(dtype)));
    t.dtype = static_cast<DType>(dtype);
    t.values.resize(count);
    for (double& v : t.values) {
        v = t.dtype == DType::Float32 ? double{std::bit_cast<float>(r.u32("payload"))}
                                      : std::bit_cast<double>(r.u64("payload"));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw LoadError(fmt::format("{}: trailing bytes after the payload", source));
    }
    return t;
}

void save_tensor(const fs::path& path, const Tensor& t) { write_file(path, tensor_bytes(t)); }

Tensor load_tensor(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(fmt::format("cannot open tensor file '{}'", path.string()));
    return read_tensor(in, path.string());
}

Tensor feature_map_tensor(const FeatureMap& map, DType dtype) {
    return Tensor({static_cast<std::uint32_t>(map.height()), static_cast<std::uint32_t>(map.width()),
                   static_cast<std::uint32_t>(map.channels())},
                  dtype, map.values());
}

FeatureMap tensor_feature_map(const Tensor& t, const std::string& source) {
    if (t.dims.size() != 3) throw LoadError(fmt::format("{}: feature map must be H x W x C", source));
    FeatureMap m(static_cast<int>(t.dims[1]), static_cast<int>(t.dims[0]), static_cast<int>(t.dims[2]));
    m.values() = t.values;
    for (double v : t.values) {
        if (!std::isfinite(v)) throw LoadError(fmt::format("{}: non-finite feature value", source));
    }
    return m;
}

// ---- PNG ----

void save_png(const fs::path& path, const Image& image) {
    std::vector<png_byte> bytes(image.values().size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double v = std::clamp(image.values()[i], 0.0, 1.0);
        bytes[i] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw Error(fmt::format("cannot write PNG '{}': {}", path.string(), msg));
    }
}

Image load_png(const fs::path& path) {
    if (!fs::exists(path)) throw LoadError(fmt::format("image '{}' does not exist", path.string()));
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw LoadError(fmt::format("cannot decode PNG '{}': {}", path.string(), msg));
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> bytes(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw LoadError(fmt::format("cannot decode PNG '{}': {}", path.string(), msg));
    }
    Image out(static_cast<int>(img.width), static_cast<int>(img.height));
    for (std::size_t i = 0; i < bytes.size(); ++i) out.values()[i] = bytes[i] / 255.0;
    return out;
}

Image heatmap(const std::vector<double>& values, int width, int height) {
    if (values.size() != static_cast<std::size_t>(width) * height) {
        throw InvalidParameter("heatmap: value count does not match the size");
    }
    Image out(width, height);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double t = range > 0.0 ? (values[i] - *lo) / range : 0.0;
        const auto& c = kHeatmapLut[static_cast<std::size_t>(std::lround(t * 255.0))];
        for (int k = 0; k < 3; ++k) out.values()[3 * i + k] = c[k] / 255.0;
    }
    return out;
}

// ---- Scenes ----

Dataset Scene::dataset() const {
    Dataset d;
    d.feature_dim = feature_dim;
    for (const Frame& f : frames) (f.held_out ? d.test : d.train).push_back(f.sample);
    return d;
}

bool Scene::has_annotations() const {
    if (!queries) return false;
    return std::all_of(frames.begin(), frames.end(), [](const Frame& f) { return f.labels.has_value(); });
}

Scene load_scene(const fs::path& path) {
    const fs::path manifest = fs::is_directory(path) ? path / "scene.json" : path;
    if (!fs::exists(manifest)) throw LoadError(fmt::format("scene manifest '{}' does not exist", manifest.string()));
    json j;
    try {
        j = json::parse(read_file(manifest));
    } catch (const json::parse_error& e) {
        throw LoadError(fmt::format("{}: invalid JSON ({})", manifest.string(), e.what()));
    }
    const std::string where = manifest.string();
    Scene scene;
    scene.root = manifest.parent_path();
    scene.feature_dim = field<int>(j, "feature_dim", where);
    if (scene.feature_dim < 1) throw LoadError(fmt::format("{}: feature_dim must be positive", where));

    if (j.contains("queries")) {
        const json& q = j.at("queries");
        QuerySet qs;
        qs.labels = field<std::vector<std::string>>(q, "labels", where + " queries");
        const fs::path emb = resolve(scene.root, field<std::string>(q, "embeddings", where + " queries"));
        const Tensor t = load_existing_tensor(emb, "query embeddings");
        if (t.dims.size() != 2 || t.dims[0] != qs.labels.size() ||
            t.dims[1] != static_cast<std::uint32_t>(scene.feature_dim)) {
            throw LoadError(fmt::format("{}: expected {} x {} query embeddings", emb.string(), qs.labels.size(),
                                        scene.feature_dim));
        }
        for (std::size_t i = 0; i < qs.labels.size(); ++i) {
            qs.embeddings.emplace_back(Eigen::Map<const Eigen::VectorXd>(t.values.data() + i * t.dims[1], t.dims[1]));
        }
        try {
            qs.validate();
        } catch (const InvalidParameter& e) {
            throw LoadError(fmt::format("{}: {}", emb.string(), e.what()));
        }
        scene.queries = std::move(qs);
    }
    if (j.contains("points")) {
        const fs::path p = resolve(scene.root, j.at("points").get<std::string>());
        const Tensor t = load_existing_tensor(p, "point file");
        if (t.dims.size() != 2 || (t.dims[1] != 6 && t.dims[0] != 0)) {
            throw LoadError(fmt::format("{}: points must be N x 6", p.string()));
        }
        scene.points = t.values;
    }
    if (j.contains("ground_truth")) scene.ground_truth = resolve(scene.root, j.at("ground_truth").get<std::string>());

    const json frames = j.contains("frames") ? j.at("frames") : json::array();
    if (!frames.is_array()) throw LoadError(fmt::format("{}: 'frames' must be an array", where));
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const json& fj = frames[i];
        const std::string fw = fmt::format("{} frame {}", where, i);
        Frame f;
        f.name = fj.value("name", fmt::format("{:03}", i));
        f.sample.camera = camera_from_json(field<json>(fj, "camera", fw), fw);
        const fs::path image_path = resolve(scene.root, field<std::string>(fj, "image", fw));
        f.sample.image = load_png(image_path);
        const fs::path feature_path = resolve(scene.root, field<std::string>(fj, "features", fw));
        f.sample.gt_features = tensor_feature_map(load_existing_tensor(feature_path, "feature map"),
                                                  feature_path.string());
        const Camera& c = f.sample.camera;
        if (f.sample.image.width() != c.width || f.sample.image.height() != c.height) {
            throw LoadError(fmt::format("{}: image '{}' is {}x{} but the camera is {}x{}", fw, image_path.string(),
                                        f.sample.image.width(), f.sample.image.height(), c.width, c.height));
        }
        if (f.sample.gt_features.width() != c.width || f.sample.gt_features.height() != c.height ||
            f.sample.gt_features.channels() != scene.feature_dim) {
            throw LoadError(fmt::format("{}: feature map '{}' is {}x{}x{}, expected {}x{}x{}", fw,
                                        feature_path.string(), f.sample.gt_features.width(),
                                        f.sample.gt_features.height(), f.sample.gt_features.channels(), c.width,
                                        c.height, scene.feature_dim));
        }
        const std::string split = fj.value("split", "train");
        if (split != "train" && split != "test") throw LoadError(fmt::format("{}: unknown split '{}'", fw, split));
        f.held_out = split == "test";
        const int classes = scene.queries ? static_cast<int>(scene.queries->size()) : 0;
        if (fj.contains("labels")) {
            const fs::path lp = resolve(scene.root, fj.at("labels").get<std::string>());
            LabelMap lm = tensor_label_map(load_existing_tensor(lp, "label map"), lp.string());
            if (lm.width != c.width || lm.height != c.height) {
                throw LoadError(fmt::format("{}: label map '{}' does not match the image size", fw, lp.string()));
            }
            for (int l : lm.labels) {
                if (l >= classes) throw LoadError(fmt::format("{}: label {} has no query", fw, l));
            }
            f.labels = std::move(lm);
        }
        if (fj.contains("boxes")) {
            for (const json& b : fj.at("boxes")) {
                const auto v = b.get<std::vector<int>>();
                if (v.size() != 5 || v[0] < 0 || v[0] >= classes) {
                    throw LoadError(fmt::format("{}: boxes are [label, x0, y0, x1, y1] with a known label", fw));
                }
                f.boxes.push_back({v[0], v[1], v[2], v[3], v[4]});
            }
        }
        scene.frames.push_back(std::move(f));
    }
    return scene;
}

// ---- Checkpoints ----

std::string checksum(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return fmt::format("{:016x}", h);
}

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg) {
    Checkpoint c;
    c.state = state;
    c.fusion = cfg.fusion;
    c.indicator = cfg.indicator;
    c.config = cfg.canonical();
    c.config_hash = cfg.hash();
    return c;
}

namespace {

std::vector<std::pair<std::string, Tensor>> checkpoint_blocks(const Checkpoint& ckpt) {
    const GaussianCloud& c = ckpt.state.cloud;
    const auto n = static_cast<std::uint32_t>(c.size());
    const auto fd = static_cast<std::uint32_t>(c.feature_dim);
    std::vector<std::pair<std::string, Tensor>> blocks;
    auto add = [&](std::string name, std::vector<std::uint32_t> dims, const std::vector<double>& v) {
        blocks.emplace_back(std::move(name), Tensor(std::move(dims), DType::Float64, v));
    };
    add("cloud.positions", {n, 3}, c.positions);
    add("cloud.log_scales", {n, 3}, c.log_scales);
    add("cloud.rotations", {n, 4}, c.rotations);
    add("cloud.opacity_logits", {n}, c.opacity_logits);
    add("cloud.color_logits", {n, 3}, c.color_logits);
    add("cloud.features", {n, fd}, c.features);
    add("cloud.indicator_logits", {n}, c.indicator_logits);
    ckpt.state.weights.for_each_block([&](const char* name, std::span<const double> s) {
        add(std::string("attention.") + name, {static_cast<std::uint32_t>(s.size())}, {s.begin(), s.end()});
    });
    for (std::size_t g = 0; g < kParamGroups; ++g) {
        const AdamMoments& m = ckpt.state.optimizer.groups[g];
        const std::string base = "adam." + to_string(kAllGroups[g]);
        add(base + ".m", {static_cast<std::uint32_t>(m.m.size())}, m.m);
        add(base + ".v", {static_cast<std::uint32_t>(m.v.size())}, m.v);
    }
    return blocks;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
    ckpt.state.cloud.validate();
    ckpt.state.weights.validate();
    fs::create_directories(dir);
    json index;
    index["format"] = "vlgs-checkpoint";
    index["version"] = kCheckpointVersion;
    index["config"] = ckpt.config;
    index["config_hash"] = ckpt.config_hash;
    index["fusion"] = to_string(ckpt.fusion);
    index["indicator"] = ckpt.indicator.to_string();
    index["iteration"] = ckpt.state.iteration;
    index["gaussians"] = ckpt.state.cloud.size();
    index["feature_dim"] = ckpt.state.cloud.feature_dim;
    const AttentionWeights& w = ckpt.state.weights;
    index["attention"] = {{"color_dim", w.color_dim}, {"feature_dim", w.feature_dim},
                          {"attention_dim", w.attention_dim}};
    std::ostringstream pair_rng, ratio_rng;
    pair_rng << ckpt.state.pair_rng;
    ratio_rng << ckpt.state.ratio_rng;
    index["rng"] = {{"pair", pair_rng.str()}, {"ratio", ratio_rng.str()}};
    json steps = json::object();
    for (std::size_t g = 0; g < kParamGroups; ++g) {
        steps[to_string(kAllGroups[g])] = ckpt.state.optimizer.groups[g].step;
    }
    index["adam_steps"] = steps;
    json blocks = json::object();
    for (const auto& [name, tensor] : checkpoint_blocks(ckpt)) {
        const std::string bytes = tensor_bytes(tensor);
        const std::string file = name + ".mgst";
        write_file(dir / file, bytes);
        blocks[name] = {{"file", file}, {"bytes", bytes.size()}, {"checksum", checksum(bytes)}};
    }
    index["blocks"] = blocks;
    write_file(dir / "index.json", index.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path index_path = dir / "index.json";
    if (!fs::exists(index_path)) throw LoadError(fmt::format("checkpoint index '{}' does not exist", index_path.string()));
    const std::string where = index_path.string();
    json index;
    try {
        index = json::parse(read_file(index_path));
    } catch (const json::parse_error& e) {
        throw LoadError(fmt::format("{}: corrupt checkpoint index ({})", where, e.what()));
    }
    if (index.value("format", "") != "vlgs-checkpoint") {
        throw LoadError(fmt::format("{}: not a checkpoint index", where));
    }
    const int version = field<int>(index, "version", where);
    if (version != kCheckpointVersion) {
        throw LoadError(fmt::format("{}: unsupported checkpoint version {} (expected {})", where, version,
                                    kCheckpointVersion));
    }
    Checkpoint ckpt;
    ckpt.config = field<std::string>(index, "config", where);
    ckpt.config_hash = field<std::string>(index, "config_hash", where);
    try {
        ckpt.fusion = parse_fusion_mode(field<std::string>(index, "fusion", where));
        ckpt.indicator = IndicatorMode::parse(field<std::string>(index, "indicator", where));
    } catch (const InvalidParameter& e) {
        throw LoadError(fmt::format("{}: {}", where, e.what()));
    }
    const auto n = field<std::size_t>(index, "gaussians", where);
    const int fd = field<int>(index, "feature_dim", where);
    const json att = field<json>(index, "attention", where);
    if (fd < 1) throw LoadError(fmt::format("{}: feature_dim must be positive", where));
    TrainState& s = ckpt.state;
    s.iteration = field<std::int64_t>(index, "iteration", where);
    s.cloud = GaussianCloud(n, fd);
    try {
        s.weights = AttentionWeights(field<int>(att, "color_dim", where), field<int>(att, "feature_dim", where),
                                     field<int>(att, "attention_dim", where));
    } catch (const InvalidParameter& e) {
        throw LoadError(fmt::format("{}: {}", where, e.what()));
    }
    {
        std::istringstream pr(field<std::string>(field<json>(index, "rng", where), "pair", where));
        std::istringstream rr(field<std::string>(field<json>(index, "rng", where), "ratio", where));
        pr >> s.pair_rng;
        rr >> s.ratio_rng;
        if (pr.fail() || rr.fail()) throw LoadError(fmt::format("{}: corrupt random state", where));
    }
    const json steps = field<json>(index, "adam_steps", where);
    for (std::size_t g = 0; g < kParamGroups; ++g) {
        s.optimizer.groups[g].step = field<std::int64_t>(steps, to_string(kAllGroups[g]).c_str(), where);
    }

    const json blocks = field<json>(index, "blocks", where);
    auto load_block = [&](const std::string& name, std::size_t expected, bool may_be_empty = false) {
        const json b = field<json>(blocks, name.c_str(), where);
        const fs::path file = dir / field<std::string>(b, "file", where);
        if (!fs::exists(file)) throw LoadError(fmt::format("checkpoint block '{}' does not exist", file.string()));
        const std::string bytes = read_file(file);
        if (bytes.size() != field<std::size_t>(b, "bytes", where) ||
            checksum(bytes) != field<std::string>(b, "checksum", where)) {
            throw LoadError(fmt::format("checkpoint block '{}' is corrupt (size or checksum mismatch)", file.string()));
        }
        std::istringstream in(bytes);
        Tensor t = read_tensor(in, file.string());
        if (t.values.size() != expected && !(may_be_empty && t.values.empty())) {
            throw LoadError(fmt::format("checkpoint block '{}' holds {} values, expected {}", file.string(),
                                        t.values.size(), expected));
        }
        return std::move(t.values);
    };
    GaussianCloud& c = s.cloud;
    c.positions = load_block("cloud.positions", 3 * n);
    c.log_scales = load_block("cloud.log_scales", 3 * n);
    c.rotations = load_block("cloud.rotations", 4 * n);
    c.opacity_logits = load_block("cloud.opacity_logits", n);
    c.color_logits = load_block("cloud.color_logits", 3 * n);
    c.features = load_block("cloud.features", n * static_cast<std::size_t>(fd));
    c.indicator_logits = load_block("cloud.indicator_logits", n);
    s.weights.for_each_block([&](const char* name, std::span<double> dst) {
        const auto v = load_block(std::string("attention.") + name, dst.size());
        std::copy(v.begin(), v.end(), dst.begin());
    });
    for (std::size_t g = 0; g < kParamGroups; ++g) {
        AdamMoments& m = s.optimizer.groups[g];
        const std::string base = "adam." + to_string(kAllGroups[g]);
        std::size_t size = 0;
        for (const auto& b : group_blocks(s.cloud, s.weights, kAllGroups[g])) size += b.size();
        m.m = load_block(base + ".m", size, true);
        m.v = load_block(base + ".v", size, true);
        if (m.m.size() != m.v.size() || (m.m.empty() && m.step != 0)) {
            throw LoadError(fmt::format("{}: optimizer state for {} is inconsistent", where, base));
        }
    }
    try {
        c.validate();
        s.weights.validate();
    } catch (const InvalidParameter& e) {
        throw LoadError(fmt::format("{}: {}", where, e.what()));
    }
    return ckpt;
}

}  // namespace vlgs
