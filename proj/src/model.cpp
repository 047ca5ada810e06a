#include "swiftpan/model.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace swiftpan {

namespace fs = std::filesystem;

std::string arch_name(Arch arch) { return arch == Arch::TinyPnn ? "tiny_pnn" : "tiny_residual"; }

Arch parse_arch(const std::string& name) {
    if (name == "tiny_pnn") return Arch::TinyPnn;
    if (name == "tiny_residual") return Arch::TinyResidual;
    throw ConfigError("unknown arch '" + name + "' (expected tiny_pnn or tiny_residual)");
}

void ModelConfig::validate() const {
    if (bands < 1) throw ConfigError("model bands must be >= 1");
    if (channels < 4) throw ConfigError("model channels must be >= 4");
    if (depth < 2) throw ConfigError("model depth must be >= 2");
    if (ratio < 1) throw ConfigError("model ratio must be >= 1");
}

namespace {

template <typename Get>
Batch assemble(std::size_t n, Get&& get, int ratio, bool with_gt) {
    if (n == 0) throw ShapeError("make_batch: empty batch");
    std::vector<Tensor> ms, pan, gt;
    for (std::size_t i = 0; i < n; ++i) {
        const ScenePair& s = get(i);
        ms.push_back(upsample_bicubic(s.lrms, ratio));
        pan.push_back(s.pan);
        if (with_gt) gt.push_back(s.gt);
    }
    Batch b{stack(ms), stack(pan), {}};
    if (with_gt) b.gt = stack(gt);
    return b;
}

}  // namespace

Batch make_batch(std::span<const ScenePair> scenes, int ratio, bool with_gt) {
    return assemble(scenes.size(), [&](std::size_t i) -> const ScenePair& { return scenes[i]; }, ratio, with_gt);
}

Batch make_batch(std::span<const ScenePair* const> scenes, int ratio, bool with_gt) {
    return assemble(scenes.size(), [&](std::size_t i) -> const ScenePair& { return *scenes[i]; }, ratio, with_gt);
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    Graph& g = m.graph_;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const NodeId ms = g.input("ms_up");
    const NodeId pan = g.input("pan");
    NodeId x = g.concat({ms, pan});
    int in_ch = config.bands + 1;
    for (int l = 0; l < config.depth; ++l) {
        const int out_ch = l + 1 == config.depth ? config.bands : config.channels;
        const int fan_in = in_ch * 9;
        const double scale = std::sqrt(2.0 / fan_in);
        Tensor w({out_ch, in_ch, 3, 3});
        for (auto& v : w.data()) v = static_cast<float>(scale * normal(rng));
        const std::string prefix = "conv" + std::to_string(l + 1);
        const NodeId wn = g.param(prefix + ".weight", std::move(w));
        const NodeId bn = g.param(prefix + ".bias", Tensor({out_ch}));
        x = g.conv2d(x, wn, bn, 1);
        if (l + 1 < config.depth) x = g.relu(x);
        in_ch = out_ch;
    }
    if (config.arch == Arch::TinyResidual) x = g.add(ms, x);
    m.out_ = x;
    const NodeId gt = g.input("gt");
    m.loss_ = g.l1_loss(m.out_, gt);
    return m;
}

Tensor Model::predict_batch(const Batch& batch) {
    Feed feed{{"ms_up", batch.ms_up}, {"pan", batch.pan}};
    Tensor out = graph_.forward(feed, out_);
    if (!out.all_finite()) throw NumericError("predict produced non-finite values");
    return out;
}

Tensor Model::predict(const Tensor& lrms, const Tensor& pan) {
    if (lrms.rank() != 3 || pan.rank() != 3 || lrms.dim(0) != config_.bands || pan.dim(0) != 1)
        throw ShapeError("predict: lrms " + dims_to_string(lrms.dims()) + " / pan " + dims_to_string(pan.dims()) +
                         " inconsistent with a " + std::to_string(config_.bands) + "-band model");
    if (pan.dim(1) != lrms.dim(1) * config_.ratio || pan.dim(2) != lrms.dim(2) * config_.ratio)
        throw ShapeError("predict: pan " + dims_to_string(pan.dims()) + " is not lrms " + dims_to_string(lrms.dims()) +
                         " times ratio " + std::to_string(config_.ratio));
    Batch b{upsample_bicubic(lrms, config_.ratio).reshaped({1, lrms.dim(0), pan.dim(1), pan.dim(2)}),
            pan.reshaped({1, 1, pan.dim(1), pan.dim(2)}),
            {}};
    return batch_item(predict_batch(b), 0);
}

double Model::loss(const Batch& batch) {
    Feed feed{{"ms_up", batch.ms_up}, {"pan", batch.pan}, {"gt", batch.gt}};
    return graph_.forward(feed, loss_)[0];
}

double Model::loss_and_backward(const Batch& batch) {
    const double l = loss(batch);
    graph_.backward(loss_);
    return l;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void Model::save(const fs::path& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string() + ": " + ec.message());
    std::ostringstream registry, cfg;
    cfg << "arch = " << arch_name(config_.arch) << '\n'
        << "bands = " << config_.bands << '\n'
        << "channels = " << config_.channels << '\n'
        << "depth = " << config_.depth << '\n'
        << "ratio = " << config_.ratio << '\n';
    for (const auto& e : params().entries()) {
        const std::string file = e.name + ".swtn";
        const auto bytes = encode_swtn(e.value);
        write_swtn(dir / file, e.value);
        std::string dims = dims_to_string(e.value.dims());
        dims = dims.substr(1, dims.size() - 2);
        registry << e.name << '\t' << dims << '\t' << file << '\n';
        cfg << "checksum." << e.name << " = " << hex64(fnv1a64(bytes)) << '\n';
    }
    write_text(dir / "registry.txt", registry.str());
    write_text(dir / "model.cfg", cfg.str());
}

Model Model::load(const fs::path& dir, const std::optional<ModelConfig>& expected) {
    const auto kv = read_key_values(dir / "model.cfg");
    auto get = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError((dir / "model.cfg").string() + ": missing key '" + key + "'");
        return it->second;
    };
    ModelConfig cfg;
    cfg.arch = parse_arch(get("arch"));
    cfg.bands = static_cast<int>(parse_int(get("bands"), "bands"));
    cfg.channels = static_cast<int>(parse_int(get("channels"), "channels"));
    cfg.depth = static_cast<int>(parse_int(get("depth"), "depth"));
    cfg.ratio = static_cast<int>(parse_int(get("ratio"), "ratio"));
    if (expected && !(*expected == cfg))
        throw ConfigError(dir.string() + ": stored model (" + arch_name(cfg.arch) + ", bands " +
                          std::to_string(cfg.bands) + ") does not match the requested config (" +
                          arch_name(expected->arch) + ", bands " + std::to_string(expected->bands) + ")");

    Model m = build(cfg, 0);
    const fs::path reg_path = dir / "registry.txt";
    std::istringstream reg(read_text(reg_path));
    std::string line;
    std::size_t idx = 0;
    while (std::getline(reg, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, dims, file;
        if (!std::getline(ls, name, '\t') || !std::getline(ls, dims, '\t') || !std::getline(ls, file))
            throw IoError(reg_path.string() + ": malformed line '" + line + "'");
        if (idx >= m.params().size() || m.params()[idx].name != name)
            throw IoError(reg_path.string() + ": unexpected parameter '" + name + "' at position " + std::to_string(idx));
        const fs::path tpath = dir / file;
        std::ifstream f(tpath, std::ios::binary);
        if (!f) throw IoError(tpath.string() + ": cannot open for reading");
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        if (hex64(fnv1a64(bytes)) != get("checksum." + name)) throw IoError(tpath.string() + ": checksum mismatch");
        Tensor t = decode_swtn(bytes, tpath.string());
        std::string want = dims_to_string(m.params()[idx].value.dims());
        want = want.substr(1, want.size() - 2);
        if (t.dims() != m.params()[idx].value.dims() || dims != want)
            throw IoError(tpath.string() + ": dims " + dims_to_string(t.dims()) + " do not match architecture");
        m.params()[idx].value = std::move(t);
        ++idx;
    }
    if (idx != m.params().size())
        throw IoError(reg_path.string() + ": expected " + std::to_string(m.params().size()) + " parameters, found " +
                      std::to_string(idx));
    return m;
}

}  // namespace swiftpan
