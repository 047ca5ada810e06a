#include "swiftpan/adaptation.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace swiftpan {

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

void AdaptConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
}

namespace {

struct AdamState {
    std::vector<float> m, v;
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

}  // namespace

AdaptResult adapt(Model& model, std::span<const std::string> mask, std::span<const ScenePair> scenes,
                  const AdaptConfig& config) {
    config.validate();
    if (mask.empty()) throw ConfigError("adapt: empty selection mask");
    if (scenes.empty()) throw ConfigError("adapt: no training scenes");
    auto& params = model.params();
    std::set<std::size_t> selected;
    for (const auto& name : mask) selected.insert(params.index_of(name));

    const auto wall0 = std::chrono::steady_clock::now();
    const std::clock_t cpu0 = std::clock();

    std::vector<bool> flags;
    std::vector<Tensor> snapshot;
    for (std::size_t p = 0; p < params.size(); ++p) {
        flags.push_back(params[p].trainable);
        snapshot.push_back(params[p].value);
        params[p].trainable = selected.count(p) > 0;
    }
    auto restore_flags = [&] {
        for (std::size_t p = 0; p < params.size(); ++p) params[p].trainable = flags[p];
    };

    const int ratio = model.config().ratio;
    std::vector<Tensor> ms_up, pan, gt;
    for (const auto& s : scenes) {
        ms_up.push_back(upsample_bicubic(s.lrms, ratio));
        pan.push_back(s.pan);
        gt.push_back(s.gt);
    }

    std::vector<AdamState> adam(params.size());
    for (std::size_t p : selected) {
        adam[p].m.assign(params[p].value.numel(), 0.0f);
        adam[p].v.assign(params[p].value.numel(), 0.0f);
    }

    AdaptResult result;
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    try {
        for (int epoch = 0; epoch < config.epochs; ++epoch) {
            for (std::size_t i = order.size(); i > 1; --i) {
                std::uniform_int_distribution<std::size_t> pick(0, i - 1);
                std::swap(order[i - 1], order[pick(rng)]);
            }
            double epoch_loss = 0.0;
            for (std::size_t start = 0; start < order.size(); start += config.batch) {
                const std::size_t end = std::min(order.size(), start + config.batch);
                std::vector<Tensor> bm, bp, bg;
                for (std::size_t k = start; k < end; ++k) {
                    bm.push_back(ms_up[order[k]]);
                    bp.push_back(pan[order[k]]);
                    bg.push_back(gt[order[k]]);
                }
                const Batch batch{stack(bm), stack(bp), stack(bg)};
                const double l = model.loss_and_backward(batch);
                if (!std::isfinite(l)) throw NumericError("adapt: non-finite loss at epoch " + std::to_string(epoch));
                epoch_loss += l * static_cast<double>(end - start);
                result.scene_passes += end - start;
                ++step;
                for (std::size_t p : selected) {
                    auto w = params[p].value.data();
                    const auto g = model.graph().grad(p).data();
                    if (config.optimizer == OptimizerKind::Sgd) {
                        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= static_cast<float>(config.lr * g[k]);
                        continue;
                    }
                    auto& st = adam[p];
                    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
                    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        st.m[k] = static_cast<float>(kBeta1 * st.m[k] + (1.0 - kBeta1) * g[k]);
                        st.v[k] = static_cast<float>(kBeta2 * st.v[k] + (1.0 - kBeta2) * g[k] * g[k]);
                        const double mhat = st.m[k] / bc1;
                        const double vhat = st.v[k] / bc2;
                        w[k] -= static_cast<float>(config.lr * mhat / (std::sqrt(vhat) + kEps));
                    }
                }
            }
            result.loss_trace.push_back(epoch_loss / static_cast<double>(scenes.size()));
        }
    } catch (...) {
        for (std::size_t p = 0; p < params.size(); ++p) params[p].value = std::move(snapshot[p]);
        restore_flags();
        throw;
    }
    restore_flags();
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    result.cpu_seconds = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC;
    return result;
}

AdaptResult full_retrain(Model& model, std::span<const ScenePair> scenes, const AdaptConfig& config) {
    const auto names = model.params().names();
    return adapt(model, names, scenes, config);
}

void write_loss_trace(const std::filesystem::path& path, std::span<const double> trace) {
    std::ostringstream os;
    os << "epoch,mean_l1\n";
    for (std::size_t e = 0; e < trace.size(); ++e) os << e + 1 << ',' << format_double(trace[e]) << '\n';
    write_text(path, os.str());
}

}  // namespace swiftpan
