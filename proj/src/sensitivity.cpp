#include "swiftpan/sensitivity.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace swiftpan {

MicrobatchPlan plan_microbatches(std::span<const int> subset_ids, int microbatches) {
    if (subset_ids.empty()) throw ConfigError("microbatch plan: empty subset");
    if (microbatches < 1) throw ConfigError("microbatch plan: M must be >= 1");
    const int n = static_cast<int>(subset_ids.size());
    if (microbatches > n) {
        warn("microbatches reduced from " + std::to_string(microbatches) + " to subset size " + std::to_string(n));
        microbatches = n;
    }
    MicrobatchPlan plan;
    const int base = n / microbatches, extra = n % microbatches;
    int pos = 0;
    for (int g = 0; g < microbatches; ++g) {
        const int len = base + (g < extra ? 1 : 0);
        plan.groups.emplace_back(subset_ids.begin() + pos, subset_ids.begin() + pos + len);
        pos += len;
    }
    return plan;
}

GradientSet collect_gradients(Model& model, std::span<const ScenePair> scenes, const MicrobatchPlan& plan) {
    auto& params = model.params();
    std::vector<bool> flags;
    for (const auto& e : params.entries()) flags.push_back(e.trainable);
    params.set_all_trainable(true);

    GradientSet out;
    for (const auto& e : params.entries()) {
        out.names.push_back(e.name);
        out.scalar_counts.push_back(e.scalar_count());
    }
    out.per_microbatch.resize(params.size());
    try {
        for (const auto& group : plan.groups) {
            std::vector<const ScenePair*> members;
            for (int id : group) {
                auto it = std::find_if(scenes.begin(), scenes.end(), [id](const auto& s) { return s.id == id; });
                if (it == scenes.end()) throw ConfigError("collect_gradients: scene " + std::to_string(id) + " not provided");
                members.push_back(&*it);
            }
            const Batch batch = make_batch(std::span<const ScenePair* const>(members), model.config().ratio);
            double l = 0.0;
            try {
                l = model.loss_and_backward(batch);
            } catch (const std::exception& e) {
                throw NumericError("collect_gradients: microbatch starting at scene " + std::to_string(group.front()) +
                                   " failed: " + e.what());
            }
            if (!std::isfinite(l))
                throw NumericError("collect_gradients: non-finite loss in microbatch starting at scene " +
                                   std::to_string(group.front()));
            for (std::size_t p = 0; p < params.size(); ++p) out.per_microbatch[p].push_back(model.graph().grad(p));
        }
    } catch (...) {
        for (std::size_t p = 0; p < params.size(); ++p) params[p].trainable = flags[p];
        throw;
    }
    for (std::size_t p = 0; p < params.size(); ++p) params[p].trainable = flags[p];
    return out;
}

namespace {

void require_nonempty(std::span<const Tensor> grads, const char* who) {
    if (grads.empty()) throw ConfigError(std::string(who) + ": need at least one microbatch");
}

double tensor_mean(const Tensor& t) { return pairwise_sum(t.data()) / static_cast<double>(t.numel()); }

double tensor_variance(const Tensor& t) {
    if (t.numel() < 2) return 0.0;
    const double mu = tensor_mean(t);
    double s = 0.0;
    for (float v : t.data()) s += (v - mu) * (v - mu);
    return s / static_cast<double>(t.numel());
}

}  // namespace

double compute_mag(std::span<const Tensor> grads) {
    require_nonempty(grads, "compute_mag");
    double s = 0.0;
    for (const auto& g : grads) s += std::abs(tensor_mean(g));
    return s / static_cast<double>(grads.size());
}

double compute_gdc(std::span<const Tensor> grads) {
    require_nonempty(grads, "compute_gdc");
    double s = 0.0;
    for (const auto& g : grads) {
        std::size_t pos = 0, neg = 0;
        for (float v : g.data()) {
            if (v > 0.0f) ++pos;
            else if (v < 0.0f) ++neg;
        }
        s += pos + neg == 0 ? 0.5 : static_cast<double>(std::max(pos, neg)) / static_cast<double>(pos + neg);
    }
    return s / static_cast<double>(grads.size());
}

double compute_std(std::span<const Tensor> grads) {
    require_nonempty(grads, "compute_std");
    double s = 0.0;
    for (const auto& g : grads) s += tensor_variance(g);
    return std::sqrt(s / static_cast<double>(grads.size()));
}

void SensitivityConfig::validate() const {
    if (alpha_mag < 0.0 || beta_std < 0.0 || gamma_gdc < 0.0) throw ConfigError("sensitivity weights must be >= 0");
    if (std::abs(alpha_mag + beta_std + gamma_gdc - 1.0) > 1e-9)
        throw ConfigError("sensitivity weights must sum to 1, got " + format_double(alpha_mag + beta_std + gamma_gdc));
    if (!(eta_min > 0.0 && eta_min <= eta_max && eta_max <= 1.0))
        throw ConfigError("need 0 < eta_min <= eta_max <= 1");
    if (!(h_min < h_max)) throw ConfigError("need h_min < h_max");
    if (microbatches < 1) throw ConfigError("microbatches must be >= 1");
}

std::vector<ParamTensorStats> gradient_stats(const GradientSet& grads) {
    std::vector<ParamTensorStats> out;
    for (std::size_t p = 0; p < grads.names.size(); ++p) {
        ParamTensorStats s;
        s.name = grads.names[p];
        s.scalar_count = grads.scalar_counts[p];
        s.mag = compute_mag(grads.per_microbatch[p]);
        s.gdc = compute_gdc(grads.per_microbatch[p]);
        s.std = compute_std(grads.per_microbatch[p]);
        out.push_back(std::move(s));
    }
    return out;
}

void composite_score(std::vector<ParamTensorStats>& stats, const SensitivityConfig& config) {
    config.validate();
    if (stats.size() < 2) throw ConfigError("composite_score: need at least 2 tensors");
    auto normalize = [&](auto get, auto set) {
        double lo = get(stats.front()), hi = lo;
        for (const auto& s : stats) {
            lo = std::min(lo, get(s));
            hi = std::max(hi, get(s));
        }
        for (auto& s : stats) set(s, hi == lo ? 0.5 : (get(s) - lo) / (hi - lo));
    };
    normalize([](const auto& s) { return s.mag; }, [](auto& s, double v) { s.mag_n = v; });
    normalize([](const auto& s) { return s.std; }, [](auto& s, double v) { s.std_n = v; });
    normalize([](const auto& s) { return s.gdc; }, [](auto& s, double v) { s.gdc_n = v; });
    for (auto& s : stats)
        s.score = config.alpha_mag * s.mag_n + config.beta_std * (1.0 - s.std_n) + config.gamma_gdc * s.gdc_n;
}

double sharpness(std::span<const double> values) {
    if (values.size() < 2) throw ConfigError("sharpness: need at least 2 tensors");
    const double n = static_cast<double>(values.size());
    double mu = 0.0;
    for (double v : values) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : values) var += (v - mu) * (v - mu);
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    const double median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    return std::sqrt(var / n) + (sorted.back() - median);
}

double sharpness(std::span<const ParamTensorStats> stats) {
    std::vector<double> v;
    for (const auto& s : stats) v.push_back(s.mag_n);
    return sharpness(v);
}

double dynamic_ratio(double h, const SensitivityConfig& config) {
    if (!(config.h_min < config.h_max)) throw ConfigError("need h_min < h_max");
    const double norm = std::clamp((h - config.h_min) / (config.h_max - config.h_min), 0.0, 1.0);
    return config.eta_min + (config.eta_max - config.eta_min) * norm;
}

bool SelectionMask::contains(const std::string& name) const {
    return std::find(selected.begin(), selected.end(), name) != selected.end();
}

namespace {

SelectionMask greedy(std::span<const ParamTensorStats> stats, const std::vector<std::size_t>& order, double p_select) {
    if (!(p_select > 0.0 && p_select <= 1.0)) throw ConfigError("p_select must be in (0, 1]");
    if (stats.empty()) throw ConfigError("select: no tensors");
    std::size_t total = 0;
    for (const auto& s : stats) total += s.scalar_count;
    SelectionMask mask;
    mask.p_select = p_select;
    std::size_t taken = 0;
    for (std::size_t idx : order) {
        mask.selected.push_back(stats[idx].name);
        taken += stats[idx].scalar_count;
        if (static_cast<double>(taken) / static_cast<double>(total) >= p_select - 1e-12) break;
    }
    mask.scalar_fraction = static_cast<double>(taken) / static_cast<double>(total);
    return mask;
}

}  // namespace

SelectionMask select(std::span<const ParamTensorStats> stats, double p_select) {
    std::vector<std::size_t> order(stats.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return stats[a].score > stats[b].score; });
    return greedy(stats, order, p_select);
}

SelectionMask random_mask(std::span<const ParamTensorStats> stats, double p_select, std::uint64_t seed) {
    std::vector<std::size_t> order(stats.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    return greedy(stats, order, p_select);
}

SensitivityReport analyze(Model& model, std::span<const ScenePair> subset, const SensitivityConfig& config) {
    config.validate();
    std::vector<int> ids;
    for (const auto& s : subset) ids.push_back(s.id);
    const auto plan = plan_microbatches(ids, config.microbatches);
    const auto grads = collect_gradients(model, subset, plan);
    SensitivityReport r;
    r.stats = gradient_stats(grads);
    std::erase_if(r.stats, [&](const ParamTensorStats& s) { return !model.params()[model.params().index_of(s.name)].trainable; });
    composite_score(r.stats, config);
    const double h = sharpness(r.stats);
    r.mask = select(r.stats, dynamic_ratio(h, config));
    r.mask.sharpness = h;
    return r;
}

void write_mask(const std::filesystem::path& path, const SelectionMask& mask) {
    std::ostringstream os;
    os << "p_select=" << format_double(mask.p_select) << " H=" << format_double(mask.sharpness)
       << " scalar_fraction=" << format_double(mask.scalar_fraction) << '\n';
    for (const auto& n : mask.selected) os << n << '\n';
    write_text(path, os.str());
}

SelectionMask read_mask(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::string header;
    if (!std::getline(in, header)) throw IoError(path.string() + ": empty mask file");
    SelectionMask m;
    std::istringstream hs(header);
    std::string field;
    int seen = 0;
    while (hs >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw IoError(path.string() + ": malformed header field '" + field + "'");
        const std::string key = field.substr(0, eq);
        const double v = parse_double(field.substr(eq + 1), path.string() + ": " + key);
        if (key == "p_select") m.p_select = v, seen |= 1;
        else if (key == "H") m.sharpness = v, seen |= 2;
        else if (key == "scalar_fraction") m.scalar_fraction = v, seen |= 4;
        else throw IoError(path.string() + ": unknown header field '" + key + "'");
    }
    if (seen != 7) throw IoError(path.string() + ": header needs p_select, H and scalar_fraction");
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) m.selected.push_back(line);
    return m;
}

void write_stats_csv(const std::filesystem::path& path, std::span<const ParamTensorStats> stats,
                     const SelectionMask& mask) {
    std::ostringstream os;
    os << "name,scalar_count,mag,gdc,std,mag_n,gdc_n,std_n,score,selected\n";
    for (const auto& s : stats) {
        os << s.name << ',' << s.scalar_count << ',' << format_double(s.mag) << ',' << format_double(s.gdc) << ','
           << format_double(s.std) << ',' << format_double(s.mag_n) << ',' << format_double(s.gdc_n) << ','
           << format_double(s.std_n) << ',' << format_double(s.score) << ',' << (mask.contains(s.name) ? 1 : 0)
           << '\n';
    }
    write_text(path, os.str());
}

}  // namespace swiftpan
