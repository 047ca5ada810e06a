#include "swiftpan/pipeline.hpp"

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iostream>
#include <sstream>

namespace swiftpan {

namespace fs = std::filesystem;

void RunConfig::validate() const {
    source.validate();
    target.validate();
    if (source.bands != target.bands || source.ratio != target.ratio)
        throw ConfigError("source and target profiles must share bands and ratio");
    if (model.bands != source.bands || model.ratio != source.ratio)
        throw ConfigError("model bands/ratio must match the sensor profiles");
    model.validate();
    if (size < 8 || size % (4 * source.ratio) != 0 || size % 8 != 0)
        throw ConfigError("size must be a multiple of 8 and of 4 * ratio");
    if (n_source < 1 || n_target < 2 || n_val < 1) throw ConfigError("dataset sizes must be positive (target >= 2)");
    if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) throw ConfigError("sample ratio must be in (0, 1]");
    if (!(alpha_density >= 0.0 && alpha_density <= 1.0)) throw ConfigError("alpha_density must be in [0, 1]");
    if (sigma && !(*sigma > 0.0)) throw ConfigError("sigma must be > 0");
    sensitivity.validate();
    pretrain.validate();
    adapt.validate();
}

RunConfig apply_run_config(RunConfig c, const std::map<std::string, std::string>& kv) {
    auto num = [&](const std::string& k) { return parse_double(kv.at(k), k); };
    auto integer = [&](const std::string& k) { return static_cast<int>(parse_int(kv.at(k), k)); };
    if (kv.count("bands")) {
        const int b = integer("bands");
        c.source = source_profile(b);
        c.target = target_profile(b);
        c.model.bands = b;
    }
    for (const auto& [k, v] : kv) {
        if (k == "bands") continue;
        else if (k == "out") c.out_dir = v;
        else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_int(v, k));
        else if (k == "size") c.size = integer(k);
        else if (k == "n_source") c.n_source = integer(k);
        else if (k == "n_target") c.n_target = integer(k);
        else if (k == "n_val") c.n_val = integer(k);
        else if (k == "source_profile") c.source = load_profile(v);
        else if (k == "target_profile") c.target = load_profile(v);
        else if (k == "arch") c.model.arch = parse_arch(v);
        else if (k == "channels") c.model.channels = integer(k);
        else if (k == "depth") c.model.depth = integer(k);
        else if (k == "pretrain_epochs") c.pretrain.epochs = integer(k);
        else if (k == "pretrain_lr") c.pretrain.lr = num(k);
        else if (k == "pretrain_batch") c.pretrain.batch = integer(k);
        else if (k == "ratio") c.sample_ratio = num(k);
        else if (k == "alpha_density") c.alpha_density = num(k);
        else if (k == "sigma") c.sigma = v == "auto" ? std::nullopt : std::optional<double>(num(k));
        else if (k == "microbatches") c.sensitivity.microbatches = integer(k);
        else if (k == "alpha") c.sensitivity.alpha_mag = num(k);
        else if (k == "beta") c.sensitivity.beta_std = num(k);
        else if (k == "gamma") c.sensitivity.gamma_gdc = num(k);
        else if (k == "eta_min") c.sensitivity.eta_min = num(k);
        else if (k == "eta_max") c.sensitivity.eta_max = num(k);
        else if (k == "h_min") c.sensitivity.h_min = num(k);
        else if (k == "h_max") c.sensitivity.h_max = num(k);
        else if (k == "epochs") c.adapt.epochs = integer(k);
        else if (k == "lr") c.adapt.lr = num(k);
        else if (k == "batch") c.adapt.batch = integer(k);
        else if (k == "optimizer") c.adapt.optimizer = parse_optimizer(v);
        else throw ConfigError("unknown run config key '" + k + "'");
    }
    c.model.bands = c.source.bands;
    c.model.ratio = c.source.ratio;
    return c;
}

std::uint64_t stage_seed(std::uint64_t seed, Stream s) { return derive_seed(seed, 1000 + static_cast<std::uint64_t>(s)); }

double mean_l1(Model& model, std::span<const ScenePair> scenes) {
    double total = 0.0;
    for (std::size_t start = 0; start < scenes.size(); start += 16) {
        const std::size_t n = std::min<std::size_t>(16, scenes.size() - start);
        total += model.loss(make_batch(scenes.subspan(start, n), model.config().ratio)) * static_cast<double>(n);
    }
    return total / static_cast<double>(scenes.size());
}

std::vector<ScenePair> gather(std::span<const ScenePair> scenes, std::span<const int> ids) {
    std::vector<ScenePair> out;
    for (int id : ids) {
        auto it = std::find_if(scenes.begin(), scenes.end(), [id](const auto& s) { return s.id == id; });
        if (it == scenes.end()) throw ConfigError("scene id " + std::to_string(id) + " not in dataset");
        out.push_back(*it);
    }
    return out;
}

ArmResult evaluate_arm(const std::string& name, Model& model, std::span<const ScenePair> val, const Timing& timing) {
    ArmResult r;
    r.name = name;
    r.reduced = evaluate(model, val, Protocol::Reduced).mean;
    r.full = evaluate(model, val, Protocol::Full).mean;
    r.val_l1 = mean_l1(model, val);
    r.timing = timing;
    return r;
}

Experiment prepare_experiment(const RunConfig& config) {
    config.validate();
    Experiment exp{config, {}, {}, {}, Model::build(config.model, stage_seed(config.seed, Stream::ModelInit)), {}};
    exp.source = make_scenes(config.source, config.n_source, config.size, stage_seed(config.seed, Stream::SourceData));
    exp.target = make_scenes(config.target, config.n_target, config.size, stage_seed(config.seed, Stream::TargetData));
    exp.val = make_scenes(config.target, config.n_val, config.size, stage_seed(config.seed, Stream::ValData));
    AdaptConfig pre = config.pretrain;
    pre.seed = stage_seed(config.seed, Stream::Pretrain);
    exp.pretrain_result = full_retrain(exp.pretrained, exp.source, pre);
    return exp;
}

namespace {

class Stopwatch {
public:
    Stopwatch() : wall0_(std::chrono::steady_clock::now()), cpu0_(std::clock()) {}
    double wall() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0_).count(); }
    double cpu() const { return static_cast<double>(std::clock() - cpu0_) / CLOCKS_PER_SEC; }

private:
    std::chrono::steady_clock::time_point wall0_;
    std::clock_t cpu0_;
};

AdaptConfig adapt_config(const RunConfig& c) {
    AdaptConfig a = c.adapt;
    a.seed = stage_seed(c.seed, Stream::Adapt);
    return a;
}

}  // namespace

SwiftOutcome run_swift(const Experiment& exp) {
    const RunConfig& c = exp.config;
    Stopwatch clock;
    const auto features = featurize(exp.target);
    const auto labeled = compute_density(features, c.sigma);
    SwiftOutcome out{da_fps(labeled, c.sample_ratio, c.alpha_density), {}, {}, exp.pretrained, {}, {}};
    out.subset_scenes = gather(exp.target, out.subset.ids);
    out.report = analyze(out.model, out.subset_scenes, c.sensitivity);
    out.adapt_result = adapt(out.model, out.report.mask.selected, out.subset_scenes, adapt_config(c));
    out.timing = {clock.wall(), clock.cpu(), out.adapt_result.scene_passes + out.subset_scenes.size()};
    return out;
}

ArmResult run_random_mask_arm(const Experiment& exp, const SwiftOutcome& swift, Model* adapted) {
    const RunConfig& c = exp.config;
    Model model = exp.pretrained;
    Stopwatch clock;
    const auto mask =
        random_mask(swift.report.stats, swift.report.mask.scalar_fraction, stage_seed(c.seed, Stream::RandomMask));
    const auto res = adapt(model, mask.selected, swift.subset_scenes, adapt_config(c));
    const Timing t{clock.wall(), clock.cpu(), res.scene_passes};
    auto arm = evaluate_arm("random_mask", model, exp.val, t);
    if (adapted) *adapted = std::move(model);
    return arm;
}

ArmResult run_full_retrain_arm(const Experiment& exp, Model* adapted) {
    Model model = exp.pretrained;
    Stopwatch clock;
    const auto res = full_retrain(model, exp.target, adapt_config(exp.config));
    const Timing t{clock.wall(), clock.cpu(), res.scene_passes};
    auto arm = evaluate_arm("full_retrain", model, exp.val, t);
    if (adapted) *adapted = std::move(model);
    return arm;
}

std::string summary_csv(std::span<const ArmResult> arms) {
    std::ostringstream os;
    os << "arm,SAM,ERGAS,SCC,Q2N,D_lambda,D_s,HQNR,scene_passes\n";
    for (const auto& a : arms) {
        os << a.name;
        for (double v : a.reduced) os << ',' << format_double(v);
        for (double v : a.full) os << ',' << format_double(v);
        os << ',' << a.timing.scene_passes << '\n';
    }
    return os.str();
}

std::string timing_csv(std::span<const ArmResult> arms) {
    std::ostringstream os;
    os << "arm,wall_s,cpu_s,scene_passes\n";
    for (const auto& a : arms)
        os << a.name << ',' << format_double(a.timing.wall_seconds) << ',' << format_double(a.timing.cpu_seconds)
           << ',' << a.timing.scene_passes << '\n';
    return os.str();
}

PipelineResult run_pipeline(const RunConfig& config) {
    config.validate();
    const fs::path out = config.out_dir;
    std::string stage = "setup";
    auto log = [](const std::string& msg) { std::cerr << "[reproduce] " << msg << '\n'; };
    try {
        fs::create_directories(out);
        write_text(out / "source_profile.txt", format_profile(config.source));
        write_text(out / "target_profile.txt", format_profile(config.target));

        stage = "gen-data(source)";
        log(stage);
        Experiment exp{config, {}, {}, {}, Model::build(config.model, stage_seed(config.seed, Stream::ModelInit)), {}};
        exp.source = make_dataset(config.source, config.n_source, config.size,
                                  stage_seed(config.seed, Stream::SourceData), out / "data_source");

        stage = "pretrain";
        log(stage);
        AdaptConfig pre = config.pretrain;
        pre.seed = stage_seed(config.seed, Stream::Pretrain);
        exp.source = load_scenes(out / "data_source" / "manifest.tsv");
        exp.pretrain_result = full_retrain(exp.pretrained, exp.source, pre);
        exp.pretrained.save(out / "model_source");
        write_loss_trace(out / "loss_pretrain.csv", exp.pretrain_result.loss_trace);

        stage = "gen-data(target)";
        log(stage);
        make_dataset(config.target, config.n_target, config.size, stage_seed(config.seed, Stream::TargetData),
                     out / "data_target");
        make_dataset(config.target, config.n_val, config.size, stage_seed(config.seed, Stream::ValData),
                     out / "data_val");
        exp.target = load_scenes(out / "data_target" / "manifest.tsv");
        exp.val = load_scenes(out / "data_val" / "manifest.tsv");
        exp.pretrained = Model::load(out / "model_source", config.model);

        PipelineResult result;
        stage = "eval(direct)";
        log(stage);
        result.arms.push_back(evaluate_arm("direct", exp.pretrained, exp.val, {}));

        stage = "sample/analyze/adapt(swift)";
        log(stage);
        SwiftOutcome swift = run_swift(exp);
        write_subset(out / "subset.txt", swift.subset);
        write_mask(out / "mask.txt", swift.report.mask);
        write_stats_csv(out / "stats.csv", swift.report.stats, swift.report.mask);
        write_loss_trace(out / "loss_swift.csv", swift.adapt_result.loss_trace);
        swift.model.save(out / "model_swift");
        result.mask = swift.report.mask;
        result.subset = swift.subset;

        stage = "eval(swift)";
        log(stage);
        result.arms.push_back(evaluate_arm("swift", swift.model, exp.val, swift.timing));
        write_report_csv(out / "eval_swift_reduced.csv", evaluate(swift.model, exp.val, Protocol::Reduced));
        write_report_csv(out / "eval_swift_full.csv", evaluate(swift.model, exp.val, Protocol::Full));

        stage = "adapt(random_mask)";
        log(stage);
        Model random_model = exp.pretrained;
        result.arms.push_back(run_random_mask_arm(exp, swift, &random_model));
        random_model.save(out / "model_random_mask");

        stage = "adapt(full_retrain)";
        log(stage);
        Model full_model = exp.pretrained;
        result.arms.push_back(run_full_retrain_arm(exp, &full_model));
        full_model.save(out / "model_full_retrain");

        stage = "summary";
        write_text(out / "summary.csv", summary_csv(result.arms));
        write_text(out / "timing.csv", timing_csv(result.arms));
        return result;
    } catch (const std::exception& e) {
        throw std::runtime_error("stage " + stage + " failed (artifacts in " + out.string() + "): " + e.what());
    }
}

std::vector<SamplingAblationRow> ablation_sampling(std::span<const SampleFeature> features, std::optional<double> sigma,
                                                   double alpha_density, std::span<const double> ratios,
                                                   int random_trials, std::uint64_t seed) {
    const auto labeled = compute_density(std::vector<SampleFeature>(features.begin(), features.end()), sigma);
    std::vector<int> ids;
    for (const auto& f : labeled.features) ids.push_back(f.id);
    std::vector<SamplingAblationRow> rows;
    for (double r : ratios) {
        const auto sub = da_fps(labeled, r, alpha_density);
        rows.push_back({r, "dafps", sub.ids.size(), mmd2(select_features(labeled.features, sub.ids), labeled.features,
                                                         labeled.sigma), 0.0, 1});
        std::vector<double> vals;
        for (int t = 0; t < random_trials; ++t) {
            const auto rs = random_sample(ids, r, derive_seed(seed, static_cast<std::uint64_t>(t)));
            vals.push_back(mmd2(select_features(labeled.features, rs.ids), labeled.features, labeled.sigma));
        }
        double mu = 0.0, var = 0.0;
        for (double v : vals) mu += v;
        mu /= static_cast<double>(vals.size());
        for (double v : vals) var += (v - mu) * (v - mu);
        rows.push_back({r, "random", sub.ids.size(), mu, std::sqrt(var / static_cast<double>(vals.size())), random_trials});
    }
    return rows;
}

std::string sampling_ablation_csv(std::span<const SamplingAblationRow> rows) {
    std::ostringstream os;
    os << "# mmd=biased_gaussian_mmd2 kernel=exp(-d^2/sigma^2)\n";
    os << "ratio,method,subset_size,mmd2_mean,mmd2_std,trials\n";
    for (const auto& r : rows)
        os << format_double(r.ratio) << ',' << r.method << ',' << r.subset_size << ',' << format_double(r.mmd2_mean)
           << ',' << format_double(r.mmd2_std) << ',' << r.trials << '\n';
    return os.str();
}

std::vector<RatioAblationRow> ablation_ratio(const Experiment& exp, const SwiftOutcome& swift) {
    std::vector<RatioAblationRow> rows;
    auto run = [&](const std::string& label, double p) {
        const auto mask = select(swift.report.stats, p);
        Model model = exp.pretrained;
        const auto res = adapt(model, mask.selected, swift.subset_scenes, adapt_config(exp.config));
        const auto full = evaluate(model, exp.val, Protocol::Full).mean;
        const auto reduced = evaluate(model, exp.val, Protocol::Reduced).mean;
        rows.push_back({label, p, mask.scalar_fraction, mask.selected.size(), full[2], reduced[3], mean_l1(model, exp.val),
                        res.wall_seconds});
    };
    for (int k = 1; k <= 10; ++k) run("fixed", k / 10.0);
    run("dynamic", swift.report.mask.p_select);
    return rows;
}

std::string ratio_ablation_csv(std::span<const RatioAblationRow> rows) {
    std::ostringstream os;
    os << "selection,p_select,scalar_fraction,tensors,HQNR,Q2N,val_l1,adapt_wall_s\n";
    for (const auto& r : rows)
        os << r.selection << ',' << format_double(r.p_select) << ',' << format_double(r.scalar_fraction) << ','
           << r.tensors << ',' << format_double(r.hqnr) << ',' << format_double(r.q2n) << ','
           << format_double(r.val_l1) << ',' << format_double(r.adapt_seconds) << '\n';
    return os.str();
}

}  // namespace swiftpan
