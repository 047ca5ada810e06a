// swiftpan: command line front end for the cross-sensor adaptation pipeline.
//
// Every subcommand accepts --config <file> with `key = value` lines; keys are
// the long flag names (dashes or underscores). Flags given on the command
// line win over the file.

#include "swiftpan/error.hpp"
#include "swiftpan/kv.hpp"
#include "swiftpan/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>

namespace fs = std::filesystem;
using namespace swiftpan;

namespace {

std::string dashed(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

// Expands `--config file` into `--key value` pairs placed right after the
// subcommand, so later command line flags take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::string> injected;
    for (std::size_t i = 0; i < args.size();) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
        } else {
            ++i;
            continue;
        }
        for (const auto& [k, v] : read_key_values(path)) {
            injected.push_back("--" + dashed(k));
            injected.push_back(v);
        }
    }
    const auto pos = args.empty() ? args.end() : args.begin() + 1;
    args.insert(pos, injected.begin(), injected.end());
    return args;
}

int infer_ratio(const ScenePair& s) { return s.gt.dim(1) / s.lrms.dim(1); }

std::vector<std::string> mask_names(const std::string& spec, const Model& model) {
    if (spec == "all") return model.params().names();
    return read_mask(spec).selected;
}

// Run-config keys shared by reproduce and ablate-ratio, exposed as string
// options so only the flags actually given override the defaults.
const std::vector<std::string> kRunKeys = {
    "out", "seed", "size", "n_source", "n_target", "n_val", "source_profile", "target_profile", "bands", "arch",
    "channels", "depth", "pretrain_epochs", "pretrain_lr", "pretrain_batch", "ratio", "alpha_density", "sigma",
    "microbatches", "alpha", "beta", "gamma", "eta_min", "eta_max", "h_min", "h_max", "epochs", "lr", "batch",
    "optimizer"};

struct RunOptions {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app) {
        for (const auto& k : kRunKeys) options[k] = app->add_option("--" + dashed(k), values[k]);
    }
    RunConfig config() const {
        KeyValues kv;
        for (const auto& [k, opt] : options)
            if (opt->count() > 0) kv[k] = values.at(k);
        return apply_run_config(RunConfig{}, kv);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"swiftpan: sensitivity-guided cross-sensor pansharpening adaptation"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate Wald-degraded scenes for one sensor profile");
    std::string gen_profile, gen_sensor;
    int gen_n = 64, gen_size = 32, gen_bands = 4;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--profile", gen_profile, "Sensor profile file (key = value)");
    gen->add_option("--sensor", gen_sensor, "Built-in profile instead of a file")->check(CLI::IsMember({"source", "target"}));
    gen->add_option("--bands", gen_bands, "Band count for a built-in profile");
    gen->add_option("--n", gen_n, "Number of scenes")->required();
    gen->add_option("--size", gen_size, "Full-resolution side length");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out, "Output directory")->required();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Train a model from scratch on a dataset");
    std::string pre_manifest, pre_out, pre_arch = "tiny_residual", pre_opt = "adam";
    int pre_channels = 16, pre_depth = 3, pre_epochs = 20, pre_batch = 16;
    double pre_lr = 2e-3;
    std::uint64_t pre_seed = 0;
    pre->add_option("--manifest", pre_manifest)->required();
    pre->add_option("--arch", pre_arch)->check(CLI::IsMember({"tiny_pnn", "tiny_residual"}));
    pre->add_option("--channels", pre_channels);
    pre->add_option("--depth", pre_depth);
    pre->add_option("--epochs", pre_epochs);
    pre->add_option("--lr", pre_lr);
    pre->add_option("--batch", pre_batch);
    pre->add_option("--optimizer", pre_opt)->check(CLI::IsMember({"sgd", "adam"}));
    pre->add_option("--seed", pre_seed);
    pre->add_option("--out", pre_out, "Model directory")->required();

    // sample
    auto* smp = app.add_subcommand("sample", "Select an essence subset of a dataset");
    std::string smp_manifest, smp_out, smp_method = "dafps", smp_sigma = "auto";
    double smp_ratio = 0.03, smp_alpha = 0.5;
    std::uint64_t smp_seed = 0;
    smp->add_option("--manifest", smp_manifest)->required();
    smp->add_option("--ratio", smp_ratio);
    smp->add_option("--alpha-density", smp_alpha);
    smp->add_option("--sigma", smp_sigma, "Kernel bandwidth or 'auto' (median pairwise distance)");
    smp->add_option("--method", smp_method)->check(CLI::IsMember({"dafps", "random"}));
    smp->add_option("--seed", smp_seed);
    smp->add_option("--out", smp_out)->required();

    // analyze
    auto* ana = app.add_subcommand("analyze", "Probe gradient sensitivity and write the selection mask");
    std::string ana_model, ana_subset, ana_manifest, ana_out, ana_stats;
    SensitivityConfig ana_cfg;
    ana->add_option("--model", ana_model)->required();
    ana->add_option("--subset", ana_subset)->required();
    ana->add_option("--manifest", ana_manifest, "Dataset the subset ids refer to")->required();
    ana->add_option("--microbatches", ana_cfg.microbatches);
    ana->add_option("--alpha", ana_cfg.alpha_mag);
    ana->add_option("--beta", ana_cfg.beta_std);
    ana->add_option("--gamma", ana_cfg.gamma_gdc);
    ana->add_option("--eta-min", ana_cfg.eta_min);
    ana->add_option("--eta-max", ana_cfg.eta_max);
    ana->add_option("--h-min", ana_cfg.h_min);
    ana->add_option("--h-max", ana_cfg.h_max);
    ana->add_option("--out", ana_out)->required();
    ana->add_option("--stats", ana_stats, "Stats CSV (default: stats.csv next to --out)");

    // adapt
    auto* adp = app.add_subcommand("adapt", "Fine-tune the masked tensors, freezing the rest");
    std::string adp_model, adp_mask, adp_subset, adp_manifest, adp_out, adp_opt = "adam";
    AdaptConfig adp_cfg;
    adp->add_option("--model", adp_model)->required();
    adp->add_option("--mask", adp_mask, "Mask file, or 'all' for every tensor")->required();
    adp->add_option("--subset", adp_subset, "Subset file (default: every scene in --manifest)");
    adp->add_option("--manifest", adp_manifest)->required();
    adp->add_option("--epochs", adp_cfg.epochs);
    adp->add_option("--lr", adp_cfg.lr);
    adp->add_option("--batch", adp_cfg.batch);
    adp->add_option("--optimizer", adp_opt)->check(CLI::IsMember({"sgd", "adam"}));
    adp->add_option("--seed", adp_cfg.seed);
    adp->add_option("--out", adp_out, "Adapted model directory")->required();

    // eval
    auto* evl = app.add_subcommand("eval", "Score a model on a dataset");
    std::string evl_model, evl_manifest, evl_protocol = "reduced", evl_out;
    evl->add_option("--model", evl_model)->required();
    evl->add_option("--manifest", evl_manifest)->required();
    evl->add_option("--protocol", evl_protocol)->check(CLI::IsMember({"reduced", "full"}));
    evl->add_option("--out", evl_out)->required();

    // reproduce
    auto* rep = app.add_subcommand("reproduce", "Run the full four-arm experiment");
    RunOptions rep_opts;
    rep_opts.attach(rep);

    // ablate-sampling
    auto* abs = app.add_subcommand("ablate-sampling", "MMD of DA-FPS versus random sampling across ratios");
    std::string abs_manifest, abs_out, abs_sigma = "auto", abs_ratios = "0.01,0.02,0.03,0.05,0.10";
    double abs_alpha = 0.5;
    int abs_trials = 20;
    std::uint64_t abs_seed = 0;
    abs->add_option("--manifest", abs_manifest)->required();
    abs->add_option("--ratios", abs_ratios, "Comma separated sampling ratios");
    abs->add_option("--alpha-density", abs_alpha);
    abs->add_option("--sigma", abs_sigma);
    abs->add_option("--trials", abs_trials, "Random-sampling seeds per ratio");
    abs->add_option("--seed", abs_seed);
    abs->add_option("--out", abs_out)->required();

    // ablate-ratio
    auto* abr = app.add_subcommand("ablate-ratio", "Fixed selection ratios 10%..100% versus the dynamic ratio");
    RunOptions abr_opts;
    abr_opts.attach(abr);
    std::string abr_csv;
    abr->add_option("--csv", abr_csv, "Output CSV (default: <out>/ablation_ratio.csv)");

    const auto args = expand_config(argc, argv);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    auto parse_sigma = [](const std::string& s) {
        return s == "auto" ? std::nullopt : std::optional<double>(parse_double(s, "sigma"));
    };
    try {
        if (*gen) {
            SensorProfile profile;
            if (!gen_profile.empty()) profile = load_profile(gen_profile);
            else if (gen_sensor == "source") profile = source_profile(gen_bands);
            else if (gen_sensor == "target") profile = target_profile(gen_bands);
            else throw ConfigError("one of --profile or --sensor is required");
            make_dataset(profile, gen_n, gen_size, gen_seed, gen_out);
            std::cerr << "wrote " << gen_n << " scenes to " << gen_out << '\n';
        } else if (*pre) {
            const auto scenes = load_scenes(pre_manifest);
            if (scenes.empty()) throw ConfigError("manifest has no scenes");
            ModelConfig mc{parse_arch(pre_arch), scenes.front().gt.dim(0), pre_channels, pre_depth,
                           infer_ratio(scenes.front())};
            Model model = Model::build(mc, stage_seed(pre_seed, Stream::ModelInit));
            AdaptConfig ac{pre_epochs, pre_lr, pre_batch, parse_optimizer(pre_opt), stage_seed(pre_seed, Stream::Pretrain)};
            const auto res = full_retrain(model, scenes, ac);
            model.save(pre_out);
            write_loss_trace(fs::path(pre_out) / "loss.csv", res.loss_trace);
            std::cerr << "final mean L1 " << format_double(res.loss_trace.back()) << '\n';
        } else if (*smp) {
            const auto scenes = load_scenes(smp_manifest);
            EssenceSubset subset;
            if (smp_method == "dafps") {
                subset = da_fps(compute_density(featurize(scenes), parse_sigma(smp_sigma)), smp_ratio, smp_alpha);
            } else {
                std::vector<int> ids;
                for (const auto& s : scenes) ids.push_back(s.id);
                subset = random_sample(ids, smp_ratio, smp_seed);
            }
            write_subset(smp_out, subset);
            std::cerr << "selected " << subset.ids.size() << " of " << scenes.size() << " scenes\n";
        } else if (*ana) {
            Model model = Model::load(ana_model);
            const auto scenes = load_scenes(ana_manifest);
            const auto ids = read_subset(ana_subset);
            const auto subset = gather(scenes, ids);
            const auto report = analyze(model, subset, ana_cfg);
            write_mask(ana_out, report.mask);
            const fs::path stats = ana_stats.empty() ? fs::path(ana_out).parent_path() / "stats.csv" : fs::path(ana_stats);
            write_stats_csv(stats, report.stats, report.mask);
            std::cerr << "p_select " << format_double(report.mask.p_select) << ", " << report.mask.selected.size()
                      << " tensors\n";
        } else if (*adp) {
            Model model = Model::load(adp_model);
            const auto scenes = load_scenes(adp_manifest);
            std::vector<ScenePair> train;
            if (adp_subset.empty()) train = scenes;
            else train = gather(scenes, read_subset(adp_subset));
            adp_cfg.optimizer = parse_optimizer(adp_opt);
            const auto res = adapt(model, mask_names(adp_mask, model), train, adp_cfg);
            model.save(adp_out);
            write_loss_trace(fs::path(adp_out) / "loss.csv", res.loss_trace);
            std::cerr << "adapted on " << train.size() << " scenes in " << format_double(res.wall_seconds) << " s\n";
        } else if (*evl) {
            Model model = Model::load(evl_model);
            const auto scenes = load_scenes(evl_manifest);
            write_report_csv(evl_out, evaluate(model, scenes, parse_protocol(evl_protocol)));
        } else if (*rep) {
            const auto result = run_pipeline(rep_opts.config());
            std::cout << summary_csv(result.arms);
        } else if (*abs) {
            const auto scenes = load_scenes(abs_manifest);
            const auto ratios = parse_double_list(abs_ratios, "ratios");
            const auto rows = ablation_sampling(featurize(scenes), parse_sigma(abs_sigma), abs_alpha, ratios,
                                                abs_trials, abs_seed);
            write_text(abs_out, sampling_ablation_csv(rows));
        } else if (*abr) {
            const RunConfig cfg = abr_opts.config();
            const Experiment exp = prepare_experiment(cfg);
            const SwiftOutcome swift = run_swift(exp);
            const auto rows = ablation_ratio(exp, swift);
            const fs::path csv = abr_csv.empty() ? cfg.out_dir / "ablation_ratio.csv" : fs::path(abr_csv);
            if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
            write_text(csv, ratio_ablation_csv(rows));
            std::cout << ratio_ablation_csv(rows);
        }
    } catch (const std::exception& e) {
        std::cerr << "error [" << stage << "]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
