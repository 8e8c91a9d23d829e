// danil_cli: train / eval / saliency / compare over a config file.
//
//   danil_cli train    --config run.ini [--seed N] [--out DIR]
//   danil_cli eval     --config run.ini --checkpoint model.ckpt [--split train|test]
//   danil_cli saliency --config run.ini --checkpoint model.ckpt --sample N [--split train|test] [--out DIR]
//   danil_cli compare  --config run.ini --seeds 0,1,2 [--out DIR] [--jobs N]
//
// DANIL_LOG_LEVEL = error | info | debug controls stderr logging.

#include <danil/harness/run.hpp>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

namespace {

using namespace danil;
using namespace danil::harness;

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("danil");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    const char* env = std::getenv("DANIL_LOG_LEVEL");
    const std::string level = env ? env : "info";
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else if (level == "info") spdlog::set_level(spdlog::level::info);
    else {
        spdlog::set_level(spdlog::level::info);
        spdlog::warn("unknown DANIL_LOG_LEVEL '{}', using info", level);
    }
}

data::Split parse_split(const std::string& s) {
    if (s == "train") return data::Split::Train;
    if (s == "test") return data::Split::Test;
    throw ConfigError("unknown split '" + s + "'");
}

RunConfig load(const std::string& path, const std::optional<std::uint64_t>& seed) {
    auto cfg = load_config(path);
    if (seed) cfg.seed = *seed;
    return cfg;
}

EpochHook log_epochs() {
    return [](const EpochStats& e) {
        spdlog::debug("epoch {}: l_c_plus {:.6f} l_d {:.6f} train_acc {:.4f}", e.epoch, e.l_c_plus, e.l_d,
                      e.train_accuracy);
    };
}

} // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"distractor-aware training harness"};
    app.require_subcommand(1);

    std::string config, out, checkpoint, split = "test", seeds_text;
    std::optional<std::uint64_t> seed;
    std::size_t sample = 0, jobs = std::max(1u, std::thread::hardware_concurrency());

    auto* train_cmd = app.add_subcommand("train", "train one model and write report.json + model.ckpt");
    train_cmd->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--seed", seed, "override the config seed");
    train_cmd->add_option("--out", out, "output directory (default: run.out from the config)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the configured data");
    eval_cmd->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--split", split, "train or test");
    eval_cmd->add_option("--seed", seed, "override the config seed");
    eval_cmd->add_option("--out", out, "also write the metrics document to this file");

    auto* sal_cmd = app.add_subcommand("saliency", "export response maps of one sample as PGM");
    sal_cmd->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
    sal_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    sal_cmd->add_option("--sample", sample, "sample index")->required();
    sal_cmd->add_option("--split", split, "train or test");
    sal_cmd->add_option("--seed", seed, "override the config seed");
    sal_cmd->add_option("--out", out, "output directory");

    auto* cmp_cmd = app.add_subcommand("compare", "run base, ohem and danil over several seeds");
    cmp_cmd->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
    cmp_cmd->add_option("--seeds", seeds_text, "comma-separated seeds")->required();
    cmp_cmd->add_option("--out", out, "output directory");
    cmp_cmd->add_option("--jobs", jobs, "worker threads");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            auto cfg = load(config, seed);
            const std::filesystem::path dir = out.empty() ? cfg.out : std::filesystem::path(out);
            spdlog::info("training {} (seed {}, {} epochs)", method_name(cfg.method), cfg.seed, cfg.epochs);
            const auto o = cmd_train(cfg, dir, log_epochs());
            const auto& r = o.result.report;
            spdlog::info("test macro-F1 {:.6f}, accuracy {:.6f}", r.test.macro_f1, r.test.accuracy);
            std::cout << o.report.string() << "\n" << o.checkpoint.string() << "\n";
        } else if (*eval_cmd) {
            const auto cfg = load(config, seed);
            const auto splits = load_data(cfg);
            const auto m = cmd_eval(checkpoint, pick_split(splits, parse_split(split)));
            const auto doc = to_json(m).dump(2);
            if (!out.empty()) write_text(out, doc + "\n");
            std::cout << doc << "\n";
        } else if (*sal_cmd) {
            const auto cfg = load(config, seed);
            const auto splits = load_data(cfg);
            const auto model = nn::load_checkpoint(checkpoint);
            const std::filesystem::path dir = out.empty() ? cfg.out / "saliency" : std::filesystem::path(out);
            const auto s = cmd_saliency(model, pick_split(splits, parse_split(split)), sample, dir);
            if (!s.note.empty()) spdlog::info("{}", s.note);
            for (const auto& p : s.images) std::cout << p.string() << "\n";
        } else if (*cmp_cmd) {
            const auto cfg = load(config, std::nullopt);
            std::vector<std::uint64_t> seeds;
            for (const auto& s : harness::detail::split_list(seeds_text, ','))
                seeds.push_back(harness::detail::number<std::uint64_t>("--seeds", s));
            spdlog::info("comparing over {} seeds on {} workers", seeds.size(), jobs);
            const auto rows = cmd_compare(cfg, seeds, jobs);
            const auto doc = to_json(rows, seeds).dump(2);
            const std::filesystem::path dir = out.empty() ? cfg.out : std::filesystem::path(out);
            write_text(dir / "compare.json", doc + "\n");
            std::cout << doc << "\n";
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
