// most: command-line front end for the scene tokenizer.
//
// Exit codes: 0 success, 1 validation or format error, 2 I/O or usage error.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "most/most.hpp"

namespace fs = std::filesystem;
using namespace most;

namespace
{

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitIo = 2;

std::mutex g_err_mutex;

void diag(const std::string &msg)
{
    std::lock_guard lock(g_err_mutex);
    std::cerr << "most: " << msg << '\n';
}

/// Runs `body` and maps library exceptions onto exit codes.
template <typename F> int guarded(const std::string &context, F &&body)
{
    try
    {
        body();
        return kExitOk;
    }
    catch (const IoError &e)
    {
        diag(context + ": " + e.what());
        return kExitIo;
    }
    catch (const Error &e)
    {
        diag(context + ": " + e.what());
        return kExitInvalid;
    }
    catch (const std::bad_alloc &)
    {
        diag(context + ": out of memory");
        return kExitIo;
    }
}

/// Without a config file the frame count and feature dimension come from the bundle.
PipelineConfig resolve_config(const std::optional<fs::path> &path, const SceneBundle &bundle)
{
    if (path)
        return read_config(*path);
    PipelineConfig c;
    c.frames = static_cast<int>(bundle.frames.size());
    if (!bundle.cameras.empty())
        c.dim = bundle.cameras.front().dim;
    return c;
}

struct TokenizeArgs
{
    std::vector<std::string> scenes;
    std::optional<std::string> config;
    std::string out;
    std::optional<std::string> params;
    int jobs = 1;
};

int tokenize_one(const TokenizeArgs &args, const fs::path &scene, const fs::path &out)
{
    return guarded(scene.string(), [&] {
        const auto bundle = read_scene_bundle(scene);
        const auto cfg = resolve_config(args.config ? std::optional<fs::path>(*args.config) : std::nullopt, bundle);
        const auto result = tokenize(bundle, cfg);
        for (const auto &w : result.warnings)
            diag(scene.string() + ": warning: " + w);
        const auto params = args.params ? read_params<float>(*args.params)
                                        : cast_params<float>(init_fusion_params(fusion_config(cfg), cfg.seed));
        write_tokens(out, embed(result.scene, result.image, params));
    });
}

int run_tokenize(const TokenizeArgs &args)
{
    if (args.jobs < 1)
    {
        diag("--jobs must be >= 1");
        return kExitIo;
    }
    if (args.scenes.size() == 1)
        return tokenize_one(args, args.scenes.front(), args.out);

    // several scenes: --out names a directory, one token file per scene
    const int dir_status = guarded(args.out, [&] {
        std::error_code ec;
        fs::create_directories(args.out, ec);
        if (ec)
            throw IoError(ErrorCode::IoFailure, "cannot create " + args.out + ": " + ec.message());
    });
    if (dir_status != kExitOk)
        return dir_status;

    std::vector<int> status(args.scenes.size(), kExitOk);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < args.scenes.size(); i = next++)
        {
            const fs::path scene(args.scenes[i]);
            auto name = scene.filename().empty() ? scene.parent_path().filename() : scene.filename();
            status[i] = tokenize_one(args, scene, fs::path(args.out) / (name.string() + ".most"));
        }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(args.jobs), args.scenes.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i)
        pool.emplace_back(worker);
    for (auto &t : pool)
        t.join();
    return *std::max_element(status.begin(), status.end());
}

int run_synth(std::uint64_t seed, const std::optional<std::string> &spec_path, const std::string &out)
{
    return guarded("synth", [&] {
        const auto spec = spec_path ? synth_spec_from_json(parse_json_file(*spec_path)) : SynthSpec{};
        write_scene_bundle(out, generate_scene(seed, spec).bundle);
    });
}

int run_ablate(const std::string &scene, double ratio, std::uint64_t seed, const std::string &out)
{
    return guarded("ablate", [&] {
        const auto ablation = drop_agents(read_scene_bundle(scene), ratio, seed);
        std::ostringstream ids;
        for (std::size_t i = 0; i < ablation.dropped.size(); ++i)
            ids << (i ? " " : "") << ablation.dropped[i];
        std::cout << "dropped " << ablation.dropped.size() << " agent tracks: " << ids.str() << '\n';
        write_scene_bundle(out, ablation.bundle);
    });
}

int run_inspect(const std::string &path)
{
    return guarded("inspect", [&] {
        const auto tokens = read_tokens(path);
        struct Stats
        {
            std::size_t count = 0, valid_slots = 0, slots = 0;
            double norm_min = INFINITY, norm_max = 0.0, norm_sum = 0.0;
        };
        std::map<ElementKind, Stats> by_kind;
        for (auto k : {ElementKind::agent, ElementKind::open_set, ElementKind::ground})
            by_kind[k];
        const auto D = static_cast<std::size_t>(tokens.dim);
        for (std::size_t e = 0; e < tokens.elements.size(); ++e)
        {
            const auto &el = tokens.elements[e];
            auto &s = by_kind[el.kind];
            double sq = 0.0;
            for (std::size_t d = 0; d < D; ++d)
                sq += static_cast<double>(tokens.embeddings[e * D + d]) * tokens.embeddings[e * D + d];
            const double norm = std::sqrt(sq);
            ++s.count;
            s.norm_min = std::min(s.norm_min, norm);
            s.norm_max = std::max(s.norm_max, norm);
            s.norm_sum += norm;
            s.slots += el.frame_valid.size();
            for (auto v : el.frame_valid)
                s.valid_slots += v;
        }
        std::cout << "tokens " << tokens.elements.size() << ", dim " << tokens.dim << ", frames " << tokens.frames
                  << '\n';
        std::cout << "kind        count  norm_min  norm_mean  norm_max  valid_frames\n";
        std::cout << std::fixed << std::setprecision(4);
        for (const auto &[kind, s] : by_kind)
        {
            std::cout << std::left << std::setw(10) << to_string(kind) << std::right << std::setw(7) << s.count;
            if (s.count)
                std::cout << std::setw(10) << s.norm_min << std::setw(11) << s.norm_sum / static_cast<double>(s.count)
                          << std::setw(10) << s.norm_max;
            else
                std::cout << std::setw(10) << "-" << std::setw(11) << "-" << std::setw(10) << "-";
            std::cout << "  " << s.valid_slots << '/' << s.slots << '\n';
        }
    });
}

int run_bench(const std::string &scene, const std::optional<std::string> &config, int reps, bool csv)
{
    if (reps < 1)
    {
        diag("--reps must be >= 1");
        return kExitIo;
    }
    return guarded("bench", [&] {
        const auto bundle = read_scene_bundle(scene);
        const auto cfg = resolve_config(config ? std::optional<fs::path>(*config) : std::nullopt, bundle);
        const auto report = bench_tokenize(bundle, cfg, reps);
        std::cout << (csv ? report.csv() : report.text());
    });
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Scene tokenizer: LiDAR, agent boxes and camera features to scene-element tokens"};
    app.require_subcommand(1);

    TokenizeArgs tok;
    auto *tokenize_cmd = app.add_subcommand("tokenize", "Tokenize one or more scene bundles");
    tokenize_cmd->add_option("--scene", tok.scenes, "Scene bundle directory (repeatable)")->required();
    tokenize_cmd->add_option("--config", tok.config, "Pipeline config (JSON)");
    tokenize_cmd->add_option("--out", tok.out, "Token file, or a directory when several scenes are given")
        ->required();
    tokenize_cmd->add_option("--params", tok.params, "Fusion checkpoint; default is seeded initialization");
    tokenize_cmd->add_option("--jobs", tok.jobs, "Parallel workers across scenes");

    std::uint64_t synth_seed = 0;
    std::optional<std::string> synth_spec;
    std::string synth_out;
    auto *synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene bundle");
    synth_cmd->add_option("--seed", synth_seed, "Generator seed");
    synth_cmd->add_option("--spec", synth_spec, "Scene spec (JSON)");
    synth_cmd->add_option("--out", synth_out, "Output bundle directory")->required();

    std::string ablate_scene, ablate_out;
    double ablate_ratio = 0.0;
    std::uint64_t ablate_seed = 0;
    auto *ablate_cmd = app.add_subcommand("ablate", "Remove a fraction of agent tracks, keeping their points");
    ablate_cmd->add_option("--scene", ablate_scene, "Input bundle directory")->required();
    ablate_cmd->add_option("--drop-agents", ablate_ratio, "Fraction of agent tracks to drop")->required();
    ablate_cmd->add_option("--seed", ablate_seed, "Selection seed");
    ablate_cmd->add_option("--out", ablate_out, "Output bundle directory")->required();

    std::string inspect_path;
    auto *inspect_cmd = app.add_subcommand("inspect", "Summarize a token file");
    inspect_cmd->add_option("--tokens", inspect_path, "Token file")->required();

    std::string bench_scene;
    std::optional<std::string> bench_config;
    int bench_reps = 5;
    bool bench_csv = false;
    auto *bench_cmd = app.add_subcommand("bench", "Time the tokenizer stages");
    bench_cmd->add_option("--scene", bench_scene, "Scene bundle directory")->required();
    bench_cmd->add_option("--config", bench_config, "Pipeline config (JSON)");
    bench_cmd->add_option("--reps", bench_reps, "Repetitions");
    bench_cmd->add_flag("--csv", bench_csv, "CSV output");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp &e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError &e)
    {
        app.exit(e);
        return kExitIo;
    }

    if (*tokenize_cmd)
        return run_tokenize(tok);
    if (*synth_cmd)
        return run_synth(synth_seed, synth_spec, synth_out);
    if (*ablate_cmd)
        return run_ablate(ablate_scene, ablate_ratio, ablate_seed, ablate_out);
    if (*inspect_cmd)
        return run_inspect(inspect_path);
    if (*bench_cmd)
        return run_bench(bench_scene, bench_config, bench_reps, bench_csv);
    return kExitIo;
}
