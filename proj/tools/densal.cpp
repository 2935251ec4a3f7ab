#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "densal/campaign.hpp"
#include "densal/config.hpp"
#include "densal/error.hpp"
#include "densal/hsi.hpp"
#include "densal/image.hpp"
#include "densal/metrics.hpp"
#include "densal/network.hpp"
#include "densal/service.hpp"
#include "densal/simd/kernels.hpp"

#ifndef DENSAL_GIT_DESCRIBE
#define DENSAL_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace densal;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted.store(true); }

void install_signal_handlers() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
}

// Forwards a caught signal to a stop source until the guard is destroyed.
class SignalBridge {
  public:
    explicit SignalBridge(std::stop_source source)
        : watcher_([source](std::stop_token done) mutable {
              while (!done.stop_requested()) {
                  if (g_interrupted.load()) {
                      source.request_stop();
                      return;
                  }
                  std::this_thread::sleep_for(std::chrono::milliseconds(50));
              }
          }) {}

  private:
    std::jthread watcher_;
};

std::string utc_timestamp(const char* format = "%Y-%m-%dT%H:%M:%SZ") {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

struct GlobalOptions {
    std::optional<std::uint64_t> seed;
    std::string out = "runs";
    std::string config;
    bool quiet = false;
};

struct RunArgs {
    std::string strategy;
    std::string dataset;
    std::string run_dir;
    std::string resume;
    std::vector<std::string> sets;
};

std::vector<ConfigEntry> collect_entries(const GlobalOptions& g, const std::string& extra_config,
                                         const RunArgs* args) {
    std::vector<ConfigEntry> entries;
    const std::string& path = !extra_config.empty() ? extra_config : g.config;
    if (!path.empty()) entries = parse_config_file(path);
    if (args) {
        for (const auto& s : args->sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            auto parsed = parse_config_text(s.substr(0, eq) + " = " + s.substr(eq + 1), "--set");
            for (auto& e : parsed) e.origin = "--set " + s;
            entries.insert(entries.end(), parsed.begin(), parsed.end());
        }
        if (!args->strategy.empty()) entries.push_back({"", "strategy", args->strategy, "--strategy"});
        if (!args->dataset.empty()) entries.push_back({"", "path", args->dataset, "--dataset"});
    }
    if (g.seed) entries.push_back({"", "seed", std::to_string(*g.seed), "--seed"});
    return entries;
}

HsiDataset load_dataset(const ExperimentConfig& config) {
    HsiDataset d = config.dataset.empty() ? synth_generate(config.synth) : load_hsic(config.dataset);
    return config.normalize ? normalize(std::move(d)) : d;
}

fs::path fresh_run_dir(const fs::path& base, const CampaignConfig& c) {
    const std::string stem = "run-" + utc_timestamp("%Y%m%dT%H%M%SZ") + "-" + std::string(strategy_name(c.strategy)) +
                             "-s" + std::to_string(c.seed);
    fs::path dir = base / stem;
    for (int i = 1; fs::exists(dir); ++i) dir = base / (stem + "." + std::to_string(i));
    return dir;
}

void write_text(const fs::path& path, const std::string& text) { write_file(path.string(), text); }

std::function<void(const std::string&)> logger(const GlobalOptions& g) {
    if (g.quiet) return {};
    return [](const std::string& line) { std::cerr << "[densal] " << line << '\n'; };
}

json manifest_json(const ExperimentConfig& config, const std::string& started, const std::string& finished,
                   const std::vector<fs::path>& artifacts, const fs::path& dir, bool complete) {
    const auto& c = config.campaign;
    json files = json::array();
    for (const auto& a : artifacts) files.push_back(fs::relative(a, dir).string());
    return {{"tool", "densal"},
            {"git_describe", DENSAL_GIT_DESCRIBE},
            {"simd_backend", std::string(simd::backend_name(simd::active_backend()))},
            {"started_utc", started},
            {"finished_utc", finished},
            {"complete", complete},
            {"config_file", "config.toml"},
            {"config_hash", c.hash()},
            {"dataset", config.dataset.empty() ? json("synthetic") : json(config.dataset)},
            {"seeds",
             {{"seed", c.seed},
              {"split", derive_seed(c.seed, "split", 0)},
              {"init_round0", derive_seed(c.seed, "init", 0)},
              {"synth", config.synth.seed}}},
            {"budget", c.budget()},
            {"artifacts", files}};
}

int cmd_run(const GlobalOptions& g, const RunArgs& args) {
    const bool resuming = !args.resume.empty();
    fs::path dir;
    ExperimentConfig config;
    if (resuming) {
        dir = args.resume;
        if (!fs::exists(dir / "config.toml"))
            throw ConfigError("--resume: " + dir.string() + " has no config.toml snapshot");
        config = build_config(parse_config_file((dir / "config.toml").string()));
    } else {
        config = build_config(collect_entries(g, "", &args));
    }
    if (config.campaign.oracle != OracleMode::Simulated)
        throw ConfigError("oracle: 'run' needs the simulated oracle; use 'serve' for human labeling");
    const auto dataset = load_dataset(config);
    if (!resuming) dir = args.run_dir.empty() ? fresh_run_dir(g.out, config.campaign) : fs::path(args.run_dir);
    fs::create_directories(dir);
    const std::string started = utc_timestamp();
    std::vector<fs::path> artifacts{dir / "config.toml", dir / "manifest.json"};
    if (!resuming) write_text(dir / "config.toml", render_config(config));
    write_text(dir / "manifest.json", manifest_json(config, started, "", artifacts, dir, false).dump(2) + "\n");

    std::stop_source stop;
    SignalBridge bridge(stop);
    RunOptions options;
    options.out_dir = dir;
    options.state_path = dir / "campaign.state";
    options.stop = stop.get_token();
    options.log = logger(g);
    SimulatedOracle oracle;
    const auto result = run_campaign(dataset, config.campaign, oracle, options);
    if (result.stopped) {
        std::cerr << "interrupted; state saved to " << options.state_path.string() << "; continue with --resume "
                  << dir.string() << '\n';
        return kExitRuntime;
    }
    artifacts.insert(artifacts.end(), result.artifacts.begin(), result.artifacts.end());
    artifacts.push_back(options.state_path);
    const auto final_state = Campaign::restore(dataset, config.campaign, options.state_path.string());
    std::string labeled;
    for (std::size_t i = 0; i < final_state.labeled().size(); ++i)
        labeled += std::to_string(final_state.labeled()[i]) + ' ' + std::to_string(final_state.labeled_classes()[i] + 1) + '\n';
    write_text(dir / "labeled.txt", labeled);
    artifacts.push_back(dir / "labeled.txt");
    write_text(dir / "manifest.json",
               manifest_json(config, started, utc_timestamp(), artifacts, dir, true).dump(2) + "\n");
    const auto& last = result.history.back();
    std::cout << "run directory: " << dir.string() << '\n'
              << "final labeled: " << result.labeled << ", OA " << last.overall_accuracy << ", AA "
              << last.average_accuracy << ", kappa " << last.kappa << '\n';
    return kExitOk;
}

struct SynthArgs {
    std::string out;
    std::optional<std::size_t> classes, bands, height, width, blobs;
    std::optional<double> noise;
};

int cmd_synth(const GlobalOptions& g, const SynthArgs& a) {
    auto config = build_config(collect_entries(g, "", nullptr));
    auto& p = config.synth;
    if (g.seed) p.seed = *g.seed;
    if (a.classes) p.classes = *a.classes;
    if (a.bands) p.bands = *a.bands;
    if (a.height) p.height = *a.height;
    if (a.width) p.width = *a.width;
    if (a.blobs) p.blobs = *a.blobs;
    if (a.noise) p.noise_sigma = *a.noise;
    const auto dataset = synth_generate(p);
    const fs::path out = a.out.empty() ? fs::path(g.out) / "synthetic.hsic" : fs::path(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_hsic(dataset, out.string());
    std::cout << out.string() << ": " << dataset.height << "x" << dataset.width << ", " << dataset.bands
              << " bands, " << dataset.num_classes() << " classes\n";
    return kExitOk;
}

struct ConvertArgs {
    std::string cube, labels, out, interleave = "bsq", dtype = "float32", label_dtype = "uint8";
    std::size_t height = 0, width = 0, bands = 0, header_bytes = 0;
    bool big_endian = false;
    std::vector<std::string> names;
};

int cmd_convert(const GlobalOptions& g, const ConvertArgs& a) {
    FlatCubeLayout layout;
    layout.height = a.height;
    layout.width = a.width;
    layout.bands = a.bands;
    layout.interleave = parse_interleave(a.interleave);
    layout.cube_type = parse_sample_type(a.dtype);
    layout.label_type = parse_sample_type(a.label_dtype);
    layout.big_endian = a.big_endian;
    layout.header_bytes = a.header_bytes;
    const auto dataset = convert_flat(a.cube, a.labels, layout, a.names);
    const fs::path out = a.out.empty() ? fs::path(g.out) / "converted.hsic" : fs::path(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_hsic(dataset, out.string());
    std::cout << out.string() << ": " << dataset.height << "x" << dataset.width << ", " << dataset.bands
              << " bands, " << dataset.num_classes() << " classes, " << dataset.labeled_pixels().size()
              << " labeled pixels\n";
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint, dataset, pixels, csv;
};

std::vector<std::size_t> read_pixel_list(const std::string& path, std::size_t limit) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read pixel list " + path);
    std::vector<std::size_t> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        long long id = 0;
        if (!(ss >> id)) continue;
        if (id < 0 || static_cast<std::size_t>(id) >= limit)
            throw FormatError(path + ":" + std::to_string(line_no) + ": pixel id outside the scene");
        out.push_back(static_cast<std::size_t>(id));
    }
    return out;
}

int cmd_eval(const GlobalOptions& g, const EvalArgs& a) {
    auto config = build_config(collect_entries(g, "", nullptr));
    if (!a.dataset.empty()) config.dataset = a.dataset;
    const auto dataset = load_dataset(config);
    auto model = load_checkpoint(a.checkpoint);
    if (model.spec().num_classes != dataset.num_classes() || model.spec().input_bands != dataset.bands)
        throw ConfigError("checkpoint expects " + std::to_string(model.spec().input_bands) + " bands and " +
                          std::to_string(model.spec().num_classes) + " classes; the dataset has " +
                          std::to_string(dataset.bands) + " and " + std::to_string(dataset.num_classes()));
    std::vector<std::size_t> pixels =
        a.pixels.empty() ? dataset.labeled_pixels() : read_pixel_list(a.pixels, dataset.pixels());
    std::erase_if(pixels, [&](std::size_t p) { return dataset.class_of(p) < 0; });
    if (pixels.empty()) throw ConfigError("no labeled pixels to evaluate");
    const auto predicted = predict_classes(model, dataset, pixels, config.campaign.eval_batch);
    std::vector<int> truth;
    for (auto p : pixels) truth.push_back(dataset.class_of(p));
    const auto report = metrics_from_confusion(confusion_matrix(truth, predicted, dataset.num_classes()));
    std::cout.precision(17);
    std::cout << "samples " << report.total << "\nOA " << report.overall_accuracy << "\nAA "
              << report.average_accuracy << "\nkappa " << report.kappa << '\n';
    for (std::size_t c = 0; c < report.per_class.size(); ++c)
        std::cout << "class " << c + 1 << " (" << dataset.class_names[c] << ") " << report.per_class[c] << '\n';
    if (!a.csv.empty()) write_file(a.csv, metrics_csv({report}, pixels.size(), 0));
    return kExitOk;
}

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string state_dir;
    bool exit_when_done = false;
    RunArgs run;
};

int cmd_serve(const GlobalOptions& g, const ServeArgs& a) {
    auto config = build_config(collect_entries(g, "", &a.run));
    if (config.campaign.oracle != OracleMode::Human)
        throw ConfigError("oracle: serve requires oracle = \"human\" (got " +
                          std::string(oracle_name(config.campaign.oracle)) + ")");
    const auto dataset = load_dataset(config);
    const fs::path dir = a.state_dir.empty() ? fs::path(g.out) / "serve" : fs::path(a.state_dir);
    fs::create_directories(dir);
    write_text(dir / "config.toml", render_config(config));
    const auto log = logger(g);

    CampaignMonitor monitor;
    HumanOracle oracle;
    ServiceOptions service_options;
    service_options.host = a.host;
    service_options.port = a.port;
    LabelService service(dataset, config.campaign, monitor, oracle, service_options);
    const int port = service.start();
    std::cout << "listening on http://" << a.host << ":" << port << std::endl;

    std::atomic<bool> done{false};
    std::string failure;
    std::jthread campaign_thread([&](std::stop_token stop) {
        RunOptions options;
        options.out_dir = dir;
        options.state_path = dir / "campaign.state";
        options.render_each_round = true;
        options.monitor = &monitor;
        options.stop = stop;
        options.log = log;
        try {
            run_campaign(dataset, config.campaign, oracle, options);
        } catch (const std::exception& e) {
            failure = e.what();
        }
        done.store(true);
    });
    while (!g_interrupted.load() && !(done.load() && (a.exit_when_done || !failure.empty())))
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    campaign_thread.request_stop();
    oracle.shutdown();
    campaign_thread.join();
    service.stop();
    if (!failure.empty()) {
        std::cerr << "error: " << failure << '\n';
        return kExitRuntime;
    }
    if (log) log("state saved to " + (dir / "campaign.state").string());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"densal: loss-prediction active learning for hyperspectral classification"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--seed", g.seed, "Campaign seed (overrides the config)");
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--config", g.config, "Configuration file");
    app.add_flag("-q,--quiet", g.quiet, "No progress lines on stderr");
    std::string simd_choice;
    app.add_option("--simd", simd_choice, "Kernel backend: scalar or avx2");

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "Run an active-learning campaign with the simulated oracle");
    run->add_option("--strategy", run_args.strategy, "predicted-loss, max-entropy or random");
    run->add_option("--dataset", run_args.dataset, "HSIC dataset (default: synthetic benchmark)");
    run->add_option("--run-dir", run_args.run_dir, "Exact output directory instead of a timestamped one");
    run->add_option("--resume", run_args.resume, "Continue an interrupted run directory");
    run->add_option("--set", run_args.sets, "Override a config key: key=value");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Write a synthetic HSIC scene");
    synth->add_option("-o,--output", synth_args.out, "Output file");
    synth->add_option("--classes", synth_args.classes);
    synth->add_option("--bands", synth_args.bands);
    synth->add_option("--height", synth_args.height);
    synth->add_option("--width", synth_args.width);
    synth->add_option("--blobs", synth_args.blobs);
    synth->add_option("--noise", synth_args.noise, "Gaussian noise sigma");

    ConvertArgs conv;
    auto* convert = app.add_subcommand("convert", "Convert a flat binary cube and label raster to HSIC");
    convert->add_option("--cube", conv.cube)->required();
    convert->add_option("--labels", conv.labels)->required();
    convert->add_option("--height", conv.height)->required();
    convert->add_option("--width", conv.width)->required();
    convert->add_option("--bands", conv.bands)->required();
    convert->add_option("--interleave", conv.interleave)->capture_default_str();
    convert->add_option("--dtype", conv.dtype)->capture_default_str();
    convert->add_option("--label-dtype", conv.label_dtype)->capture_default_str();
    convert->add_option("--header-bytes", conv.header_bytes);
    convert->add_flag("--big-endian", conv.big_endian);
    convert->add_option("--names", conv.names, "Class names in label order");
    convert->add_option("-o,--output", conv.out);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", eval_args.checkpoint)->required();
    eval->add_option("--dataset", eval_args.dataset);
    eval->add_option("--pixels", eval_args.pixels, "File with one pixel id per line (default: every labeled pixel)");
    eval->add_option("--csv", eval_args.csv, "Also write the report as CSV");

    ServeArgs serve_args;
    auto* serve = app.add_subcommand("serve", "Run a human-oracle campaign behind the label service");
    serve->add_option("--host", serve_args.host)->capture_default_str();
    serve->add_option("--port", serve_args.port)->capture_default_str();
    serve->add_option("--state-dir", serve_args.state_dir, "Where campaign state and artifacts go");
    serve->add_option("--strategy", serve_args.run.strategy);
    serve->add_option("--dataset", serve_args.run.dataset);
    serve->add_option("--set", serve_args.run.sets);
    serve->add_flag("--exit-when-done", serve_args.exit_when_done, "Stop serving once the campaign finishes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    install_signal_handlers();
    try {
        if (simd_choice == "scalar")
            simd::set_backend(simd::Backend::Scalar);
        else if (simd_choice == "avx2")
            simd::set_backend(simd::Backend::Avx2);
        else if (!simd_choice.empty())
            throw ConfigError("--simd: expected scalar or avx2, got '" + simd_choice + "'");
        if (*run) return cmd_run(g, run_args);
        if (*synth) return cmd_synth(g, synth_args);
        if (*convert) return cmd_convert(g, conv);
        if (*eval) return cmd_eval(g, eval_args);
        if (*serve) return cmd_serve(g, serve_args);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
