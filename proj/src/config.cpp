#include "densal/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "densal/error.hpp"

namespace densal {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

// Drops a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

[[noreturn]] void fail(const ConfigEntry& e, const std::string& why) {
    const std::string name = e.section.empty() ? e.key : e.section + "." + e.key;
    throw ConfigError(e.origin + ": " + name + ": " + why + " (got '" + e.value + "')");
}

// For errors whose message already names the key.
[[noreturn]] void fail_from(const ConfigEntry& e, const ConfigError& err) { throw ConfigError(e.origin + ": " + err.what()); }

std::uint64_t as_u64(const ConfigEntry& e) {
    std::uint64_t v = 0;
    const auto* end = e.value.data() + e.value.size();
    auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
    if (ec != std::errc() || ptr != end) fail(e, "expected a non-negative integer");
    return v;
}

std::size_t as_size(const ConfigEntry& e) { return static_cast<std::size_t>(as_u64(e)); }

double as_real(const ConfigEntry& e) {
    double v = 0;
    const auto* end = e.value.data() + e.value.size();
    auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) fail(e, "expected a finite number");
    return v;
}

bool as_bool(const ConfigEntry& e) {
    if (e.value == "true") return true;
    if (e.value == "false") return false;
    fail(e, "expected true or false");
}

std::array<std::size_t, 4> as_blocks(const ConfigEntry& e) {
    const std::string& v = e.value;
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') fail(e, "expected a list like [6, 12, 24, 16]");
    std::vector<std::size_t> items;
    std::stringstream ss(v.substr(1, v.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
        ConfigEntry sub = e;
        sub.value = trim(item);
        items.push_back(as_size(sub));
    }
    if (items.size() != 4) fail(e, "expected exactly 4 block sizes");
    return {items[0], items[1], items[2], items[3]};
}

using Setter = std::function<void(ExperimentConfig&, const ConfigEntry&)>;

struct KeySpec {
    std::string section;
    Setter set;
};

const std::map<std::string, KeySpec>& key_table() {
    static const std::map<std::string, KeySpec> table = {
        {"preset", {"model", [](ExperimentConfig& c, const ConfigEntry& e) {
             try {
                 c.campaign.backbone = BackboneSpec::preset(e.value, c.campaign.backbone.num_classes,
                                                            c.campaign.backbone.input_bands);
             } catch (const ConfigError& err) {
                 fail_from(e, err);
             }
             c.campaign.preset = e.value;
         }}},
        {"patch_size", {"model", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.backbone.patch_size = as_size(e); }}},
        {"growth_rate", {"model", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.backbone.growth_rate = as_size(e); }}},
        {"initial_channels", {"model", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.backbone.initial_channels = as_size(e); }}},
        {"bottleneck_width", {"model", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.backbone.bottleneck_width = as_size(e); }}},
        {"block_sizes", {"model", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.backbone.block_sizes = as_blocks(e); }}},
        {"theta", {"model", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.backbone.theta = as_real(e); }}},
        {"initial_maxpool", {"model", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.backbone.initial_maxpool = as_bool(e); }}},
        {"loss_hidden", {"model", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.backbone.loss_hidden = as_size(e); }}},
        {"xi", {"objective", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.objective.xi = as_real(e); }}},
        {"batch_size", {"objective", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.objective.batch_size = as_size(e); }}},
        {"ranking_into_backbone", {"objective", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.ranking_into_backbone = as_bool(e); }}},
        {"learning_rate", {"optimizer", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.optimizer.learning_rate = as_real(e); }}},
        {"beta1", {"optimizer", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.optimizer.beta1 = as_real(e); }}},
        {"beta2", {"optimizer", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.optimizer.beta2 = as_real(e); }}},
        {"epsilon", {"optimizer", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.optimizer.epsilon = as_real(e); }}},
        {"epochs", {"optimizer", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.epochs = as_size(e); }}},
        {"initial_labeled", {"schedule", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.initial_labeled = as_size(e); }}},
        {"query_size", {"schedule", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.query_size = as_size(e); }}},
        {"rounds", {"schedule", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.rounds = as_size(e); }}},
        {"test_fraction", {"schedule", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.test_fraction = as_real(e); }}},
        {"strategy", {"campaign", [](ExperimentConfig& c, const ConfigEntry& e) {
             try {
                 c.campaign.strategy = parse_strategy(e.value);
             } catch (const ConfigError& err) {
                 fail_from(e, err);
             }
         }}},
        {"oracle", {"campaign", [](ExperimentConfig& c, const ConfigEntry& e) {
             try {
                 c.campaign.oracle = parse_oracle(e.value);
             } catch (const ConfigError& err) {
                 fail_from(e, err);
             }
         }}},
        {"seed", {"campaign", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.seed = as_u64(e); }}},
        {"fine_tune", {"campaign", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.fine_tune = as_bool(e); }}},
        {"eval_batch", {"campaign", [](ExperimentConfig& c, const ConfigEntry& e) { c.campaign.eval_batch = as_size(e); }}},
        {"path", {"data", [](ExperimentConfig& c, const ConfigEntry& e) { c.dataset = e.value; }}},
        {"normalize", {"data", [](ExperimentConfig& c, const ConfigEntry& e) { c.normalize = as_bool(e); }}},
        {"classes", {"synth", [](ExperimentConfig& c, const ConfigEntry& e) { c.synth.classes = as_size(e); }}},
        {"bands", {"synth", [](ExperimentConfig& c, const ConfigEntry& e) { c.synth.bands = as_size(e); }}},
        {"height", {"synth", [](ExperimentConfig& c, const ConfigEntry& e) { c.synth.height = as_size(e); }}},
        {"width", {"synth", [](ExperimentConfig& c, const ConfigEntry& e) { c.synth.width = as_size(e); }}},
        {"blobs", {"synth", [](ExperimentConfig& c, const ConfigEntry& e) { c.synth.blobs = as_size(e); }}},
        {"noise_sigma", {"synth", [](ExperimentConfig& c, const ConfigEntry& e) { c.synth.noise_sigma = as_real(e); }}},
        {"synth_seed", {"synth", [](ExperimentConfig& c, const ConfigEntry& e) { c.synth.seed = as_u64(e); }}},
        {"min_separation", {"synth", [](ExperimentConfig& c, const ConfigEntry& e) { c.synth.min_separation = as_real(e); }}},
    };
    return table;
}

const KeySpec& lookup(const ConfigEntry& e) {
    const auto& table = key_table();
    const auto it = table.find(e.key);
    if (it == table.end()) {
        const std::string name = e.section.empty() ? e.key : e.section + "." + e.key;
        throw ConfigError(e.origin + ": unknown key '" + name + "'");
    }
    if (!e.section.empty() && e.section != it->second.section)
        throw ConfigError(e.origin + ": key '" + e.key + "' belongs in section [" + it->second.section +
                          "], not [" + e.section + "]");
    return it->second;
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& origin) {
    std::vector<ConfigEntry> entries;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError(where + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        ConfigEntry e;
        e.section = section;
        e.key = trim(std::string_view(line).substr(0, eq));
        e.value = trim(std::string_view(line).substr(eq + 1));
        e.origin = where;
        if (e.key.empty()) throw ConfigError(where + ": missing key before '='");
        if (e.value.empty()) throw ConfigError(where + ": " + e.key + ": missing value");
        if (e.value.front() == '"') {
            if (e.value.size() < 2 || e.value.back() != '"') throw ConfigError(where + ": unterminated string");
            e.value = e.value.substr(1, e.value.size() - 2);
        }
        lookup(e);
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<ConfigEntry> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

ExperimentConfig build_config(const std::vector<ConfigEntry>& entries) {
    ExperimentConfig config;
    config.synth = benchmark_synth();
    const ConfigEntry* preset = nullptr;
    for (const auto& e : entries)
        if (e.key == "preset") preset = &e;
    if (preset) lookup(*preset).set(config, *preset);
    for (const auto& e : entries)
        if (e.key != "preset") lookup(e).set(config, e);
    config.campaign.validate();
    return config;
}

std::vector<std::string> known_config_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, spec] : key_table()) keys.push_back(spec.section + "." + key);
    std::sort(keys.begin(), keys.end());
    return keys;
}

std::string render_config(const ExperimentConfig& config) {
    const auto& c = config.campaign;
    const auto& b = c.backbone;
    auto real = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    auto flag = [](bool v) { return v ? "true" : "false"; };
    std::ostringstream s;
    s << "[model]\n"
      << "preset = \"" << c.preset << "\"\n"
      << "initial_channels = " << b.initial_channels << '\n'
      << "growth_rate = " << b.growth_rate << '\n'
      << "bottleneck_width = " << b.bottleneck_width << '\n'
      << "block_sizes = [" << b.block_sizes[0] << ", " << b.block_sizes[1] << ", " << b.block_sizes[2] << ", "
      << b.block_sizes[3] << "]\n"
      << "theta = " << real(b.theta) << '\n'
      << "patch_size = " << b.patch_size << '\n'
      << "initial_maxpool = " << flag(b.initial_maxpool) << '\n'
      << "loss_hidden = " << b.loss_hidden << "\n\n"
      << "[objective]\n"
      << "xi = " << real(c.objective.xi) << '\n'
      << "batch_size = " << c.objective.batch_size << '\n'
      << "ranking_into_backbone = " << flag(c.ranking_into_backbone) << "\n\n"
      << "[optimizer]\n"
      << "learning_rate = " << real(c.optimizer.learning_rate) << '\n'
      << "beta1 = " << real(c.optimizer.beta1) << '\n'
      << "beta2 = " << real(c.optimizer.beta2) << '\n'
      << "epsilon = " << real(c.optimizer.epsilon) << '\n'
      << "epochs = " << c.epochs << "\n\n"
      << "[schedule]\n"
      << "initial_labeled = " << c.initial_labeled << '\n'
      << "query_size = " << c.query_size << '\n'
      << "rounds = " << c.rounds << '\n'
      << "test_fraction = " << real(c.test_fraction) << "\n\n"
      << "[campaign]\n"
      << "strategy = \"" << strategy_name(c.strategy) << "\"\n"
      << "oracle = \"" << oracle_name(c.oracle) << "\"\n"
      << "seed = " << c.seed << '\n'
      << "fine_tune = " << flag(c.fine_tune) << '\n'
      << "eval_batch = " << c.eval_batch << "\n\n"
      << "[data]\n"
      << "path = \"" << config.dataset << "\"\n"
      << "normalize = " << flag(config.normalize) << "\n\n"
      << "[synth]\n"
      << "classes = " << config.synth.classes << '\n'
      << "bands = " << config.synth.bands << '\n'
      << "height = " << config.synth.height << '\n'
      << "width = " << config.synth.width << '\n'
      << "blobs = " << config.synth.blobs << '\n'
      << "noise_sigma = " << real(config.synth.noise_sigma) << '\n'
      << "synth_seed = " << config.synth.seed << '\n'
      << "min_separation = " << real(config.synth.min_separation) << '\n';
    return s.str();
}

SynthParams benchmark_synth() {
    SynthParams p;
    p.classes = 4;
    p.bands = 8;
    p.height = 32;
    p.width = 32;
    p.blobs = 12;
    p.noise_sigma = 0.05;
    p.seed = 0;
    return p;
}

}  // namespace densal
