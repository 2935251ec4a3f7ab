#pragma once

// Experiment configuration files: a small TOML subset.
//
//   # comment
//   [section]
//   key = value        value: integer, real, true/false, "string", bare word, [list]
//
// Sections only group keys; each key belongs to one section (or none).
// "preset" is applied first so that explicit model keys override it.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "densal/campaign.hpp"
#include "densal/hsi.hpp"

namespace densal {

struct ConfigEntry {
    std::string section;
    std::string key;
    std::string value;   // raw text, quotes removed
    std::string origin;  // "file:line" or "--flag"
};

struct ExperimentConfig {
    CampaignConfig campaign;
    std::string dataset;  // HSIC path; empty means the synthetic scene below
    SynthParams synth;
    bool normalize = true;
};

std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& origin);
std::vector<ConfigEntry> parse_config_file(const std::string& path);

// Builds and validates a configuration. Throws ConfigError naming the key
// and its origin.
ExperimentConfig build_config(const std::vector<ConfigEntry>& entries);

// Known keys for diagnostics and documentation, as "section.key".
std::vector<std::string> known_config_keys();

// Canonical text form readable by parse_config_text.
std::string render_config(const ExperimentConfig& config);

// Synthetic benchmark scene used when no dataset is configured.
SynthParams benchmark_synth();

}  // namespace densal
