#pragma once

#include "config.hpp"

#include <string>

namespace mrsae::cli {

void cmd_synth(const ExperimentConfig& cfg);
void cmd_graph(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_annotate(const ExperimentConfig& cfg);
void cmd_evaluate(const ExperimentConfig& cfg);
void cmd_replicate(const ExperimentConfig& cfg);
void cmd_diagnose(const ExperimentConfig& cfg);
void cmd_report(const ExperimentConfig& cfg);

/// {"tool", "version", "command", "config_hash", "seed", extra...} as compact JSON.
std::string provenance(const ExperimentConfig& cfg, const std::string& command,
                       const std::string& extra_key = {}, const std::string& extra_value = {});

} // namespace mrsae::cli
