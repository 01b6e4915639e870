#pragma once

#include "mrsae/sae.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mrsae::cli {

/// Everything one experiment needs. Serialized as flat `key = value` lines; `[section]`
/// headers are accepted on input and prefix the keys that follow them.
struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::size_t threads = 1;
    std::string out = "out";

    // Inputs. Empty paths resolve to the files `synth` writes under `out`.
    std::string embeddings;
    std::string covariates;
    std::string embedding_format = "csv";
    std::string cohort_b_embeddings;
    std::string cohort_b_covariates;

    std::size_t synth_subjects = 700;
    std::size_t synth_d = 64;
    std::size_t synth_min_scans = 1;
    std::size_t synth_max_scans = 5;
    double synth_noise = 0.01;
    std::uint64_t synth_loading_seed = 7;
    /// `source>target:strength,...`; empty means the reference graph.
    std::string synth_confounds;
    bool synth_cohort_b = true;
    /// Comorbidity left out of the second cohort's table (empty keeps all).
    std::string synth_cohort_b_drop;

    TrainConfig train;

    double alpha = 0.05;
    bool annotate_latest = true;

    std::size_t folds = 5;
    double threshold = 0.5;
    bool eval_latest = true;
    std::string selectors = "top:16,category:AD-related,category:comorbidity,random:16,all,raw,covariates";
    bool ablation = false;
    std::string ablation_lambdas = "0,0.1,1,10";
    std::string ablation_expansions;
    std::string ablation_topk;

    /// Throws ValidationError for unknown keys or malformed values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();

    void validate() const;
    /// Canonical text: every key, in fixed order.
    std::string serialize() const;
    /// Hash of the keys that can change results (paths and threads excluded).
    std::string hash() const;

    bool operator==(const ExperimentConfig& o) const { return serialize() == o.serialize(); }

    std::filesystem::path out_path(const std::string& name) const { return std::filesystem::path(out) / name; }
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Splits "a,b,c" on commas, dropping blanks.
std::vector<std::string> split_list(const std::string& text);

} // namespace mrsae::cli
