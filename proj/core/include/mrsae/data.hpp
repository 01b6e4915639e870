#pragma once

#include "mrsae/common.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mrsae {

/// N x d frozen representations with one identifier per row.
struct EmbeddingMatrix {
    Matrix values;
    std::vector<std::string> sample_ids;
    std::optional<int> layer_index;

    std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }

    /// Throws ValidationError naming the first violated invariant.
    void validate() const;
    EmbeddingMatrix select(std::span<const std::size_t> rows) const;
};

enum class EmbeddingFormat { csv, raw_f32 };

EmbeddingFormat parse_embedding_format(const std::string& name);

/// CSV: header `sample_id,e0,...`. raw-f32: `path` is the little-endian payload and
/// `path + ".json"` the header {n, d, layer, ids_path}.
EmbeddingMatrix load_embeddings(const std::filesystem::path& path, EmbeddingFormat format);
void write_embeddings(const EmbeddingMatrix& embeddings, const std::filesystem::path& path, EmbeddingFormat format,
                      const std::string& provenance_json = {});

enum class Diagnosis : int { cn = 0, mci = 1, ad = 2 };

/// Column-oriented clinical covariates; row r describes sample_id[r].
struct CovariateTable {
    std::vector<std::string> sample_id;
    std::vector<std::string> subject_id;
    std::vector<double> age;
    std::vector<int> sex;
    std::vector<int> apoe4;
    std::vector<int> diagnosis;

    /// Names without the `cm_` prefix; values[m][row] in {0, 1}.
    std::vector<std::string> comorbidity_names;
    std::vector<std::vector<int>> comorbidities;

    /// Empty when the table has no converter column; otherwise one entry per row.
    std::vector<std::optional<int>> converter;
    /// Empty when the table has no visit-order column.
    std::vector<double> visit;

    /// Any column not otherwise recognized; NaN marks a missing cell.
    std::vector<std::string> secondary_names;
    std::vector<std::vector<double>> secondary;

    std::size_t size() const { return sample_id.size(); }
    bool has_converter() const { return !converter.empty(); }
    bool has_visit() const { return !visit.empty(); }

    void validate() const;
    CovariateTable select(std::span<const std::size_t> rows) const;
    /// Reorders rows to follow `ids`; throws ValidationError if any id is absent.
    CovariateTable aligned_to(const std::vector<std::string>& ids) const;
    /// Drops a comorbidity column by name (without prefix). Returns false if absent.
    bool drop_comorbidity(const std::string& name);
};

CovariateTable load_covariates(const std::filesystem::path& path);
void write_covariates(const CovariateTable& table, const std::filesystem::path& path,
                      const std::string& provenance_json = {});

struct LatestScanResult {
    CovariateTable covariates;
    EmbeddingMatrix embeddings;
    std::vector<std::string> warnings;
};

/// Keeps the maximal-visit row of every subject. Ties go to the lexicographically
/// larger sample_id and are reported in `warnings`.
LatestScanResult latest_scan_per_subject(const CovariateTable& table, const EmbeddingMatrix& embeddings);

/// Row indices of the maximal-visit scan per subject, in table order.
std::vector<std::size_t> latest_scan_rows(const CovariateTable& table, std::vector<std::string>* warnings = nullptr);

/// Deterministic subject-level split; returns (train rows, held-out rows).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_subject(
    const std::vector<std::string>& subject_ids, double holdout_fraction, std::uint64_t seed);

} // namespace mrsae
