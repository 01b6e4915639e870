#pragma once

#include "mrsae/data.hpp"
#include "mrsae/sae.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mrsae {

enum class Category { ad_related, sex_related, genetic, comorbidity, aging, non_specific };

std::string to_string(Category c);
Category parse_category(const std::string& name);

/// Which category a clinical variable maps to when it wins a feature.
enum class VariableGroup { diagnosis, sex, apoe4, comorbidity };

Category category_of(VariableGroup g);

/// A non-age clinical variable used for category assignment.
struct ClinicalVariable {
    std::string name;
    VariableGroup group;
    std::vector<double> values;
};

/// diagnosis, sex, apoe4, then comorbidities in declared order.
std::vector<ClinicalVariable> primary_variables(const CovariateTable& covariates);

struct VariableAssociation {
    /// Age-partialled Spearman correlation; nullopt when undefined (zero variance or
    /// a degenerate denominator). Undefined entries are left out of the FDR family.
    std::optional<double> rho;
    double p_raw = 1.0;
    double p_adjusted = 1.0;
    bool significant = false;
};

struct FeatureAnnotation {
    std::size_t feature = 0;
    std::optional<double> r_age;
    double p_age = 1.0;
    double p_age_adjusted = 1.0;
    bool age_significant = false;
    /// Aligned with AnnotationTable::variables.
    std::vector<VariableAssociation> associations;
    Category category = Category::non_specific;
    /// Winning variable name; "age" for aging, empty for non-specific.
    std::string winner;
};

struct AnnotationTable {
    std::vector<std::string> variables;
    std::vector<VariableGroup> groups;
    double alpha = 0.05;
    std::size_t n_samples = 0;
    std::vector<FeatureAnnotation> rows;

    const FeatureAnnotation* find(std::size_t feature) const;
    std::size_t variable_index(const std::string& name) const;
    std::map<Category, std::size_t> category_counts() const;
    /// Alive features carrying category `c`, ascending.
    std::vector<std::size_t> features_in(Category c) const;
};

struct CategoryDecision {
    Category category = Category::non_specific;
    std::string winner;
};

/// Strongest significant |rho| (adjusted p < alpha) wins; ties go to the smaller adjusted
/// p, then to the earlier variable. Falls back to aging (age adjusted p < alpha), then
/// non-specific.
CategoryDecision assign_category(const FeatureAnnotation& row, const std::vector<std::string>& variables,
                                 const std::vector<VariableGroup>& groups, double alpha);

/// Annotates the `alive` columns of the activation matrix Z (rows aligned with covariates).
/// FDR runs flat over all (feature x variable) tests; age p-values get their own FDR
/// pass over features.
AnnotationTable annotate_activations(const Matrix& Z, std::span<const std::size_t> alive,
                                     const CovariateTable& covariates, double alpha = 0.05);

/// Encodes H, takes the alive census over H, and annotates.
AnnotationTable annotate_all(const TrainedSae& model, const Matrix& H, const CovariateTable& covariates,
                             double alpha = 0.05);

/// annotate_all on the latest scan of each subject only, so every test sees one
/// observation per subject.
AnnotationTable annotate_latest_scans(const TrainedSae& model, const Matrix& H, const CovariateTable& covariates,
                                      double alpha = 0.05);

struct EnrichmentCell {
    std::size_t feature = 0;
    std::optional<double> rho;
    double p_raw = 1.0;
    double p_adjusted = 1.0;
    bool significant = false;
};

struct EnrichmentVariable {
    std::string name;
    bool skipped = false;
    std::vector<EnrichmentCell> cells;
    std::size_t n_significant = 0;
    std::map<Category, std::size_t> significant_by_category;
};

struct EnrichmentReport {
    std::vector<EnrichmentVariable> variables;
    std::vector<std::string> warnings;
};

/// Spearman test of every annotated feature against every secondary column, with BH
/// applied separately within each secondary variable. Rows with a missing secondary
/// value are dropped for that variable. Reporting only; categories are untouched.
EnrichmentReport enrichment_test(const AnnotationTable& annotations, const Matrix& Z,
                                 const CovariateTable& covariates, double alpha = 0.05);

void write_annotation_csv(const AnnotationTable& table, const std::filesystem::path& path,
                          const std::string& provenance_json = {});
void write_annotation_json(const AnnotationTable& table, const std::filesystem::path& path,
                           const std::string& provenance_json = {});
/// Feature x variable matrix of |rho| where adjusted p < alpha, blank elsewhere.
void write_heatmap_csv(const AnnotationTable& table, const std::filesystem::path& path,
                       const std::string& provenance_json = {});
void write_enrichment_csv(const EnrichmentReport& report, const std::filesystem::path& path,
                          const std::string& provenance_json = {});

/// Parses the CSV written by write_annotation_csv (categories and winners only,
/// plus per-variable rho / adjusted p).
AnnotationTable read_annotation_csv(const std::filesystem::path& path);

} // namespace mrsae
