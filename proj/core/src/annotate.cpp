#include "mrsae/annotate.hpp"
#include "mrsae/csv.hpp"
#include "mrsae/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace mrsae {

namespace {

using nlohmann::json;

std::vector<double> column_of(const Matrix& Z, std::size_t j) {
    std::vector<double> out(static_cast<std::size_t>(Z.rows()));
    for (Eigen::Index i = 0; i < Z.rows(); ++i)
        out[static_cast<std::size_t>(i)] = Z(i, static_cast<Eigen::Index>(j));
    return out;
}

template <typename T>
std::vector<double> as_double(const std::vector<T>& v) {
    return {v.begin(), v.end()};
}

std::string cell(const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string{}; }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

const char* group_name(VariableGroup g) {
    switch (g) {
    case VariableGroup::diagnosis: return "diagnosis";
    case VariableGroup::sex: return "sex";
    case VariableGroup::apoe4: return "apoe4";
    case VariableGroup::comorbidity: return "comorbidity";
    }
    return "comorbidity";
}

VariableGroup group_for(const std::string& name) {
    if (name == "diagnosis")
        return VariableGroup::diagnosis;
    if (name == "sex")
        return VariableGroup::sex;
    if (name == "apoe4")
        return VariableGroup::apoe4;
    return VariableGroup::comorbidity;
}

} // namespace

std::string to_string(Category c) {
    switch (c) {
    case Category::ad_related: return "AD-related";
    case Category::sex_related: return "sex-related";
    case Category::genetic: return "genetic";
    case Category::comorbidity: return "comorbidity";
    case Category::aging: return "aging";
    case Category::non_specific: return "non-specific";
    }
    return "non-specific";
}

Category parse_category(const std::string& name) {
    for (auto c : {Category::ad_related, Category::sex_related, Category::genetic, Category::comorbidity,
                   Category::aging, Category::non_specific})
        if (to_string(c) == name)
            return c;
    if (name == "ad" || name == "AD")
        return Category::ad_related;
    if (name == "sex")
        return Category::sex_related;
    throw ValidationError("unknown category '" + name + "'");
}

Category category_of(VariableGroup g) {
    switch (g) {
    case VariableGroup::diagnosis: return Category::ad_related;
    case VariableGroup::sex: return Category::sex_related;
    case VariableGroup::apoe4: return Category::genetic;
    case VariableGroup::comorbidity: return Category::comorbidity;
    }
    return Category::comorbidity;
}

std::vector<ClinicalVariable> primary_variables(const CovariateTable& c) {
    std::vector<ClinicalVariable> out;
    out.push_back({"diagnosis", VariableGroup::diagnosis, as_double(c.diagnosis)});
    out.push_back({"sex", VariableGroup::sex, as_double(c.sex)});
    out.push_back({"apoe4", VariableGroup::apoe4, as_double(c.apoe4)});
    for (std::size_t m = 0; m < c.comorbidity_names.size(); ++m)
        out.push_back({c.comorbidity_names[m], VariableGroup::comorbidity, as_double(c.comorbidities[m])});
    return out;
}

const FeatureAnnotation* AnnotationTable::find(std::size_t feature) const {
    for (const auto& r : rows)
        if (r.feature == feature)
            return &r;
    return nullptr;
}

std::size_t AnnotationTable::variable_index(const std::string& name) const {
    for (std::size_t v = 0; v < variables.size(); ++v)
        if (variables[v] == name)
            return v;
    return static_cast<std::size_t>(-1);
}

std::map<Category, std::size_t> AnnotationTable::category_counts() const {
    std::map<Category, std::size_t> out;
    for (auto c : {Category::ad_related, Category::sex_related, Category::genetic, Category::comorbidity,
                   Category::aging, Category::non_specific})
        out[c] = 0;
    for (const auto& r : rows)
        ++out[r.category];
    return out;
}

std::vector<std::size_t> AnnotationTable::features_in(Category c) const {
    std::vector<std::size_t> out;
    for (const auto& r : rows)
        if (r.category == c)
            out.push_back(r.feature);
    std::sort(out.begin(), out.end());
    return out;
}

CategoryDecision assign_category(const FeatureAnnotation& row, const std::vector<std::string>& variables,
                                 const std::vector<VariableGroup>& groups, double alpha) {
    std::size_t best = variables.size();
    for (std::size_t v = 0; v < row.associations.size() && v < variables.size(); ++v) {
        const auto& a = row.associations[v];
        if (!a.rho || !(a.p_adjusted < alpha))
            continue;
        if (best == variables.size()) {
            best = v;
            continue;
        }
        const auto& b = row.associations[best];
        const double ra = std::abs(*a.rho), rb = std::abs(*b.rho);
        if (ra > rb || (ra == rb && a.p_adjusted < b.p_adjusted))
            best = v;
    }
    if (best < variables.size())
        return {category_of(groups[best]), variables[best]};
    if (row.r_age && row.p_age_adjusted < alpha)
        return {Category::aging, "age"};
    return {Category::non_specific, {}};
}

AnnotationTable annotate_activations(const Matrix& Z, std::span<const std::size_t> alive,
                                     const CovariateTable& covariates, double alpha) {
    if (static_cast<std::size_t>(Z.rows()) != covariates.size())
        throw ValidationError("covariates have " + std::to_string(covariates.size()) + " rows but activations have " +
                              std::to_string(Z.rows()));
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ValidationError("alpha must lie in (0, 1)");
    covariates.validate();

    const auto vars = primary_variables(covariates);
    AnnotationTable table;
    table.alpha = alpha;
    table.n_samples = covariates.size();
    for (const auto& v : vars) {
        table.variables.push_back(v.name);
        table.groups.push_back(v.group);
    }
    if (alive.empty())
        return table;
    const std::size_t n = covariates.size();
    if (n < 4)
        throw ValidationError("annotation needs at least 4 samples");

    const auto age_ranks = stats::average_ranks(covariates.age);
    std::vector<std::vector<double>> var_ranks;
    std::vector<std::optional<double>> var_age;
    for (const auto& v : vars) {
        var_ranks.push_back(stats::average_ranks(v.values));
        var_age.push_back(stats::pearson(var_ranks.back(), age_ranks));
    }

    const std::size_t V = vars.size();
    std::vector<double> family_p;
    std::vector<std::pair<std::size_t, std::size_t>> family_idx;
    std::vector<double> age_p;
    std::vector<std::size_t> age_idx;

    for (std::size_t f = 0; f < alive.size(); ++f) {
        const std::size_t j = alive[f];
        if (j >= static_cast<std::size_t>(Z.cols()))
            throw ValidationError("alive feature index out of range");
        FeatureAnnotation row;
        row.feature = j;
        row.associations.resize(V);
        const auto rf = stats::average_ranks(column_of(Z, j));
        const auto r_fa = stats::pearson(rf, age_ranks);
        row.r_age = r_fa;
        if (r_fa) {
            row.p_age = stats::correlation_pvalue(*r_fa, n, 0).p;
            age_p.push_back(row.p_age);
            age_idx.push_back(f);
        }
        for (std::size_t v = 0; v < V; ++v) {
            auto& a = row.associations[v];
            const auto r_fv = stats::pearson(rf, var_ranks[v]);
            if (!r_fv || !r_fa || !var_age[v])
                continue;
            a.rho = stats::partial_correlation(*r_fv, *r_fa, *var_age[v]);
            if (!a.rho)
                continue;
            a.rho = std::clamp(*a.rho, -1.0, 1.0);
            a.p_raw = stats::pvalue_partial(*a.rho, n).p;
            family_p.push_back(a.p_raw);
            family_idx.emplace_back(f, v);
        }
        table.rows.push_back(std::move(row));
    }

    const auto fdr = stats::bh_fdr(family_p, alpha);
    for (std::size_t i = 0; i < family_idx.size(); ++i) {
        auto& a = table.rows[family_idx[i].first].associations[family_idx[i].second];
        a.p_adjusted = fdr.adjusted[i];
        a.significant = a.p_adjusted < alpha;
    }
    const auto age_fdr = stats::bh_fdr(age_p, alpha);
    for (std::size_t i = 0; i < age_idx.size(); ++i) {
        auto& r = table.rows[age_idx[i]];
        r.p_age_adjusted = age_fdr.adjusted[i];
        r.age_significant = r.p_age_adjusted < alpha;
    }
    for (auto& r : table.rows) {
        const auto d = assign_category(r, table.variables, table.groups, alpha);
        r.category = d.category;
        r.winner = d.winner;
    }
    return table;
}

AnnotationTable annotate_all(const TrainedSae& model, const Matrix& H, const CovariateTable& covariates,
                             double alpha) {
    if (static_cast<std::size_t>(H.rows()) != covariates.size())
        throw ValidationError("covariates have " + std::to_string(covariates.size()) + " rows but embeddings have " +
                              std::to_string(H.rows()));
    const Matrix Z = encode(model.params, model.config.activation, H);
    const auto alive = alive_census(model, H);
    return annotate_activations(Z, alive, covariates, alpha);
}

AnnotationTable annotate_latest_scans(const TrainedSae& model, const Matrix& H, const CovariateTable& covariates,
                                      double alpha) {
    if (static_cast<std::size_t>(H.rows()) != covariates.size())
        throw ValidationError("embeddings and covariates have different row counts");
    const auto rows = latest_scan_rows(covariates);
    Matrix Hl(static_cast<Eigen::Index>(rows.size()), H.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        Hl.row(static_cast<Eigen::Index>(i)) = H.row(static_cast<Eigen::Index>(rows[i]));
    return annotate_all(model, Hl, covariates.select(rows), alpha);
}

EnrichmentReport enrichment_test(const AnnotationTable& annotations, const Matrix& Z,
                                 const CovariateTable& covariates, double alpha) {
    if (static_cast<std::size_t>(Z.rows()) != covariates.size())
        throw ValidationError("secondary columns are not aligned with the activations");
    EnrichmentReport report;
    for (std::size_t s = 0; s < covariates.secondary_names.size(); ++s) {
        EnrichmentVariable ev;
        ev.name = covariates.secondary_names[s];
        const auto& col = covariates.secondary[s];
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < col.size(); ++i)
            if (std::isfinite(col[i]))
                keep.push_back(i);
        std::vector<double> values;
        for (auto i : keep)
            values.push_back(col[i]);
        const bool constant =
            values.empty() || std::all_of(values.begin(), values.end(), [&](double x) { return x == values.front(); });
        if (keep.size() < 3 || constant) {
            ev.skipped = true;
            report.warnings.push_back("secondary variable '" + ev.name + "' skipped: " +
                                      (keep.size() < 3 ? "fewer than 3 observed values" : "zero variance"));
            report.variables.push_back(std::move(ev));
            continue;
        }
        std::vector<double> pvals;
        std::vector<std::size_t> tested;
        for (const auto& row : annotations.rows) {
            EnrichmentCell c;
            c.feature = row.feature;
            std::vector<double> f;
            f.reserve(keep.size());
            for (auto i : keep)
                f.push_back(Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(row.feature)));
            c.rho = stats::spearman(f, values);
            if (c.rho) {
                c.rho = std::clamp(*c.rho, -1.0, 1.0);
                c.p_raw = stats::correlation_pvalue(*c.rho, keep.size(), 0).p;
                pvals.push_back(c.p_raw);
                tested.push_back(ev.cells.size());
            }
            ev.cells.push_back(c);
        }
        const auto fdr = stats::bh_fdr(pvals, alpha);
        for (auto c : {Category::ad_related, Category::sex_related, Category::genetic, Category::comorbidity,
                       Category::aging, Category::non_specific})
            ev.significant_by_category[c] = 0;
        for (std::size_t i = 0; i < tested.size(); ++i) {
            auto& c = ev.cells[tested[i]];
            c.p_adjusted = fdr.adjusted[i];
            c.significant = c.p_adjusted < alpha;
            if (c.significant) {
                ++ev.n_significant;
                ++ev.significant_by_category[annotations.rows[tested[i]].category];
            }
        }
        report.variables.push_back(std::move(ev));
    }
    return report;
}

void write_annotation_csv(const AnnotationTable& t, const std::filesystem::path& path,
                          const std::string& provenance_json) {
    auto out = csv::open_output(path);
    csv::write_provenance(out, provenance_json);
    std::vector<std::string> header{"feature", "category", "winner", "r_age", "p_age", "p_age_adjusted"};
    for (const auto& v : t.variables) {
        header.push_back("rho_" + v);
        header.push_back("p_" + v);
        header.push_back("padj_" + v);
        header.push_back("sig_" + v);
    }
    csv::write_row(out, header);
    for (const auto& r : t.rows) {
        std::vector<std::string> cells{std::to_string(r.feature), to_string(r.category), r.winner, cell(r.r_age),
                                       csv::format_double(r.p_age), csv::format_double(r.p_age_adjusted)};
        for (const auto& a : r.associations) {
            cells.push_back(cell(a.rho));
            cells.push_back(csv::format_double(a.p_raw));
            cells.push_back(csv::format_double(a.p_adjusted));
            cells.push_back(a.significant ? "1" : "0");
        }
        csv::write_row(out, cells);
    }
}

void write_annotation_json(const AnnotationTable& t, const std::filesystem::path& path,
                           const std::string& provenance_json) {
    json doc;
    doc["alpha"] = t.alpha;
    doc["n_samples"] = t.n_samples;
    doc["variables"] = json::array();
    for (std::size_t v = 0; v < t.variables.size(); ++v)
        doc["variables"].push_back({{"name", t.variables[v]}, {"group", group_name(t.groups[v])}});
    json counts = json::object();
    for (const auto& [c, k] : t.category_counts())
        counts[to_string(c)] = k;
    doc["category_counts"] = counts;
    doc["features"] = json::array();
    for (const auto& r : t.rows) {
        json f{{"feature", r.feature},
               {"category", to_string(r.category)},
               {"winner", r.winner},
               {"age", {{"r", opt_json(r.r_age)}, {"p", r.p_age}, {"p_adjusted", r.p_age_adjusted},
                        {"significant", r.age_significant}}}};
        json assoc = json::object();
        for (std::size_t v = 0; v < r.associations.size(); ++v) {
            const auto& a = r.associations[v];
            assoc[t.variables[v]] = {{"rho", opt_json(a.rho)}, {"p", a.p_raw}, {"p_adjusted", a.p_adjusted},
                                     {"significant", a.significant}};
        }
        f["partial"] = assoc;
        doc["features"].push_back(f);
    }
    if (!provenance_json.empty())
        doc["provenance"] = json::parse(provenance_json);
    auto out = csv::open_output(path);
    out << doc.dump(2) << '\n';
}

void write_heatmap_csv(const AnnotationTable& t, const std::filesystem::path& path,
                       const std::string& provenance_json) {
    auto out = csv::open_output(path);
    csv::write_provenance(out, provenance_json);
    std::vector<std::string> header{"feature"};
    header.insert(header.end(), t.variables.begin(), t.variables.end());
    csv::write_row(out, header);
    for (const auto& r : t.rows) {
        std::vector<std::string> cells{std::to_string(r.feature)};
        for (const auto& a : r.associations)
            cells.push_back(a.rho && a.p_adjusted < t.alpha ? csv::format_double(std::abs(*a.rho)) : std::string{});
        csv::write_row(out, cells);
    }
}

void write_enrichment_csv(const EnrichmentReport& report, const std::filesystem::path& path,
                          const std::string& provenance_json) {
    auto out = csv::open_output(path);
    csv::write_provenance(out, provenance_json);
    csv::write_row(out, {"variable", "feature", "rho", "p", "p_adjusted", "significant"});
    for (const auto& v : report.variables) {
        if (v.skipped) {
            csv::write_row(out, {v.name, "", "", "", "", "skipped"});
            continue;
        }
        for (const auto& c : v.cells)
            csv::write_row(out, {v.name, std::to_string(c.feature), cell(c.rho), csv::format_double(c.p_raw),
                                 csv::format_double(c.p_adjusted), c.significant ? "1" : "0"});
    }
}

AnnotationTable read_annotation_csv(const std::filesystem::path& path) {
    const auto tab = csv::read(path);
    const auto need = [&](std::string_view name) {
        const auto c = tab.column(name);
        if (c == csv::Table::npos)
            throw ParseError(path.string() + ": missing column '" + std::string(name) + "'", 0, 0);
        return c;
    };
    const auto c_feat = need("feature"), c_cat = need("category"), c_win = need("winner");
    const auto c_rage = need("r_age"), c_page = need("p_age"), c_padj = need("p_age_adjusted");
    AnnotationTable t;
    std::vector<std::size_t> rho_cols, p_cols, padj_cols, sig_cols;
    for (std::size_t c = 0; c < tab.header.size(); ++c) {
        const auto& h = tab.header[c];
        if (h.rfind("rho_", 0) == 0) {
            const auto name = h.substr(4);
            t.variables.push_back(name);
            t.groups.push_back(group_for(name));
            rho_cols.push_back(c);
            p_cols.push_back(need("p_" + name));
            padj_cols.push_back(need("padj_" + name));
            sig_cols.push_back(need("sig_" + name));
        }
    }
    for (std::size_t r = 0; r < tab.rows.size(); ++r) {
        const auto& row = tab.rows[r];
        const auto line = tab.lines[r];
        FeatureAnnotation a;
        a.feature = static_cast<std::size_t>(csv::parse_int(row[c_feat], line, c_feat));
        a.category = parse_category(row[c_cat]);
        a.winner = row[c_win];
        if (!row[c_rage].empty())
            a.r_age = csv::parse_double(row[c_rage], line, c_rage);
        a.p_age = csv::parse_double(row[c_page], line, c_page);
        a.p_age_adjusted = csv::parse_double(row[c_padj], line, c_padj);
        for (std::size_t v = 0; v < t.variables.size(); ++v) {
            VariableAssociation va;
            if (!row[rho_cols[v]].empty())
                va.rho = csv::parse_double(row[rho_cols[v]], line, rho_cols[v]);
            va.p_raw = csv::parse_double(row[p_cols[v]], line, p_cols[v]);
            va.p_adjusted = csv::parse_double(row[padj_cols[v]], line, padj_cols[v]);
            va.significant = row[sig_cols[v]] == "1";
            a.associations.push_back(va);
        }
        t.rows.push_back(std::move(a));
    }
    return t;
}

} // namespace mrsae
