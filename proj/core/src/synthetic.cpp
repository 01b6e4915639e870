#include "mrsae/synthetic.hpp"
#include "mrsae/csv.hpp"
#include "mrsae/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <queue>
#include <set>

namespace mrsae {

namespace {

// Standard-normal quantiles used to turn latents into observed categories.
constexpr double kApoe4Cut1 = 0.12566;   // P(0) = 0.55
constexpr double kApoe4Cut2 = 1.28155;   // P(<=1) = 0.90
constexpr double kDiagnosisCut1 = -0.38532; // P(CN) = 0.35
constexpr double kDiagnosisCut2 = 1.17499;  // P(<=MCI) = 0.88
constexpr double kConverterCut = 0.33185;   // P(converter | MCI latent) ~ 0.37
constexpr double kComorbidityCut = 0.52440; // prevalence 0.30
constexpr double kAgeMean = 74.6;
constexpr double kAgeSd = 7.4;
constexpr double kYearsPerVisit = 0.5;
// Factor activation is softplus(kSharpness * (L - kOnset)) / kSharpness: near zero
// for most scans and roughly linear once the latent passes the onset.
constexpr double kSharpness = 4.0;
constexpr double kOnset = 0.5;

struct NodeSet {
    std::vector<std::string> names;
    std::map<std::string, std::size_t> index;

    std::size_t add(const std::string& n) {
        auto [it, inserted] = index.emplace(n, names.size());
        if (inserted)
            names.push_back(n);
        return it->second;
    }
};

NodeSet collect_nodes(const SyntheticSpec& spec) {
    NodeSet nodes;
    for (const char* n : {"age", "sex", "apoe4", "diagnosis", "converter"})
        nodes.add(n);
    for (const auto& c : spec.comorbidities)
        nodes.add("cm_" + c);
    for (const auto& s : spec.secondary)
        nodes.add(s);
    for (const auto& f : spec.factors)
        nodes.add(f.name);
    for (const auto& e : spec.confound_graph) {
        nodes.add(e.source);
        nodes.add(e.target);
    }
    return nodes;
}

/// Kahn's algorithm; ties resolved by node index so the order is deterministic.
std::vector<std::size_t> topological_order(const NodeSet& nodes, const std::vector<ConfoundEdge>& edges) {
    const auto n = nodes.names.size();
    std::vector<std::vector<std::size_t>> children(n);
    std::vector<std::size_t> indegree(n, 0);
    for (const auto& e : edges) {
        const auto s = nodes.index.at(e.source), t = nodes.index.at(e.target);
        children[s].push_back(t);
        ++indegree[t];
    }
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < n; ++i)
        if (indegree[i] == 0)
            ready.push(i);
    std::vector<std::size_t> order;
    while (!ready.empty()) {
        const auto i = ready.top();
        ready.pop();
        order.push_back(i);
        for (auto c : children[i])
            if (--indegree[c] == 0)
                ready.push(c);
    }
    if (order.size() != n) {
        std::string cyclic;
        for (std::size_t i = 0; i < n; ++i)
            if (indegree[i] > 0)
                cyclic += (cyclic.empty() ? "" : ", ") + nodes.names[i];
        throw ValidationError("confound graph has a cycle through: " + cyclic);
    }
    return order;
}

std::string meaning_of(const std::string& node) {
    if (node == "disease")
        return "diagnosis";
    if (node == "aging")
        return "age";
    return node;
}

} // namespace

double factor_activation(double latent) {
    // Monotone in the latent, so rank statistics against covariates are unchanged.
    const double x = kSharpness * (latent - kOnset);
    return (x > 30.0 ? x : std::log1p(std::exp(x))) / kSharpness;
}

void SyntheticSpec::validate() const {
    if (n_subjects < 2)
        throw ValidationError("synthetic cohort needs at least 2 subjects");
    if (min_scans < 1 || max_scans < min_scans)
        throw ValidationError("scans per subject must satisfy 1 <= min <= max");
    if (d < 1)
        throw ValidationError("embedding dimension must be positive");
    if (!(noise_sigma >= 0.0))
        throw ValidationError("noise_sigma must be >= 0");
    if (factors.empty())
        throw ValidationError("at least one planted factor is required");
    std::set<std::string> seen;
    for (const auto& f : factors) {
        if (f.loading.size() != d)
            throw ValidationError("factor '" + f.name + "' loading has length " + std::to_string(f.loading.size()) +
                                  ", expected " + std::to_string(d));
        if (!seen.insert(f.name).second)
            throw ValidationError("factor '" + f.name + "' planted twice");
        if (!(f.scale > 0.0) || !std::isfinite(f.scale))
            throw ValidationError("factor '" + f.name + "' scale must be positive");
        if (f.name == "diagnosis" || f.name == "converter")
            throw ValidationError("factor '" + f.name + "' must be expressed through a latent node (e.g. disease)");
    }
    if (factors.size() > d)
        throw ValidationError("more planted factors than embedding dimensions");
    ColMatrix loadings(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(factors.size()));
    for (std::size_t f = 0; f < factors.size(); ++f)
        for (std::size_t j = 0; j < d; ++j)
            loadings(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(f)) = factors[f].loading[j];
    Eigen::ColPivHouseholderQR<ColMatrix> qr(loadings);
    qr.setThreshold(1e-10);
    if (static_cast<std::size_t>(qr.rank()) != factors.size())
        throw ValidationError("factor loading vectors are linearly dependent");

    std::map<std::string, double> incoming;
    for (const auto& e : confound_graph) {
        if (e.source == e.target)
            throw ValidationError("confound graph has a cycle through: " + e.source);
        if (!std::isfinite(e.strength) || std::abs(e.strength) > 1.0)
            throw ValidationError("confound strength must lie in [-1, 1]");
        incoming[e.target] += e.strength * e.strength;
    }
    for (const auto& [target, total] : incoming)
        if (total > 1.0 + 1e-12)
            throw ValidationError("squared confound strengths into '" + target + "' exceed 1");
    topological_order(collect_nodes(*this), confound_graph);
}

std::size_t GroundTruth::factor_index(const std::string& name) const {
    auto it = std::find(factor_names.begin(), factor_names.end(), name);
    if (it == factor_names.end())
        throw ValidationError("no planted factor named '" + name + "'");
    return static_cast<std::size_t>(it - factor_names.begin());
}

SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec) {
    spec.validate();
    const auto nodes = collect_nodes(spec);
    const auto order = topological_order(nodes, spec.confound_graph);
    const auto n_nodes = nodes.names.size();

    std::vector<std::vector<std::pair<std::size_t, double>>> parents(n_nodes);
    for (const auto& e : spec.confound_graph)
        parents[nodes.index.at(e.target)].emplace_back(nodes.index.at(e.source), e.strength);

    Rng subject_rng(derive_seed(spec.seed, "synthetic/subjects"));
    Rng noise_rng(derive_seed(spec.seed, "synthetic/noise"));

    SyntheticCohort cohort;
    auto& cov = cohort.covariates;
    cov.comorbidity_names = spec.comorbidities;
    cov.comorbidities.resize(spec.comorbidities.size());
    cov.secondary_names = spec.secondary;
    cov.secondary.resize(spec.secondary.size());

    const auto n_f = spec.factors.size();
    const auto d = spec.d;
    std::vector<std::vector<double>> factor_rows;
    std::vector<double> latent(n_nodes), noise(n_nodes), scan_latent(n_nodes);
    const auto age_node = nodes.index.at("age");

    // Latent values for a given shift of the age node; age drift between visits
    // propagates to every descendant of age.
    const auto propagate = [&](double age_shift, std::vector<double>& out) {
        for (auto node : order) {
            double value = 0.0, explained = 0.0;
            for (const auto& [p, w] : parents[node]) {
                value += w * out[p];
                explained += w * w;
            }
            value += std::sqrt(std::max(0.0, 1.0 - explained)) * noise[node];
            out[node] = node == age_node ? value + age_shift : value;
        }
    };

    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        for (auto node : order)
            noise[node] = subject_rng.normal();
        propagate(0.0, latent);
        const auto n_scans =
            spec.min_scans + static_cast<std::size_t>(subject_rng.below(spec.max_scans - spec.min_scans + 1));

        char subject[24];
        std::snprintf(subject, sizeof subject, "S%05zu", s + 1);
        const auto L = [&](const std::string& n) { return latent[nodes.index.at(n)]; };
        const int diagnosis = L("diagnosis") < kDiagnosisCut1 ? 0 : (L("diagnosis") < kDiagnosisCut2 ? 1 : 2);
        const int sex = L("sex") > 0.0 ? 1 : 0;
        const int apoe4 = L("apoe4") < kApoe4Cut1 ? 0 : (L("apoe4") < kApoe4Cut2 ? 1 : 2);
        std::optional<int> converter;
        if (diagnosis == 1)
            converter = L("converter") > kConverterCut ? 1 : 0;

        for (std::size_t v = 0; v < n_scans; ++v) {
            char sample[64];
            std::snprintf(sample, sizeof sample, "%s_V%02zu", subject, v + 1);
            const double drift = kYearsPerVisit * static_cast<double>(v) / kAgeSd;
            propagate(drift, scan_latent);
            const double age_latent = scan_latent[age_node];
            cov.sample_id.emplace_back(sample);
            cov.subject_id.emplace_back(subject);
            cov.age.push_back(kAgeMean + kAgeSd * age_latent);
            cov.sex.push_back(sex);
            cov.apoe4.push_back(apoe4);
            cov.diagnosis.push_back(diagnosis);
            cov.converter.push_back(converter);
            cov.visit.push_back(static_cast<double>(v + 1));
            for (std::size_t m = 0; m < spec.comorbidities.size(); ++m)
                cov.comorbidities[m].push_back(L("cm_" + spec.comorbidities[m]) > kComorbidityCut ? 1 : 0);
            for (std::size_t k = 0; k < spec.secondary.size(); ++k)
                cov.secondary[k].push_back(L(spec.secondary[k]));

            std::vector<double> fv(n_f);
            for (std::size_t f = 0; f < n_f; ++f) {
                const auto node = nodes.index.at(spec.factors[f].name);
                fv[f] = spec.factors[f].scale * factor_activation(scan_latent[node]);
            }
            factor_rows.push_back(std::move(fv));
        }
    }

    const auto n = factor_rows.size();
    auto& truth = cohort.truth;
    truth.factor_values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_f));
    truth.true_dictionary.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n_f));
    for (std::size_t f = 0; f < n_f; ++f) {
        truth.factor_names.push_back(spec.factors[f].name);
        truth.factor_meaning.push_back(meaning_of(spec.factors[f].name));
        for (std::size_t j = 0; j < d; ++j)
            truth.true_dictionary(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(f)) = spec.factors[f].loading[j];
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < n_f; ++f)
            truth.factor_values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = factor_rows[i][f];

    auto& emb = cohort.embeddings;
    emb.values = truth.factor_values * truth.true_dictionary.transpose();
    if (spec.noise_sigma > 0.0)
        for (Eigen::Index i = 0; i < emb.values.rows(); ++i)
            for (Eigen::Index j = 0; j < emb.values.cols(); ++j)
                emb.values(i, j) += spec.noise_sigma * noise_rng.normal();
    emb.sample_ids = cov.sample_id;

    cov.validate();
    emb.validate();
    return cohort;
}

std::vector<std::vector<double>> random_orthonormal_loadings(std::size_t d, std::size_t count, std::uint64_t seed) {
    if (count > d)
        throw ValidationError("cannot draw more orthonormal loadings than dimensions");
    Rng rng(seed);
    ColMatrix g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(count));
    for (Eigen::Index c = 0; c < g.cols(); ++c)
        for (Eigen::Index r = 0; r < g.rows(); ++r)
            g(r, c) = rng.normal();
    // Modified Gram-Schmidt keeps the first direction fixed up to scale.
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
        for (Eigen::Index p = 0; p < c; ++p)
            g.col(c) -= g.col(p).dot(g.col(c)) * g.col(p);
        g.col(c).normalize();
    }
    std::vector<std::vector<double>> out(count, std::vector<double>(d));
    for (std::size_t c = 0; c < count; ++c)
        for (std::size_t r = 0; r < d; ++r)
            out[c][r] = g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    return out;
}

SyntheticSpec reference_synthetic_spec(std::size_t n_subjects, std::size_t d, std::uint64_t seed,
                                       std::uint64_t loading_seed) {
    SyntheticSpec spec;
    spec.n_subjects = n_subjects;
    spec.min_scans = 1;
    spec.max_scans = 5;
    spec.d = d;
    spec.noise_sigma = 0.01;
    spec.seed = seed;
    spec.comorbidities = {"htn", "dm2", "dep"};
    spec.secondary = {"memantine", "donepezil", "scanner_field", "bmi", "systolic_bp", "education"};
    const std::vector<std::string> names{"aging", "disease", "sex", "apoe4", "cm_htn", "cm_dm2", "cm_dep", "scanner"};
    const auto loadings = random_orthonormal_loadings(d, names.size(), loading_seed);
    for (std::size_t f = 0; f < names.size(); ++f)
        spec.factors.push_back({names[f], loadings[f]});
    spec.confound_graph = {
        {"age", "diagnosis", 0.8},
        {"age", "aging", 0.8},
        {"disease", "diagnosis", 0.55},
        {"disease", "converter", 0.9},
        {"disease", "memantine", 0.7},
        {"disease", "donepezil", 0.5},
        {"scanner", "scanner_field", 0.9},
    };
    return spec;
}

void write_ground_truth(const SyntheticCohort& cohort, const std::filesystem::path& json_path,
                        const std::filesystem::path& values_csv_path, const std::string& provenance_json) {
    const auto& t = cohort.truth;
    nlohmann::ordered_json j;
    if (!provenance_json.empty())
        j["provenance"] = nlohmann::ordered_json::parse(provenance_json);
    j["factors"] = t.factor_names;
    j["meaning"] = t.factor_meaning;
    j["d"] = t.true_dictionary.rows();
    auto& dict = j["dictionary"] = nlohmann::ordered_json::array();
    for (Eigen::Index f = 0; f < t.true_dictionary.cols(); ++f) {
        std::vector<double> col(t.true_dictionary.rows());
        for (Eigen::Index i = 0; i < t.true_dictionary.rows(); ++i)
            col[static_cast<std::size_t>(i)] = t.true_dictionary(i, f);
        dict.push_back(col);
    }
    auto out = csv::open_output(json_path);
    out << j.dump(2) << "\n";

    auto values = csv::open_output(values_csv_path);
    csv::write_provenance(values, provenance_json);
    std::vector<std::string> header{"sample_id"};
    header.insert(header.end(), t.factor_names.begin(), t.factor_names.end());
    csv::write_row(values, header);
    for (Eigen::Index r = 0; r < t.factor_values.rows(); ++r) {
        std::vector<std::string> row{cohort.covariates.sample_id[static_cast<std::size_t>(r)]};
        for (Eigen::Index f = 0; f < t.factor_values.cols(); ++f)
            row.push_back(csv::format_double(t.factor_values(r, f)));
        csv::write_row(values, row);
    }
}

std::vector<ConfoundEdge> parse_confound_edges(const std::string& text) {
    std::vector<ConfoundEdge> edges;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find(',', pos);
        if (end == std::string::npos)
            end = text.size();
        std::string item = text.substr(pos, end - pos);
        item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
        pos = end + 1;
        if (item.empty())
            continue;
        const auto gt = item.find('>');
        const auto colon = item.find(':');
        if (gt == std::string::npos || colon == std::string::npos || colon < gt)
            throw ValidationError("confound edge '" + item + "' must look like source>target:strength");
        ConfoundEdge e;
        e.source = item.substr(0, gt);
        e.target = item.substr(gt + 1, colon - gt - 1);
        e.strength = csv::parse_double(item.substr(colon + 1), 0, 0);
        if (e.source.empty() || e.target.empty())
            throw ValidationError("confound edge '" + item + "' has an empty endpoint");
        edges.push_back(e);
    }
    return edges;
}

std::string format_confound_edges(const std::vector<ConfoundEdge>& edges) {
    std::string out;
    for (const auto& e : edges) {
        if (!out.empty())
            out += ",";
        out += e.source + ">" + e.target + ":" + csv::format_double(e.strength);
    }
    return out;
}

} // namespace mrsae
