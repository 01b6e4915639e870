#include "commands.hpp"

#include "mrsae/annotate.hpp"
#include "mrsae/checkpoint.hpp"
#include "mrsae/csv.hpp"
#include "mrsae/data.hpp"
#include "mrsae/diagnostics.hpp"
#include "mrsae/evaluate.hpp"
#include "mrsae/manifold.hpp"
#include "mrsae/rng.hpp"
#include "mrsae/sae.hpp"
#include "mrsae/synthetic.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace mrsae::cli {

namespace {

struct Cohort {
    EmbeddingMatrix embeddings;
    CovariateTable covariates;
};

fs::path or_default(const std::string& configured, const fs::path& fallback) {
    return configured.empty() ? fallback : fs::path(configured);
}

Cohort load_cohort(const fs::path& embeddings, const fs::path& covariates, const std::string& format) {
    Cohort c;
    c.embeddings = load_embeddings(embeddings, parse_embedding_format(format));
    c.covariates = load_covariates(covariates).aligned_to(c.embeddings.sample_ids);
    return c;
}

Cohort load_primary(const ExperimentConfig& cfg) {
    return load_cohort(or_default(cfg.embeddings, cfg.out_path("embeddings.csv")),
                       or_default(cfg.covariates, cfg.out_path("covariates.csv")), cfg.embedding_format);
}

Cohort load_secondary(const ExperimentConfig& cfg) {
    return load_cohort(or_default(cfg.cohort_b_embeddings, cfg.out_path("cohort_b/embeddings.csv")),
                       or_default(cfg.cohort_b_covariates, cfg.out_path("cohort_b/covariates.csv")),
                       cfg.embedding_format);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw ValidationError("cannot create output directory " + dir.string());
}

void require(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path))
        throw MissingArtifactError("missing " + path.string() + " (run `mrsae " + producer + "` first)");
}

TrainConfig train_config(const ExperimentConfig& cfg) {
    auto t = cfg.train;
    t.seed = cfg.seed;
    return t;
}

TrainedSae load_model(const ExperimentConfig& cfg) {
    const auto path = cfg.out_path("model.ckpt");
    require(path, "train");
    return load_checkpoint(path);
}

/// The manifold graph over the training rows: the stored one when it matches, built otherwise.
ManifoldGraph training_graph(const ExperimentConfig& cfg, const TrainingSplit& split, bool* loaded) {
    const auto path = cfg.out_path("graph.bin");
    *loaded = fs::exists(path);
    if (!*loaded)
        return build_knn_graph(split.train, cfg.train.k_nn, cfg.threads);
    auto g = read_graph(path);
    if (g.n_nodes() != static_cast<std::size_t>(split.train.rows()) || g.k() != cfg.train.k_nn)
        throw ValidationError(path.string() + " does not match the training rows or k_nn; rerun `mrsae graph`");
    return g;
}

void write_json_file(const ordered_json& doc, const fs::path& path) {
    auto out = csv::open_output(path);
    out << doc.dump(2) << "\n";
}

ordered_json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError("cannot open " + path.string());
    try {
        return ordered_json::parse(in);
    } catch (const ordered_json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::string fixed(double v, int digits = 3) { return csv::format_fixed(v, digits); }

std::string fixed(const ordered_json& v, int digits = 3) {
    return v.is_number() ? fixed(v.get<double>(), digits) : std::string("n/a");
}

void write_synthetic(const SyntheticCohort& cohort, const fs::path& dir, const std::string& prov, bool truth) {
    ensure_dir(dir);
    write_embeddings(cohort.embeddings, dir / "embeddings.csv", EmbeddingFormat::csv, prov);
    write_covariates(cohort.covariates, dir / "covariates.csv", prov);
    if (truth)
        write_ground_truth(cohort, dir / "ground_truth.json", dir / "factor_values.csv", prov);
}

} // namespace

std::string provenance(const ExperimentConfig& cfg, const std::string& command, const std::string& extra_key,
                       const std::string& extra_value) {
    ordered_json p{{"tool", "mrsae"},
                   {"version", library_version()},
                   {"command", command},
                   {"config_hash", cfg.hash()},
                   {"seed", cfg.seed}};
    if (!extra_key.empty())
        p[extra_key] = extra_value;
    return p.dump();
}

void cmd_synth(const ExperimentConfig& cfg) {
    auto spec = reference_synthetic_spec(cfg.synth_subjects, cfg.synth_d, cfg.seed, cfg.synth_loading_seed);
    spec.min_scans = cfg.synth_min_scans;
    spec.max_scans = cfg.synth_max_scans;
    spec.noise_sigma = cfg.synth_noise;
    if (!cfg.synth_confounds.empty())
        spec.confound_graph = parse_confound_edges(cfg.synth_confounds);
    const auto cohort = generate_synthetic_cohort(spec);
    const auto prov = provenance(cfg, "synth");
    write_synthetic(cohort, cfg.out, prov, true);
    std::cout << "synth: " << cohort.embeddings.rows() << " scans of " << spec.n_subjects << " subjects, d="
              << spec.d << ", " << spec.n_factors() << " planted factors -> " << cfg.out << "\n";

    if (cfg.synth_cohort_b) {
        auto spec_b = spec;
        spec_b.seed = derive_seed(cfg.seed, "synthetic/cohort_b");
        auto cohort_b = generate_synthetic_cohort(spec_b);
        if (!cfg.synth_cohort_b_drop.empty() && !cohort_b.covariates.drop_comorbidity(cfg.synth_cohort_b_drop))
            throw ValidationError("synth.cohort_b_drop names unknown comorbidity '" + cfg.synth_cohort_b_drop + "'");
        write_synthetic(cohort_b, cfg.out_path("cohort_b"), prov, false);
        std::cout << "synth: second cohort with " << cohort_b.embeddings.rows() << " scans -> "
                  << cfg.out_path("cohort_b").string() << "\n";
    }
}

void cmd_graph(const ExperimentConfig& cfg) {
    const auto c = load_primary(cfg);
    const auto split = split_training_data(c.embeddings.values, c.covariates.subject_id, cfg.train.holdout_fraction,
                                           cfg.seed);
    const auto graph = build_knn_graph(split.train, cfg.train.k_nn, cfg.threads);
    ensure_dir(cfg.out);
    write_graph(graph, cfg.out_path("graph.bin"), provenance(cfg, "graph"));
    std::cout << "graph: " << graph.n_nodes() << " training rows, k=" << graph.k()
              << ", sigma=" << fixed(graph.sigma(), 6) << "\n";
}

void cmd_train(const ExperimentConfig& cfg) {
    const auto c = load_primary(cfg);
    const auto tc = train_config(cfg);
    tc.validate(c.embeddings.dim());
    const auto split = split_training_data(c.embeddings.values, c.covariates.subject_id, tc.holdout_fraction, cfg.seed);
    bool loaded = false;
    ManifoldGraph graph;
    if (tc.lambda > 0.0)
        graph = training_graph(cfg, split, &loaded);
    const auto model = train(split.train, graph, tc, split.holdout.rows() > 0 ? &split.holdout : nullptr);

    ensure_dir(cfg.out);
    const auto prov = provenance(cfg, "train", "variant", model.variant_tag());
    save_checkpoint(model, cfg.out_path("model.ckpt"), prov);

    auto hist = csv::open_output(cfg.out_path("train_history.csv"));
    csv::write_provenance(hist, prov);
    csv::write_row(hist, {"epoch", "reconstruction", "manifold", "total"});
    for (std::size_t e = 0; e < model.loss_history.size(); ++e) {
        const auto& l = model.loss_history[e];
        csv::write_row(hist, {std::to_string(e + 1), csv::format_double(l.reconstruction),
                              csv::format_double(l.manifold), csv::format_double(l.total)});
    }

    const auto red = redundancy(model, split.train);
    ordered_json summary{{"provenance", ordered_json::parse(prov)},
                         {"variant", model.variant_tag()},
                         {"lambda", tc.lambda},
                         {"d", model.params.d()},
                         {"d_sae", model.params.d_sae()},
                         {"k", tc.activation.k},
                         {"epochs", tc.epochs},
                         {"train_rows", model.train_rows},
                         {"holdout_rows", model.holdout_rows},
                         {"explained_variance", model.explained_variance},
                         {"alive", model.alive_count()},
                         {"redundancy", red.mean_abs_r},
                         {"graph", tc.lambda > 0.0 ? (loaded ? "loaded" : "built") : "unused"}};
    write_json_file(summary, cfg.out_path("train_summary.json"));
    std::cout << "train: " << model.variant_tag() << ", EV=" << fixed(model.explained_variance, 4)
              << ", alive=" << model.alive_count() << "/" << model.params.d_sae() << "\n";
}

void cmd_annotate(const ExperimentConfig& cfg) {
    const auto model = load_model(cfg);
    const auto c = load_primary(cfg);
    Matrix H = c.embeddings.values;
    CovariateTable cov = c.covariates;
    if (cfg.annotate_latest) {
        const auto rows = latest_scan_rows(cov);
        H = c.embeddings.select(rows).values;
        cov = cov.select(rows);
    }
    const auto ann = annotate_all(model, H, cov, cfg.alpha);
    const Matrix Z = encode(model.params, model.config.activation, H);
    const auto enrichment = enrichment_test(ann, Z, cov, cfg.alpha);

    ensure_dir(cfg.out);
    const auto prov = provenance(cfg, "annotate");
    write_annotation_csv(ann, cfg.out_path("annotations.csv"), prov);
    write_annotation_json(ann, cfg.out_path("annotations.json"), prov);
    write_heatmap_csv(ann, cfg.out_path("heatmap.csv"), prov);
    write_enrichment_csv(enrichment, cfg.out_path("enrichment.csv"), prov);

    std::cout << "annotate: " << ann.rows.size() << " alive features over " << ann.n_samples << " rows\n";
    for (const auto& [cat, n] : ann.category_counts())
        std::cout << "  " << to_string(cat) << ": " << n << "\n";
    for (const auto& w : enrichment.warnings)
        std::cerr << "warning: " << w << "\n";
}

void cmd_evaluate(const ExperimentConfig& cfg) {
    const auto model = load_model(cfg);
    const auto c = load_primary(cfg);
    if (!c.covariates.has_converter())
        throw ValidationError("evaluate needs a converter column in the covariates");

    const auto selectors = split_list(cfg.selectors);
    std::vector<FeatureSelector> parsed;
    bool needs_annotations = false;
    for (const auto& s : selectors) {
        parsed.push_back(parse_selector(s));
        needs_annotations |= parsed.back().kind == SelectorKind::category;
    }
    if (parsed.empty() && !cfg.ablation)
        throw ValidationError("evaluate.selectors is empty");
    std::optional<AnnotationTable> ann;
    if (needs_annotations) {
        const auto path = cfg.out_path("annotations.csv");
        require(path, "annotate");
        ann = read_annotation_csv(path);
    }

    EvalOptions opt;
    opt.n_folds = cfg.folds;
    opt.seed = cfg.seed;
    opt.threshold = cfg.threshold;
    opt.latest_scan = cfg.eval_latest;

    std::vector<PredictionReport> reports;
    for (const auto& sel : parsed)
        reports.push_back(
            selective_prediction(model, c.embeddings.values, c.covariates, sel, opt, ann ? &*ann : nullptr));

    ensure_dir(cfg.out);
    const auto prov = provenance(cfg, "evaluate", "variant", model.variant_tag());
    if (!reports.empty()) {
        write_prediction_csv(reports, cfg.out_path("prediction.csv"), prov);
        write_prediction_json(reports, cfg.out_path("prediction.json"), prov);
        write_roc_csv(reports, cfg.out_path("roc.csv"), prov);
    }
    std::cout << "evaluate: " << cfg.folds << "-fold subject-level CV\n";
    for (const auto& r : reports)
        std::cout << "  " << r.model << " (d=" << r.d << "): AUC " << fixed(r.auc_mean) << " +/- " << fixed(r.auc_std)
                  << "\n";

    if (cfg.ablation) {
        AblationGrid grid;
        grid.lambdas.clear();
        for (const auto& v : split_list(cfg.ablation_lambdas))
            grid.lambdas.push_back(csv::parse_double(v, 0, 0));
        for (const auto& v : split_list(cfg.ablation_expansions))
            grid.expansions.push_back(static_cast<std::size_t>(csv::parse_int(v, 0, 0)));
        for (const auto& v : split_list(cfg.ablation_topk))
            grid.topk.push_back(static_cast<std::size_t>(csv::parse_int(v, 0, 0)));
        grid.annotate_latest_scan = cfg.annotate_latest;
        const auto tc = train_config(cfg);
        const auto split = split_training_data(c.embeddings.values, c.covariates.subject_id, tc.holdout_fraction, cfg.seed);
        bool loaded = false;
        const auto graph = training_graph(cfg, split, &loaded);
        AblationData data{&split, &graph, &c.embeddings.values, &c.covariates};
        const auto rows = ablation_suite(data, tc, grid, opt, cfg.alpha);
        write_ablation_csv(rows, cfg.out_path("ablation.csv"), prov);
        std::cout << "ablation:\n";
        for (const auto& r : rows)
            std::cout << "  " << r.variant << ": "
                      << (r.error.empty() ? "alive " + std::to_string(r.alive) + ", AUC " + fixed(r.report.auc_mean)
                                          : "failed: " + r.error)
                      << "\n";
    }
}

void cmd_replicate(const ExperimentConfig& cfg) {
    const auto model = load_model(cfg);
    auto a = load_primary(cfg);
    auto b = load_secondary(cfg);
    if (cfg.annotate_latest) {
        for (auto* c : {&a, &b}) {
            const auto rows = latest_scan_rows(c->covariates);
            c->embeddings = c->embeddings.select(rows);
            c->covariates = c->covariates.select(rows);
        }
    }
    const auto rep = cross_cohort_replicate(model, a.embeddings.values, a.covariates, b.embeddings.values,
                                            b.covariates, cfg.alpha);
    ensure_dir(cfg.out);
    write_replication_json(rep, cfg.out_path("replication.json"), provenance(cfg, "replicate"));
    std::cout << "replicate: " << rep.jointly_alive << " jointly alive features, annotation agreement r="
              << fixed(rep.annotation_agreement) << ", activation consistency r=" << fixed(rep.activation_consistency)
              << ", replication rate " << fixed(rep.replication_rate) << "\n";
    if (!rep.dropped_variables.empty()) {
        std::cout << "  variables missing from one cohort:";
        for (const auto& v : rep.dropped_variables)
            std::cout << " " << v;
        std::cout << "\n";
    }
}

void cmd_diagnose(const ExperimentConfig& cfg) {
    const auto c = load_primary(cfg);
    const auto g = geometry_report(c.embeddings.values, c.covariates.diagnosis);
    ensure_dir(cfg.out);
    write_geometry_json(g, cfg.out_path("geometry.json"), provenance(cfg, "diagnose"));
    std::cout << "diagnose: negative fraction " << fixed(g.negative_fraction) << ", radial eta2 "
              << (g.radial_eta2 ? fixed(*g.radial_eta2, 4) : std::string("undefined (single class)"))
              << ", effective dim " << fixed(g.effective_dim, 2) << " of " << g.d << "\n";
}

void cmd_report(const ExperimentConfig& cfg) {
    std::ostringstream md;
    md << "<!-- provenance " << provenance(cfg, "report") << " -->\n";
    md << "# mrsae report\n\n";
    bool any = false;

    if (const auto p = cfg.out_path("train_summary.json"); fs::exists(p)) {
        any = true;
        const auto s = read_json_file(p);
        md << "## Training\n\n"
           << "| variant | lambda | d_sae | k | epochs | explained variance | alive | redundancy |\n"
           << "|---|---|---|---|---|---|---|---|\n"
           << "| " << s.value("variant", "") << " | " << fixed(s["lambda"], 3) << " | " << s.value("d_sae", 0) << " | "
           << s.value("k", 0) << " | " << s.value("epochs", 0) << " | " << fixed(s["explained_variance"], 4) << " | "
           << s.value("alive", 0) << " | " << fixed(s["redundancy"], 3) << " |\n\n";
    }
    if (const auto p = cfg.out_path("annotations.csv"); fs::exists(p)) {
        any = true;
        const auto ann = read_annotation_csv(p);
        md << "## Annotation\n\n" << ann.rows.size() << " alive features, alpha " << fixed(ann.alpha, 3) << "\n\n"
           << "| category | features |\n|---|---|\n";
        for (const auto& [cat, n] : ann.category_counts())
            md << "| " << to_string(cat) << " | " << n << " |\n";
        md << "\n";
    }
    if (const auto p = cfg.out_path("prediction.json"); fs::exists(p)) {
        any = true;
        const auto doc = read_json_file(p);
        md << "## Converter prediction\n\n| model | d | AUC | sensitivity | specificity |\n|---|---|---|---|---|\n";
        for (const auto& r : doc["reports"])
            md << "| " << r.value("model", "") << " | " << r.value("d", 0) << " | " << fixed(r["auc"]["mean"]) << " ± "
               << fixed(r["auc"]["std"]) << " | " << fixed(r["sensitivity"]["mean"], 1) << " | "
               << fixed(r["specificity"]["mean"], 1) << " |\n";
        md << "\n";
    }
    if (const auto p = cfg.out_path("ablation.csv"); fs::exists(p)) {
        any = true;
        const auto t = csv::read(p);
        md << "## Ablation\n\n| variant | alive | d | AUC |\n|---|---|---|---|\n";
        for (const auto& row : t.rows)
            md << "| " << row[t.column("variant")] << " | " << row[t.column("alive")] << " | " << row[t.column("d")]
               << " | " << (row[t.column("auc")].empty() ? "failed" : fixed(csv::parse_double(row[t.column("auc")], 0, 0)))
               << " |\n";
        md << "\n";
    }
    if (const auto p = cfg.out_path("replication.json"); fs::exists(p)) {
        any = true;
        const auto r = read_json_file(p);
        md << "## Replication\n\n"
           << "- jointly alive features: " << r.value("jointly_alive", 0) << "\n"
           << "- annotation agreement r: " << fixed(r["annotation_agreement"]) << "\n"
           << "- activation consistency r: " << fixed(r["activation_consistency"]) << "\n"
           << "- replication rate: " << fixed(r["replication_rate"]) << "\n\n";
    }
    if (const auto p = cfg.out_path("geometry.json"); fs::exists(p)) {
        any = true;
        const auto g = read_json_file(p);
        md << "## Embedding geometry\n\n"
           << "- negative fraction: " << fixed(g["negative_fraction"]) << "\n"
           << "- radial eta2: " << fixed(g["radial_eta2"], 4) << "\n"
           << "- effective dimension: " << fixed(g["effective_dim"], 2) << "\n\n";
    }
    if (!any)
        throw MissingArtifactError("no pipeline outputs found in " + cfg.out);
    auto out = csv::open_output(cfg.out_path("report.md"));
    out << md.str();
    std::cout << md.str();
}

} // namespace mrsae::cli
