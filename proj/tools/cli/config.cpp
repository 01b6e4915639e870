#include "config.hpp"

#include "mrsae/csv.hpp"
#include "mrsae/data.hpp"
#include "mrsae/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace mrsae::cli {

namespace {

enum class Kind { text, number, flag };

struct Field {
    const char* key;
    Kind kind;
    bool affects_results;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ValidationError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used == v.size())
            return out;
    } catch (const std::exception&) {
    }
    throw ValidationError("config key '" + key + "' expects a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes")
        return true;
    if (v == "false" || v == "0" || v == "no")
        return false;
    throw ValidationError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

template <typename M>
Field text(const char* key, bool affects, M member) {
    return {key, Kind::text, affects, [member](ExperimentConfig& c, const std::string& v) { c.*member = v; },
            [member](const ExperimentConfig& c) { return c.*member; }};
}

template <typename M>
Field count(const char* key, M member) {
    return {key, Kind::number, true,
            [member, key](ExperimentConfig& c, const std::string& v) {
                c.*member = static_cast<std::remove_reference_t<decltype(c.*member)>>(to_u64(key, v));
            },
            [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
Field real(const char* key, M member) {
    return {key, Kind::number, true, [member, key](ExperimentConfig& c, const std::string& v) { c.*member = to_double(key, v); },
            [member](const ExperimentConfig& c) { return csv::format_double(c.*member); }};
}

template <typename M>
Field flag(const char* key, M member) {
    return {key, Kind::flag, true, [member, key](ExperimentConfig& c, const std::string& v) { c.*member = to_bool(key, v); },
            [member](const ExperimentConfig& c) { return from_bool(c.*member); }};
}

const std::vector<Field>& fields() {
    using C = ExperimentConfig;
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(count("seed", &C::seed));
        f.push_back(count("threads", &C::threads));
        f.back().affects_results = false;
        f.push_back(text("out", false, &C::out));
        f.push_back(text("data.embeddings", false, &C::embeddings));
        f.push_back(text("data.covariates", false, &C::covariates));
        f.push_back(text("data.embedding_format", true, &C::embedding_format));
        f.push_back(text("data.cohort_b_embeddings", false, &C::cohort_b_embeddings));
        f.push_back(text("data.cohort_b_covariates", false, &C::cohort_b_covariates));

        f.push_back(count("synth.n_subjects", &C::synth_subjects));
        f.push_back(count("synth.d", &C::synth_d));
        f.push_back(count("synth.min_scans", &C::synth_min_scans));
        f.push_back(count("synth.max_scans", &C::synth_max_scans));
        f.push_back(real("synth.noise_sigma", &C::synth_noise));
        f.push_back(count("synth.loading_seed", &C::synth_loading_seed));
        f.push_back(text("synth.confounds", true, &C::synth_confounds));
        f.push_back(flag("synth.cohort_b", &C::synth_cohort_b));
        f.push_back(text("synth.cohort_b_drop", true, &C::synth_cohort_b_drop));

        f.push_back({"train.activation", Kind::text, true,
                     [](C& c, const std::string& v) { c.train.activation.kind = parse_activation(v); },
                     [](const C& c) { return to_string(c.train.activation.kind); }});
        f.push_back({"train.k", Kind::number, true,
                     [](C& c, const std::string& v) { c.train.activation.k = to_u64("train.k", v); },
                     [](const C& c) { return std::to_string(c.train.activation.k); }});
        f.push_back({"train.expansion", Kind::number, true,
                     [](C& c, const std::string& v) { c.train.expansion = to_u64("train.expansion", v); },
                     [](const C& c) { return std::to_string(c.train.expansion); }});
        f.push_back({"train.lambda", Kind::number, true,
                     [](C& c, const std::string& v) { c.train.lambda = to_double("train.lambda", v); },
                     [](const C& c) { return csv::format_double(c.train.lambda); }});
        f.push_back({"train.k_nn", Kind::number, true,
                     [](C& c, const std::string& v) { c.train.k_nn = to_u64("train.k_nn", v); },
                     [](const C& c) { return std::to_string(c.train.k_nn); }});
        f.push_back({"train.epochs", Kind::number, true,
                     [](C& c, const std::string& v) { c.train.epochs = to_u64("train.epochs", v); },
                     [](const C& c) { return std::to_string(c.train.epochs); }});
        f.push_back({"train.lr", Kind::number, true,
                     [](C& c, const std::string& v) { c.train.lr = to_double("train.lr", v); },
                     [](const C& c) { return csv::format_double(c.train.lr); }});
        f.push_back({"train.batch_size", Kind::number, true,
                     [](C& c, const std::string& v) { c.train.batch_size = to_u64("train.batch_size", v); },
                     [](const C& c) { return std::to_string(c.train.batch_size); }});
        f.push_back({"train.holdout_fraction", Kind::number, true,
                     [](C& c, const std::string& v) { c.train.holdout_fraction = to_double("train.holdout_fraction", v); },
                     [](const C& c) { return csv::format_double(c.train.holdout_fraction); }});

        f.push_back(real("annotate.alpha", &C::alpha));
        f.push_back(flag("annotate.latest_scan", &C::annotate_latest));

        f.push_back(count("evaluate.folds", &C::folds));
        f.push_back(real("evaluate.threshold", &C::threshold));
        f.push_back(flag("evaluate.latest_scan", &C::eval_latest));
        f.push_back(text("evaluate.selectors", true, &C::selectors));
        f.push_back(flag("evaluate.ablation", &C::ablation));
        f.push_back(text("evaluate.ablation_lambdas", true, &C::ablation_lambdas));
        f.push_back(text("evaluate.ablation_expansions", true, &C::ablation_expansions));
        f.push_back(text("evaluate.ablation_topk", true, &C::ablation_topk));
        return f;
    }();
    return table;
}

const Field& field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key)
            return f;
    throw ValidationError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\')
            out += '\\';
        out += ch;
    }
    return out + "\"";
}

std::string unquote(const std::string& s, std::size_t line) {
    if (s.size() < 2 || s.front() != '"')
        return s;
    if (s.back() != '"')
        throw ParseError("unterminated string", line, 1);
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        if (s[i] == '\\' && i + 2 < s.size())
            ++i;
        out += s[i];
    }
    return out;
}

/// Strips a trailing `# comment` that is not inside quotes.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && quoted) {
            ++i;
            continue;
        }
        if (line[i] == '"')
            quoted = !quoted;
        else if (line[i] == '#' && !quoted)
            return line.substr(0, i);
    }
    return line;
}

} // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, value); }

std::string ExperimentConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& ExperimentConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& f : fields())
            out.emplace_back(f.key);
        return out;
    }();
    return k;
}

void ExperimentConfig::validate() const {
    if (out.empty())
        throw ValidationError("out must not be empty");
    if (threads == 0)
        throw ValidationError("threads must be at least 1");
    parse_embedding_format(embedding_format);
    if (synth_min_scans == 0 || synth_max_scans < synth_min_scans)
        throw ValidationError("synth scans per subject need 1 <= min_scans <= max_scans");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ValidationError("annotate.alpha must lie in (0, 1)");
    if (folds < 2)
        throw ValidationError("evaluate.folds must be at least 2");
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ValidationError("evaluate.threshold must lie in (0, 1)");
    // TopK k is checked against the data dimension when training starts.
    auto t = train;
    t.activation.k = 1;
    t.validate(1);
}

std::string ExperimentConfig::serialize() const {
    std::ostringstream out;
    for (const auto& f : fields()) {
        const auto v = f.get(*this);
        out << f.key << " = " << (f.kind == Kind::text ? quote(v) : v) << "\n";
    }
    return out.str();
}

std::string ExperimentConfig::hash() const {
    std::string material;
    for (const auto& f : fields())
        if (f.affects_results)
            material += std::string(f.key) + "=" + f.get(*this) + "\n";
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(material)));
    return buf;
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string raw, section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = trim(strip_comment(raw));
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ParseError("malformed section header", line_no, 1);
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("expected key = value", line_no, 1);
        auto key = trim(line.substr(0, eq));
        if (!section.empty())
            key = section + "." + key;
        const auto value = unquote(trim(line.substr(eq + 1)), line_no);
        try {
            c.set(key, value);
        } catch (const ParseError&) {
            throw;
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), line_no, eq + 2);
        }
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty())
            out.push_back(item);
    }
    return out;
}

} // namespace mrsae::cli
