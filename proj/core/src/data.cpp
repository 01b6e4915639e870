#include "mrsae/data.hpp"
#include "mrsae/csv.hpp"
#include "mrsae/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace mrsae {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool is_missing(const std::string& cell) {
    const auto l = lower(cell);
    return l.empty() || l == "na" || l == "nan" || l == "null";
}

int parse_diagnosis(const std::string& cell, std::size_t row, std::size_t col) {
    const auto l = lower(cell);
    if (l == "cn")
        return 0;
    if (l == "mci")
        return 1;
    if (l == "ad")
        return 2;
    const auto v = csv::parse_int(cell, row, col);
    if (v < 0 || v > 2)
        throw ParseError("diagnosis must be CN/MCI/AD or 0/1/2, got '" + cell + "'", row, col);
    return static_cast<int>(v);
}

int parse_binary(const std::string& cell, std::size_t row, std::size_t col, const char* what) {
    const auto v = csv::parse_int(cell, row, col);
    if (v != 0 && v != 1)
        throw ParseError(std::string(what) + " must be 0 or 1, got '" + cell + "'", row, col);
    return static_cast<int>(v);
}

double parse_visit(const std::string& cell, std::size_t row, std::size_t col, bool is_date) {
    if (!is_date)
        return csv::parse_double(cell, row, col);
    // YYYY-MM-DD -> YYYYMMDD keeps chronological order.
    std::string digits;
    for (char c : cell)
        if (c != '-')
            digits.push_back(c);
    if (digits.size() != 8)
        throw ParseError("scan_date must be YYYY-MM-DD, got '" + cell + "'", row, col);
    return csv::parse_double(digits, row, col);
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, std::span<const std::size_t> rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (auto r : rows)
        out.push_back(v[r]);
    return out;
}

} // namespace

void EmbeddingMatrix::validate() const {
    if (values.rows() < 2)
        throw ValidationError("embedding matrix needs at least 2 rows, has " + std::to_string(values.rows()));
    if (values.cols() < 1)
        throw ValidationError("embedding matrix needs at least 1 column");
    if (sample_ids.size() != rows())
        throw ValidationError("sample_ids (" + std::to_string(sample_ids.size()) + ") do not match rows (" +
                              std::to_string(rows()) + ")");
    for (Eigen::Index i = 0; i < values.rows(); ++i)
        for (Eigen::Index j = 0; j < values.cols(); ++j)
            if (!std::isfinite(values(i, j)))
                throw ParseError("non-finite embedding value for " + sample_ids[i], i + 1, j + 1);
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < sample_ids.size(); ++i)
        if (!seen.insert(sample_ids[i]).second)
            throw ParseError("duplicate sample_id '" + sample_ids[i] + "'", i + 1, 0);
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::size_t> rows) const {
    EmbeddingMatrix out;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(rows[i]));
    out.sample_ids = pick(sample_ids, rows);
    out.layer_index = layer_index;
    return out;
}

EmbeddingFormat parse_embedding_format(const std::string& name) {
    const auto l = lower(name);
    if (l == "csv")
        return EmbeddingFormat::csv;
    if (l == "raw-f32" || l == "raw_f32" || l == "f32")
        return EmbeddingFormat::raw_f32;
    throw ValidationError("unknown embedding format '" + name + "' (expected csv or raw-f32)");
}

namespace {

EmbeddingMatrix load_csv_embeddings(const std::filesystem::path& path) {
    const auto table = csv::read(path);
    if (table.header.empty() || table.header.front() != "sample_id")
        throw ParseError(path.string() + ": first header column must be 'sample_id'", 1, 1);
    if (table.header.size() < 2)
        throw ParseError(path.string() + ": header has no embedding columns", 1, 2);
    EmbeddingMatrix m;
    const auto n = static_cast<Eigen::Index>(table.rows.size());
    const auto d = static_cast<Eigen::Index>(table.header.size() - 1);
    m.values.resize(n, d);
    m.sample_ids.reserve(table.rows.size());
    std::unordered_set<std::string> seen;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = table.rows[i];
        const auto line = table.lines[i];
        if (!seen.insert(row[0]).second)
            throw ParseError(path.string() + ": duplicate sample_id '" + row[0] + "'", line, 1);
        m.sample_ids.push_back(row[0]);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double v = csv::parse_double(row[j + 1], line, j + 2);
            if (!std::isfinite(v))
                throw ParseError(path.string() + ": non-finite value '" + row[j + 1] + "' in column " +
                                     table.header[j + 1],
                                 line, j + 2);
            m.values(i, j) = v;
        }
    }
    m.validate();
    return m;
}

std::filesystem::path header_path(const std::filesystem::path& payload) {
    return std::filesystem::path(payload.string() + ".json");
}

EmbeddingMatrix load_raw_embeddings(const std::filesystem::path& path) {
    const auto hpath = header_path(path);
    std::ifstream hin(hpath);
    if (!hin)
        throw MissingArtifactError("cannot open raw-f32 header " + hpath.string());
    json header;
    try {
        hin >> header;
    } catch (const json::exception& e) {
        throw ParseError(hpath.string() + ": malformed JSON header: " + e.what(), 1, 0);
    }
    for (const char* key : {"n", "d", "ids_path"})
        if (!header.contains(key))
            throw ParseError(hpath.string() + ": header missing '" + key + "'", 1, 0);
    const auto n = header.at("n").get<std::int64_t>();
    const auto d = header.at("d").get<std::int64_t>();
    if (n < 0 || d < 0)
        throw ParseError(hpath.string() + ": negative dimensions", 1, 0);

    const auto expected = static_cast<std::uintmax_t>(n) * static_cast<std::uintmax_t>(d) * 4u;
    if (!std::filesystem::exists(path))
        throw MissingArtifactError("cannot open raw-f32 payload " + path.string());
    const auto actual = std::filesystem::file_size(path);
    if (actual != expected)
        throw ValidationError(path.string() + ": size mismatch, header declares n=" + std::to_string(n) +
                              ", d=" + std::to_string(d) + " (" + std::to_string(expected) + " bytes) but payload has " +
                              std::to_string(actual) + " bytes");

    EmbeddingMatrix m;
    if (header.contains("layer") && !header.at("layer").is_null())
        m.layer_index = header.at("layer").get<int>();
    m.values.resize(n, d);
    std::ifstream in(path, std::ios::binary);
    std::vector<std::uint32_t> buf(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        for (std::int64_t j = 0; j < d; ++j) {
            std::uint32_t bits = buf[j];
            if constexpr (std::endian::native == std::endian::big)
                bits = __builtin_bswap32(bits);
            const float f = std::bit_cast<float>(bits);
            if (!std::isfinite(f))
                throw ParseError(path.string() + ": non-finite value", i + 1, j + 1);
            m.values(i, j) = f;
        }
    }

    auto ids_path = std::filesystem::path(header.at("ids_path").get<std::string>());
    if (ids_path.is_relative())
        ids_path = path.parent_path() / ids_path;
    std::ifstream ids(ids_path);
    if (!ids)
        throw MissingArtifactError("cannot open sample id file " + ids_path.string());
    std::string line;
    while (std::getline(ids, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (!line.empty())
            m.sample_ids.push_back(line);
    }
    if (m.sample_ids.size() != static_cast<std::size_t>(n))
        throw ValidationError(ids_path.string() + ": expected " + std::to_string(n) + " ids, found " +
                              std::to_string(m.sample_ids.size()));
    m.validate();
    return m;
}

} // namespace

EmbeddingMatrix load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
    return format == EmbeddingFormat::csv ? load_csv_embeddings(path) : load_raw_embeddings(path);
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path, EmbeddingFormat format,
                      const std::string& provenance_json) {
    if (format == EmbeddingFormat::csv) {
        std::ofstream out(path);
        if (!out)
            throw ValidationError("cannot write " + path.string());
        csv::write_provenance(out, provenance_json);
        std::vector<std::string> cells{"sample_id"};
        for (Eigen::Index j = 0; j < m.values.cols(); ++j)
            cells.push_back("e" + std::to_string(j));
        csv::write_row(out, cells);
        for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
            cells.assign(1, m.sample_ids[i]);
            for (Eigen::Index j = 0; j < m.values.cols(); ++j)
                cells.push_back(csv::format_double(m.values(i, j)));
            csv::write_row(out, cells);
        }
        return;
    }

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("cannot write " + path.string());
    for (Eigen::Index i = 0; i < m.values.rows(); ++i)
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.values(i, j)));
            if constexpr (std::endian::native == std::endian::big)
                bits = __builtin_bswap32(bits);
            out.write(reinterpret_cast<const char*>(&bits), 4);
        }
    const auto ids_name = path.filename().string() + ".ids";
    std::ofstream ids(path.parent_path() / ids_name);
    for (const auto& id : m.sample_ids)
        ids << id << '\n';
    json header{{"n", m.values.rows()}, {"d", m.values.cols()}, {"ids_path", ids_name}};
    header["layer"] = m.layer_index ? json(*m.layer_index) : json(nullptr);
    if (!provenance_json.empty())
        header["provenance"] = json::parse(provenance_json);
    std::ofstream hout(header_path(path));
    hout << header.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Covariates

void CovariateTable::validate() const {
    const auto n = size();
    auto check = [&](std::size_t len, const char* what) {
        if (len != n)
            throw ValidationError(std::string("covariate column ") + what + " has " + std::to_string(len) +
                                  " rows, expected " + std::to_string(n));
    };
    check(subject_id.size(), "subject_id");
    check(age.size(), "age");
    check(sex.size(), "sex");
    check(apoe4.size(), "apoe4");
    check(diagnosis.size(), "diagnosis");
    if (comorbidities.size() != comorbidity_names.size())
        throw ValidationError("comorbidity names and columns disagree");
    for (const auto& c : comorbidities)
        check(c.size(), "comorbidity");
    if (has_converter())
        check(converter.size(), "converter");
    if (has_visit())
        check(visit.size(), "visit");
    if (secondary.size() != secondary_names.size())
        throw ValidationError("secondary names and columns disagree");
    for (const auto& c : secondary)
        check(c.size(), "secondary");

    std::unordered_set<std::string> seen;
    for (std::size_t r = 0; r < n; ++r) {
        if (!seen.insert(sample_id[r]).second)
            throw ParseError("duplicate sample_id '" + sample_id[r] + "'", r + 1, 1);
        if (!(age[r] > 0.0) || !std::isfinite(age[r]))
            throw ParseError("age must be positive for " + sample_id[r], r + 1, 3);
        if (sex[r] != 0 && sex[r] != 1)
            throw ParseError("sex must be 0/1 for " + sample_id[r], r + 1, 4);
        if (apoe4[r] < 0 || apoe4[r] > 2)
            throw ParseError("apoe4 must be 0/1/2 for " + sample_id[r], r + 1, 5);
        if (diagnosis[r] < 0 || diagnosis[r] > 2)
            throw ParseError("diagnosis must be 0/1/2 for " + sample_id[r], r + 1, 6);
        for (std::size_t m = 0; m < comorbidities.size(); ++m)
            if (comorbidities[m][r] != 0 && comorbidities[m][r] != 1)
                throw ParseError("comorbidity cm_" + comorbidity_names[m] + " must be 0/1", r + 1, 0);
        if (has_converter() && converter[r] && diagnosis[r] != static_cast<int>(Diagnosis::mci))
            throw ParseError("converter label on non-MCI row " + sample_id[r], r + 1, 0);
    }
}

CovariateTable CovariateTable::select(std::span<const std::size_t> rows) const {
    CovariateTable t;
    t.sample_id = pick(sample_id, rows);
    t.subject_id = pick(subject_id, rows);
    t.age = pick(age, rows);
    t.sex = pick(sex, rows);
    t.apoe4 = pick(apoe4, rows);
    t.diagnosis = pick(diagnosis, rows);
    t.comorbidity_names = comorbidity_names;
    for (const auto& c : comorbidities)
        t.comorbidities.push_back(pick(c, rows));
    if (has_converter())
        t.converter = pick(converter, rows);
    if (has_visit())
        t.visit = pick(visit, rows);
    t.secondary_names = secondary_names;
    for (const auto& c : secondary)
        t.secondary.push_back(pick(c, rows));
    return t;
}

CovariateTable CovariateTable::aligned_to(const std::vector<std::string>& ids) const {
    std::unordered_map<std::string, std::size_t> index;
    index.reserve(size());
    for (std::size_t r = 0; r < size(); ++r)
        index.emplace(sample_id[r], r);
    std::vector<std::size_t> rows;
    rows.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end())
            throw ValidationError("covariates have no row for sample_id '" + id + "'");
        rows.push_back(it->second);
    }
    return select(rows);
}

bool CovariateTable::drop_comorbidity(const std::string& name) {
    auto it = std::find(comorbidity_names.begin(), comorbidity_names.end(), name);
    if (it == comorbidity_names.end())
        return false;
    const auto pos = static_cast<std::size_t>(it - comorbidity_names.begin());
    comorbidity_names.erase(it);
    comorbidities.erase(comorbidities.begin() + static_cast<std::ptrdiff_t>(pos));
    return true;
}

CovariateTable load_covariates(const std::filesystem::path& path) {
    const auto table = csv::read(path);
    std::vector<std::size_t> required;
    for (const char* name : {"sample_id", "subject_id", "age", "sex", "apoe4", "diagnosis"}) {
        const auto c = table.column(name);
        if (c == csv::Table::npos)
            throw ParseError(path.string() + ": missing required column '" + name + "'", 1, 0);
        required.push_back(c);
    }
    const auto visit_col = table.column("visit");
    const auto date_col = table.column("scan_date");
    const auto conv_col = table.column("converter");

    CovariateTable t;
    std::vector<std::size_t> cm_cols, sec_cols;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        const auto& h = table.header[c];
        if (std::find(required.begin(), required.end(), c) != required.end() || c == visit_col || c == date_col ||
            c == conv_col)
            continue;
        if (h.rfind("cm_", 0) == 0) {
            t.comorbidity_names.push_back(h.substr(3));
            cm_cols.push_back(c);
        } else {
            t.secondary_names.push_back(h);
            sec_cols.push_back(c);
        }
    }
    t.comorbidities.resize(cm_cols.size());
    t.secondary.resize(sec_cols.size());

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.lines[r];
        t.sample_id.push_back(row[required[0]]);
        t.subject_id.push_back(row[required[1]]);
        t.age.push_back(csv::parse_double(row[required[2]], line, required[2] + 1));
        t.sex.push_back(parse_binary(row[required[3]], line, required[3] + 1, "sex"));
        const auto apoe = csv::parse_int(row[required[4]], line, required[4] + 1);
        if (apoe < 0 || apoe > 2)
            throw ParseError("apoe4 must be 0, 1 or 2", line, required[4] + 1);
        t.apoe4.push_back(static_cast<int>(apoe));
        t.diagnosis.push_back(parse_diagnosis(row[required[5]], line, required[5] + 1));
        for (std::size_t m = 0; m < cm_cols.size(); ++m)
            t.comorbidities[m].push_back(parse_binary(row[cm_cols[m]], line, cm_cols[m] + 1, "comorbidity"));
        for (std::size_t s = 0; s < sec_cols.size(); ++s) {
            const auto& cell = row[sec_cols[s]];
            t.secondary[s].push_back(is_missing(cell) ? std::nan("")
                                                      : csv::parse_double(cell, line, sec_cols[s] + 1));
        }
        if (conv_col != csv::Table::npos) {
            const auto& cell = row[conv_col];
            if (is_missing(cell)) {
                t.converter.emplace_back();
            } else {
                const int v = parse_binary(cell, line, conv_col + 1, "converter");
                if (t.diagnosis.back() != static_cast<int>(Diagnosis::mci))
                    throw ParseError(path.string() + ": converter label on non-MCI row '" + t.sample_id.back() + "'",
                                     line, conv_col + 1);
                t.converter.emplace_back(v);
            }
        }
        if (visit_col != csv::Table::npos)
            t.visit.push_back(parse_visit(row[visit_col], line, visit_col + 1, false));
        else if (date_col != csv::Table::npos)
            t.visit.push_back(parse_visit(row[date_col], line, date_col + 1, true));
    }
    t.validate();
    return t;
}

void write_covariates(const CovariateTable& t, const std::filesystem::path& path, const std::string& provenance_json) {
    std::ofstream out(path);
    if (!out)
        throw ValidationError("cannot write " + path.string());
    csv::write_provenance(out, provenance_json);
    std::vector<std::string> header{"sample_id", "subject_id", "age", "sex", "apoe4", "diagnosis"};
    if (t.has_visit())
        header.push_back("visit");
    if (t.has_converter())
        header.push_back("converter");
    for (const auto& n : t.comorbidity_names)
        header.push_back("cm_" + n);
    for (const auto& n : t.secondary_names)
        header.push_back(n);
    csv::write_row(out, header);
    for (std::size_t r = 0; r < t.size(); ++r) {
        std::vector<std::string> cells{t.sample_id[r], t.subject_id[r], csv::format_double(t.age[r]),
                                       std::to_string(t.sex[r]), std::to_string(t.apoe4[r]),
                                       std::to_string(t.diagnosis[r])};
        if (t.has_visit())
            cells.push_back(csv::format_double(t.visit[r]));
        if (t.has_converter())
            cells.push_back(t.converter[r] ? std::to_string(*t.converter[r]) : std::string());
        for (const auto& c : t.comorbidities)
            cells.push_back(std::to_string(c[r]));
        for (const auto& c : t.secondary)
            cells.push_back(std::isnan(c[r]) ? std::string() : csv::format_double(c[r]));
        csv::write_row(out, cells);
    }
}

std::vector<std::size_t> latest_scan_rows(const CovariateTable& table, std::vector<std::string>* warnings) {
    if (!table.has_visit())
        throw ValidationError("latest scan selection needs a 'visit' or 'scan_date' column");
    std::unordered_map<std::string, std::size_t> best;
    for (std::size_t r = 0; r < table.size(); ++r) {
        auto [it, inserted] = best.emplace(table.subject_id[r], r);
        if (inserted)
            continue;
        const auto cur = it->second;
        if (table.visit[r] > table.visit[cur]) {
            it->second = r;
        } else if (table.visit[r] == table.visit[cur]) {
            const auto keep = table.sample_id[r] > table.sample_id[cur] ? r : cur;
            if (warnings)
                warnings->push_back("subject " + table.subject_id[r] + ": scans " + table.sample_id[cur] + " and " +
                                    table.sample_id[r] + " share visit " + csv::format_double(table.visit[r]) +
                                    "; keeping " + table.sample_id[keep]);
            it->second = keep;
        }
    }
    std::vector<std::size_t> rows;
    rows.reserve(best.size());
    for (const auto& [subject, r] : best)
        rows.push_back(r);
    std::sort(rows.begin(), rows.end());
    return rows;
}

LatestScanResult latest_scan_per_subject(const CovariateTable& table, const EmbeddingMatrix& embeddings) {
    LatestScanResult result;
    const auto rows = latest_scan_rows(table, &result.warnings);
    result.covariates = table.select(rows);

    std::unordered_map<std::string, std::size_t> emb_index;
    for (std::size_t i = 0; i < embeddings.rows(); ++i)
        emb_index.emplace(embeddings.sample_ids[i], i);
    std::vector<std::size_t> emb_rows;
    emb_rows.reserve(rows.size());
    for (const auto& id : result.covariates.sample_id) {
        auto it = emb_index.find(id);
        if (it == emb_index.end())
            throw ValidationError("embeddings have no row for sample_id '" + id + "'");
        emb_rows.push_back(it->second);
    }
    result.embeddings = embeddings.select(emb_rows);
    return result;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_subject(
    const std::vector<std::string>& subject_ids, double holdout_fraction, std::uint64_t seed) {
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        throw ValidationError("holdout fraction must lie in [0, 1)");
    const std::set<std::string> unique(subject_ids.begin(), subject_ids.end());
    std::vector<std::string> subjects(unique.begin(), unique.end());
    Rng rng(seed);
    rng.shuffle(subjects);
    auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(subjects.size())));
    if (holdout_fraction > 0.0 && n_hold == 0 && subjects.size() >= 2)
        n_hold = 1;
    const std::unordered_set<std::string> held(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> train, test;
    for (std::size_t r = 0; r < subject_ids.size(); ++r)
        (held.count(subject_ids[r]) ? test : train).push_back(r);
    return {std::move(train), std::move(test)};
}

} // namespace mrsae
