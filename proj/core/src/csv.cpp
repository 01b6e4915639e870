#include "mrsae/csv.hpp"
#include "mrsae/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace mrsae::csv {

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name)
            return i;
    return npos;
}

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

Table read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError("cannot open " + path.string());
    Table table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (!have_header) {
            if (line.empty() || line.front() == '#')
                continue;
            table.header = split_line(line);
            have_header = true;
            continue;
        }
        if (line.empty())
            continue;
        auto cells = split_line(line);
        if (cells.size() != table.header.size())
            throw ParseError(path.string() + ": expected " + std::to_string(table.header.size()) + " cells, found " +
                                 std::to_string(cells.size()),
                             line_no, cells.size());
        table.rows.push_back(std::move(cells));
        table.lines.push_back(line_no);
    }
    if (!have_header)
        throw ParseError(path.string() + ": missing header", 1, 0);
    return table;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double parse_double(std::string_view text, std::size_t row, std::size_t column) {
    while (!text.empty() && text.front() == ' ')
        text.remove_prefix(1);
    while (!text.empty() && text.back() == ' ')
        text.remove_suffix(1);
    if (!text.empty() && text.front() == '+')
        text.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw ParseError("not a number: '" + std::string(text) + "'", row, column);
    return v;
}

long long parse_int(std::string_view text, std::size_t row, std::size_t column) {
    const double v = parse_double(text, row, column);
    if (!std::isfinite(v) || v != std::floor(v))
        throw ParseError("not an integer: '" + std::string(text) + "'", row, column);
    return static_cast<long long>(v);
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i)
            out << ',';
        const auto& c = cells[i];
        if (c.find_first_of(",\"\n") != std::string::npos) {
            out << '"';
            for (char ch : c) {
                if (ch == '"')
                    out << '"';
                out << ch;
            }
            out << '"';
        } else {
            out << c;
        }
    }
    out << '\n';
}

void write_provenance(std::ostream& out, const std::string& provenance_json) {
    if (!provenance_json.empty())
        out << "# provenance " << provenance_json << '\n';
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("cannot write " + path.string());
    return out;
}

} // namespace mrsae::csv
