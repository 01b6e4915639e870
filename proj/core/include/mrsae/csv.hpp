#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mrsae::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    /// 1-based file line of each data row, for error messages.
    std::vector<std::size_t> lines;

    /// Index of a header column, or npos.
    std::size_t column(std::string_view name) const;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

/// Reads a comma-separated file. Leading lines starting with '#' are skipped.
/// Throws ParseError on ragged rows, MissingArtifactError if the file is absent.
Table read(const std::filesystem::path& path);

std::vector<std::string> split_line(std::string_view line);

/// Shortest decimal text that round-trips the double (17 significant digits).
std::string format_double(double v);
/// Fixed-precision text for human-facing reports.
std::string format_fixed(double v, int digits);

double parse_double(std::string_view text, std::size_t row, std::size_t column);
long long parse_int(std::string_view text, std::size_t row, std::size_t column);

void write_row(std::ostream& out, const std::vector<std::string>& cells);

/// Writes "# provenance {json}" when the block is non-empty.
void write_provenance(std::ostream& out, const std::string& provenance_json);

/// Opens a file for writing; throws ValidationError when it cannot be created.
std::ofstream open_output(const std::filesystem::path& path);

} // namespace mrsae::csv
