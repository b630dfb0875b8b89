#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace agcdro {

/// Parsed CSV file. Lines starting with '#' are provenance comments and are skipped.
struct CsvTable {
    std::filesystem::path source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> comments;

    /// Column index by name; throws InputError naming the file when absent.
    [[nodiscard]] std::size_t column(std::string_view name) const;
    /// Parses a cell as double; throws InputError with row/column on failure.
    [[nodiscard]] double number(std::size_t row, std::size_t col) const;
    [[nodiscard]] long long integer(std::size_t row, std::size_t col) const;
};

CsvTable read_csv(const std::filesystem::path& path);

/// Shortest round-trip text for a double ("%.17g" trimmed).
std::string format_double(double value);

class CsvWriter {
public:
    /// Opens (truncates) the file; `comment` lines are emitted first, prefixed with "# ".
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& comments);

    void header(const std::vector<std::string>& names);
    void row(const std::vector<std::string>& cells);
    void row(std::initializer_list<double> values);

private:
    std::ofstream out_;
    std::filesystem::path path_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 1469598103934665603ULL);
std::string hex64(std::uint64_t value);

} // namespace agcdro
