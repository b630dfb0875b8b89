#include "agcdro/csv.hpp"

#include "agcdro/error.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace agcdro {

namespace {

std::vector<std::string> split_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    cells.push_back(cell);
    for (auto& s : cells) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = (b == std::string::npos) ? std::string{} : s.substr(b, e - b + 1);
    }
    return cells;
}

} // namespace

std::size_t CsvTable::column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    throw InputError(source.string() + ": missing column '" + std::string(name) + "'");
}

double CsvTable::number(std::size_t row, std::size_t col) const
{
    const std::string& cell = rows.at(row).at(col);
    double value = 0.0;
    const auto* begin = cell.data();
    const auto* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) {
        throw InputError(source.string() + ": row " + std::to_string(row + 1) + ", column '" +
                         header.at(col) + "': not a number: '" + cell + "'");
    }
    return value;
}

long long CsvTable::integer(std::size_t row, std::size_t col) const
{
    const std::string& cell = rows.at(row).at(col);
    long long value = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
        throw InputError(source.string() + ": row " + std::to_string(row + 1) + ", column '" +
                         header.at(col) + "': not an integer: '" + cell + "'");
    }
    return value;
}

CsvTable read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open " + path.string());
    }
    CsvTable table;
    table.source = path;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") {
            continue;
        }
        if (line[0] == '#') {
            table.comments.push_back(line);
            continue;
        }
        auto cells = split_line(line);
        if (!have_header) {
            table.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw InputError(path.string() + ": row " + std::to_string(table.rows.size() + 1) +
                             " has " + std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(table.header.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (!have_header) {
        throw InputError(path.string() + ": empty CSV (no header)");
    }
    return table;
}

std::string format_double(double value)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    // Prefer the shortest representation that still round-trips.
    for (int prec = 6; prec < 17; ++prec) {
        char shorter[40];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, value);
        double back = 0.0;
        std::from_chars(shorter, shorter + std::char_traits<char>::length(shorter), back);
        if (back == value) {
            return shorter;
        }
    }
    return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& comments)
    : out_(path), path_(path)
{
    if (!out_) {
        throw InputError("cannot write " + path.string());
    }
    for (const auto& c : comments) {
        out_ << "# " << c << '\n';
    }
}

void CsvWriter::header(const std::vector<std::string>& names)
{
    row(names);
}

void CsvWriter::row(const std::vector<std::string>& cells)
{
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) {
            out_ << ',';
        }
        out_ << cells[i];
    }
    out_ << '\n';
}

void CsvWriter::row(std::initializer_list<double> values)
{
    bool first = true;
    for (double v : values) {
        if (!first) {
            out_ << ',';
        }
        first = false;
        out_ << format_double(v);
    }
    out_ << '\n';
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

} // namespace agcdro
