#include "mecor/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "mecor/error.hpp"

namespace mecor {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& text, std::size_t line, const std::string& col) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && text[0] == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw DataError("line " + std::to_string(line) + ", column '" + col +
                        "': cannot parse '" + text + "' as a number");
    return v;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

Dataset read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("CSV input is empty");
    std::vector<std::string> header = split_fields(line);
    for (auto& h : header) h = trim(h);

    std::vector<std::vector<double>> values(header.size());
    std::vector<std::vector<std::uint8_t>> missing(header.size());
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_fields(line);
        if (fields.size() != header.size())
            throw DataError("line " + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));
        for (std::size_t j = 0; j < fields.size(); ++j) {
            const std::string f = trim(fields[j]);
            if (f.empty()) {
                values[j].push_back(0.0);
                missing[j].push_back(1);
            } else {
                values[j].push_back(parse_number(f, lineno, header[j]));
                missing[j].push_back(0);
            }
        }
    }

    std::size_t r_index = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == "r") r_index = j;
    if (r_index == header.size()) throw DataError("CSV has no sub-study indicator column 'r'");

    std::vector<std::uint8_t> r(values[r_index].size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (missing[r_index][i])
            throw DataError("row " + std::to_string(i) + ": sub-study indicator 'r' is missing");
        const double v = values[r_index][i];
        if (v != 0.0 && v != 1.0)
            throw DataError("row " + std::to_string(i) + ": sub-study indicator 'r' must be 0 or 1");
        r[i] = static_cast<std::uint8_t>(v);
    }

    Dataset ds(std::move(r));
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j == r_index) continue;
        Column c;
        c.name = header[j];
        c.values = std::move(values[j]);
        c.missing = std::move(missing[j]);
        bool binary = true;
        for (std::size_t i = 0; i < c.values.size(); ++i)
            if (!c.missing[i] && c.values[i] != 0.0 && c.values[i] != 1.0) binary = false;
        c.type = binary ? ColumnType::Binary : ColumnType::Continuous;
        ds.add_column(std::move(c));
    }
    return ds;
}

Dataset read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path + "'");
    return read_csv(in);
}

void write_csv(std::ostream& out, const Dataset& ds) {
    for (const auto& c : ds.columns()) out << c.name << ',';
    out << "r\n";
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (const auto& c : ds.columns()) {
            if (!c.is_missing(i)) out << format_double(c.values[i]);
            out << ',';
        }
        out << static_cast<int>(ds.r()[i]) << '\n';
    }
}

void write_csv_file(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    write_csv(out, ds);
}

}  // namespace mecor
