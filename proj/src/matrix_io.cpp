#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gwib/matrix_io.hpp"

namespace gwib {

std::string format_double(scalar_t v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_matrix_csv(const std::string& path, const matrix_t& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << m.rows() << "," << m.cols() << "\n";
    for (index_t i = 0; i < m.rows(); ++i) {
        for (index_t j = 0; j < m.cols(); ++j) {
            if (j) out << ",";
            out << format_double(m(i, j));
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

scalar_t parse_cell(const std::string& s, const std::string& where) {
    scalar_t v;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{}) throw ParseError("bad number '" + s + "' at " + where);
    return v;
}

}  // namespace

matrix_t read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty matrix file: " + path);
    const auto header = split_fields(line);
    if (header.size() != 2) throw ParseError("matrix header must be 'rows,cols': " + path);
    const index_t rows = static_cast<index_t>(parse_cell(header[0], path + " header"));
    const index_t cols = static_cast<index_t>(parse_cell(header[1], path + " header"));
    if (rows < 1 || cols < 1) throw ParseError("matrix dimensions must be positive: " + path);
    matrix_t m(rows, cols);
    for (index_t i = 0; i < rows; ++i) {
        if (!std::getline(in, line))
            throw ParseError("unexpected end of file at row " + std::to_string(i) + ": " + path);
        const auto fields = split_fields(line);
        if (static_cast<index_t>(fields.size()) != cols)
            throw ParseError("row " + std::to_string(i) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(cols) + ": " + path);
        for (index_t j = 0; j < cols; ++j)
            m(i, j) = parse_cell(fields[j], "row " + std::to_string(i));
    }
    require_finite(m, "matrix csv " + path);
    return m;
}

}  // namespace gwib
