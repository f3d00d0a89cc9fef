#pragma once

#include <string>

#include "gwib/types.hpp"

namespace gwib {

// CSV layout: first line "rows,cols", then one comma-separated line per row.
// Doubles are written with shortest round-trip formatting, so
// write -> read is lossless.
void write_matrix_csv(const std::string& path, const matrix_t& m);
matrix_t read_matrix_csv(const std::string& path);

// Shortest representation of a double that parses back to the same value.
std::string format_double(scalar_t v);

}  // namespace gwib
