#pragma once

#include "mmgt/autodiff.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mmgt::io {

// Text matrices: one row per line, values separated by whitespace and/or commas.
// Lines starting with '#' are ignored.
Matrix read_matrix_text(const std::filesystem::path& path);
void write_matrix_text(const std::filesystem::path& path, const Matrix& m, int precision = 17);

// Binary matrices: "MMGTMAT1", uint64 rows, uint64 cols, then rows*cols
// little-endian float64 in row-major order.
Matrix read_matrix_binary(const std::filesystem::path& path);
void write_matrix_binary(const std::filesystem::path& path, const Matrix& m);

/// Dispatches on extension: ".bin" is binary, anything else text.
Matrix read_matrix(const std::filesystem::path& path);

/// Coordinate list "i j weight" for every nonzero entry with i <= j.
void write_coordinate_list(const std::filesystem::path& path, const Matrix& m);

std::vector<std::string> read_lines(const std::filesystem::path& path);
std::vector<std::string> split(const std::string& line, char delimiter);
std::string trim(const std::string& s);

}  // namespace mmgt::io
