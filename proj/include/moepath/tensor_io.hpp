#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "moepath/matrix.hpp"

namespace moepath {

/// `.tnsr` container:
///
///   bytes 0..3   "TNSR"
///   byte  4      version (1)
///   u32 LE       rank
///   rank x u32 LE dims
///   prod(dims) x f64 LE, row-major
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
};

inline constexpr std::uint8_t kTensorVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void save_matrix(const std::filesystem::path& path, const Matrix& m);

/// Loads a rank-2 tensor; non-rank-2 payloads and non-finite entries are FormatErrors.
Matrix load_matrix(const std::filesystem::path& path);

}  // namespace moepath
