#include "moepath/tensor_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "moepath/error.hpp"

namespace moepath {
namespace {

constexpr std::array<char, 4> kMagic = {'T', 'N', 'S', 'R'};

void put_u32(std::ostream& out, std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    out.write(b.data(), b.size());
}

void put_f64(std::ostream& out, double x) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    }
    out.write(b.data(), b.size());
}

template <std::size_t N>
std::array<unsigned char, N> get_bytes(std::istream& in, const char* what) {
    std::array<unsigned char, N> b{};
    in.read(reinterpret_cast<char*>(b.data()), N);
    if (in.gcount() != static_cast<std::streamsize>(N)) {
        throw TruncatedError(std::string("unexpected end of tensor ") + what);
    }
    return b;
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    const auto b = get_bytes<4>(in, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    }
    return v;
}

double get_f64(std::istream& in) {
    const auto b = get_bytes<8>(in, "payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    std::size_t count = 1;
    for (auto d : t.dims) {
        count *= d;
    }
    if (count != t.data.size()) {
        throw ShapeError("tensor payload length " + std::to_string(t.data.size()) +
                         " does not match its dims");
    }
    out.write(kMagic.data(), kMagic.size());
    out.put(static_cast<char>(kTensorVersion));
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) {
        put_u32(out, d);
    }
    for (double x : t.data) {
        put_f64(out, x);
    }
}

Tensor read_tensor(std::istream& in) {
    const auto magic = get_bytes<4>(in, "header");
    if (std::memcmp(magic.data(), kMagic.data(), 4) != 0) {
        throw BadMagicError("bad tensor magic (expected \"TNSR\")");
    }
    const auto version = get_bytes<1>(in, "header")[0];
    if (version != kTensorVersion) {
        throw BadVersionError("unsupported tensor version " + std::to_string(version));
    }
    Tensor t;
    const auto rank = get_u32(in, "header");
    if (rank > 8) {
        throw FormatError("implausible tensor rank " + std::to_string(rank));
    }
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.dims.push_back(get_u32(in, "header"));
        count *= t.dims.back();
    }
    t.data.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        t.data.push_back(get_f64(in));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after tensor payload");
    }
    return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    write_tensor(out, t);
    if (!out) {
        throw FormatError("write failed: " + path.string());
    }
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    try {
        return read_tensor(in);
    } catch (const TruncatedError& e) {
        throw TruncatedError(std::string(e.what()) + " (" + path.string() + ")");
    } catch (const BadMagicError& e) {
        throw BadMagicError(std::string(e.what()) + " (" + path.string() + ")");
    } catch (const BadVersionError& e) {
        throw BadVersionError(std::string(e.what()) + " (" + path.string() + ")");
    } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + " (" + path.string() + ")");
    }
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    save_tensor(path, Tensor{{static_cast<std::uint32_t>(m.rows()),
                              static_cast<std::uint32_t>(m.cols())},
                             m.data()});
}

Matrix load_matrix(const std::filesystem::path& path) {
    Tensor t = load_tensor(path);
    if (t.dims.size() != 2) {
        throw FormatError(path.string() + ": expected a rank-2 tensor, got rank " +
                          std::to_string(t.dims.size()));
    }
    Matrix m(t.dims[0], t.dims[1], std::move(t.data));
    if (!m.all_finite()) {
        throw FormatError(path.string() + ": non-finite entry");
    }
    return m;
}

}  // namespace moepath
