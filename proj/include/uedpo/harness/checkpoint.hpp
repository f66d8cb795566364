#ifndef UEDPO_HARNESS_CHECKPOINT_HPP
#define UEDPO_HARNESS_CHECKPOINT_HPP

// Binary weight dump. Layout, all integers and doubles little-endian:
//
//   offset  size  field
//   0       8     magic "UEDPOCKP"
//   8       4     u32 format version (1)
//   12      4     u32 reserved (0)
//   16      8     u64 rows
//   24      8     u64 cols
//   32      8*n   f64 values, row-major, n = rows*cols

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "../core.hpp"

namespace uedpo::harness {

inline constexpr std::array<char, 8> kCheckpointMagic{'U', 'E', 'D', 'P', 'O', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& out, T value) {
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, double>) {
        bits = std::bit_cast<std::uint64_t>(value);
    } else {
        bits = static_cast<std::uint64_t>(value);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::istream& in) {
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw InvalidInput("checkpoint: truncated file");
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    if constexpr (std::is_same_v<T, double>) {
        return std::bit_cast<double>(bits);
    } else {
        return static_cast<T>(bits);
    }
}

} // namespace detail

inline void write_checkpoint(const Matrix& weights, std::ostream& out) {
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, 0);
    detail::put_le<std::uint64_t>(out, weights.rows());
    detail::put_le<std::uint64_t>(out, weights.cols());
    for (double v : weights.data()) detail::put_le<double>(out, v);
}

inline void write_checkpoint(const Matrix& weights, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    write_checkpoint(weights, out);
    if (!out) throw std::runtime_error("I/O error writing checkpoint '" + path + "'");
}

inline Matrix read_checkpoint(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) throw InvalidInput("checkpoint: bad magic");
    const auto version = detail::get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) throw InvalidInput("checkpoint: unsupported version " + std::to_string(version));
    (void)detail::get_le<std::uint32_t>(in);
    const auto rows = detail::get_le<std::uint64_t>(in);
    const auto cols = detail::get_le<std::uint64_t>(in);
    require(rows > 0 && cols > 0 && rows * cols < (std::uint64_t{1} << 32), "checkpoint: implausible shape");
    Vector values(rows * cols);
    for (double& v : values) v = detail::get_le<double>(in);
    return Matrix(rows, cols, std::move(values));
}

inline Matrix read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in);
}

} // namespace uedpo::harness

#endif // UEDPO_HARNESS_CHECKPOINT_HPP
