#pragma once

// Persistence: convergence-log CSV and binary factor-state checkpoints.
//
// Checkpoint layout (all little-endian):
//   "SVMP1" | M u64 | N u64 | K u64 | (precision f64, mtp f64) per factor,
// with the U grid row-major followed by the V grid row-major.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "svmp/bmf.hpp"
#include "svmp/optimizer.hpp"

namespace svmp {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kConvergenceHeader = "t,ratings_accessed,elbo,rho,diverged";

/// Decimal with 17 significant digits, which parses back to the same double.
inline std::string format_real(double x) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x,
                                 std::chars_format::general, 17);
  return std::string(buf.data(), res.ptr);
}

namespace detail {

template <class T>
T parse_field(std::string_view field, std::size_t line_no, const char* name) {
  T value{};
  const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || end != field.data() + field.size()) {
    throw FormatError("line " + std::to_string(line_no) + ": field '" + name +
                      "' is not numeric: '" + std::string(field) + "'");
  }
  return value;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

inline void write_convergence_csv(std::span<const RunLogEntry> entries, std::ostream& out) {
  out << kConvergenceHeader << '\n';
  for (const RunLogEntry& e : entries) {
    out << e.t << ',' << e.ratings_accessed << ',' << format_real(e.elbo) << ','
        << format_real(e.rho) << ',' << (e.diverged ? 1 : 0) << '\n';
  }
}

inline void write_convergence_csv(const RunLog& log, std::ostream& out) {
  write_convergence_csv(log.entries, out);
}

inline std::vector<RunLogEntry> read_convergence_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("convergence csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kConvergenceHeader) {
    throw FormatError("convergence csv: unexpected header '" + line + "'");
  }
  std::vector<RunLogEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_commas(line);
    if (f.size() != 5) {
      throw FormatError("line " + std::to_string(line_no) + ": expected 5 fields");
    }
    RunLogEntry e;
    e.t = detail::parse_field<std::size_t>(f[0], line_no, "t");
    e.ratings_accessed = detail::parse_field<std::uint64_t>(f[1], line_no, "ratings_accessed");
    e.elbo = detail::parse_field<double>(f[2], line_no, "elbo");
    e.rho = detail::parse_field<double>(f[3], line_no, "rho");
    if (f[4] != "0" && f[4] != "1") {
      throw FormatError("line " + std::to_string(line_no) + ": diverged must be 0 or 1");
    }
    e.diverged = f[4] == "1";
    entries.push_back(e);
  }
  return entries;
}

inline constexpr std::array<char, 5> kCheckpointMagic = {'S', 'V', 'M', 'P', '1'};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(bytes.data(), bytes.size());
}

inline std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError("checkpoint: truncated stream");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void checkpoint_save(const FactorState& state, std::ostream& out) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u64(out, state.num_users());
  detail::put_u64(out, state.num_items());
  detail::put_u64(out, state.K());
  for (const GaussianNatural& f : state.flat()) {
    detail::put_u64(out, std::bit_cast<std::uint64_t>(f.precision()));
    detail::put_u64(out, std::bit_cast<std::uint64_t>(f.mean_times_precision()));
  }
  if (!out) throw FormatError("checkpoint: write failed");
}

inline FactorState checkpoint_load(std::istream& in) {
  std::array<char, 5> magic{};
  if (!in.read(magic.data(), magic.size())) throw FormatError("checkpoint: truncated stream");
  if (magic != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const std::uint64_t M = detail::get_u64(in);
  const std::uint64_t N = detail::get_u64(in);
  const std::uint64_t K = detail::get_u64(in);
  constexpr std::uint64_t kMaxFactors = std::uint64_t{1} << 40;
  if (M == 0 || N == 0 || K == 0 || (M + N) > kMaxFactors / K) {
    throw FormatError("checkpoint: invalid dimensions");
  }
  const std::uint64_t count = (M + N) * K;
  std::vector<GaussianNatural> flat;
  flat.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const double precision = std::bit_cast<double>(detail::get_u64(in));
    const double mtp = std::bit_cast<double>(detail::get_u64(in));
    if (!GaussianNatural::is_valid(precision, mtp)) {
      throw FormatError("checkpoint: factor " + std::to_string(i) +
                        " has invalid parameters");
    }
    flat.emplace_back(precision, mtp);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint: trailing bytes after factor data");
  }
  return {static_cast<std::size_t>(M), static_cast<std::size_t>(N),
          static_cast<std::size_t>(K), std::move(flat)};
}

}  // namespace svmp
