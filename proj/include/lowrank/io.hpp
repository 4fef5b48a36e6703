#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "lowrank/mdp.hpp"

namespace lowrank {

/// Malformed input; the message carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Shortest decimal that parses back to the identical double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void write_values(std::ostream& os, std::span<const double> values) {
  for (double v : values) os << ' ' << format_double(v);
}

/// Splits on single spaces/tabs; empty tokens are dropped.
inline std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double parse_double(std::string_view token, int line) {
  double v = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw ParseError(line, "expected a number, got '" + std::string(token) + "'");
  return v;
}

inline int parse_int(std::string_view token, int line) {
  int v = 0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size())
    throw ParseError(line, "expected an integer, got '" + std::string(token) + "'");
  return v;
}

/// Line reader that skips blank lines and '#' comments and tracks line numbers.
class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  bool next(std::vector<std::string_view>& tokens) {
    while (std::getline(is_, buffer_)) {
      ++line_;
      tokens = tokenize(buffer_);
      if (tokens.empty() || tokens.front().front() == '#') continue;
      return true;
    }
    return false;
  }

  std::vector<std::string_view> expect(std::string_view keyword, std::size_t n_args) {
    std::vector<std::string_view> tokens;
    if (!next(tokens))
      throw ParseError(line_ + 1, "unexpected end of file, expected '" + std::string(keyword) + "'");
    if (tokens.front() != keyword)
      throw ParseError(line_, "expected '" + std::string(keyword) + "', got '" +
                                  std::string(tokens.front()) + "'");
    if (tokens.size() != n_args + 1)
      throw ParseError(line_, "'" + std::string(keyword) + "' takes " + std::to_string(n_args) +
                                  " values, got " + std::to_string(tokens.size() - 1));
    return tokens;
  }

  int line() const { return line_; }

 private:
  std::istream& is_;
  std::string buffer_;
  int line_ = 0;
};

inline int read_count(LineReader& in, std::string_view key) {
  const auto t = in.expect(key, 1);
  const int v = parse_int(t[1], in.line());
  if (v <= 0) throw ParseError(in.line(), std::string(key) + " must be positive");
  return v;
}

inline void check_index(int value, int bound, std::string_view what, int line) {
  if (value < 0 || value >= bound)
    throw ParseError(line, std::string(what) + " index " + std::to_string(value) + " out of range");
}

}  // namespace detail

inline constexpr std::string_view kMdpFormat = "lowrank-mdp/1";
inline constexpr std::string_view kKernelFormat = "tabular-kernel/1";

/// Writes the field-per-line text format:
///   format lowrank-mdp/1
///   states S / actions A / horizon H / rank d / initial_state s
///   phi h s a v_1 .. v_d      (H*S*A lines)
///   mu h s' v_1 .. v_d        (H*S lines)
///   reward h s a v            (H*S*A lines)
inline void write_mdp(std::ostream& os, const LowRankMDP& mdp) {
  const int S = mdp.n_states(), A = mdp.n_actions(), H = mdp.horizon();
  os << "format " << kMdpFormat << '\n'
     << "states " << S << '\n'
     << "actions " << A << '\n'
     << "horizon " << H << '\n'
     << "rank " << mdp.rank() << '\n'
     << "initial_state " << mdp.initial_state() << '\n';
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        os << "phi " << h << ' ' << s << ' ' << a;
        detail::write_values(os, mdp.phi(h, s, a));
        os << '\n';
      }
  for (int h = 0; h < H; ++h)
    for (int n = 0; n < S; ++n) {
      os << "mu " << h << ' ' << n;
      detail::write_values(os, mdp.mu(h, n));
      os << '\n';
    }
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        os << "reward " << h << ' ' << s << ' ' << a << ' ' << format_double(mdp.reward(h, s, a))
           << '\n';
}

inline LowRankMDP read_mdp(std::istream& is) {
  detail::LineReader in(is);
  const auto fmt = in.expect("format", 1);
  if (fmt[1] != kMdpFormat)
    throw ParseError(in.line(), "unsupported format '" + std::string(fmt[1]) + "'");
  MdpShape shape;
  shape.n_states = detail::read_count(in, "states");
  shape.n_actions = detail::read_count(in, "actions");
  shape.horizon = detail::read_count(in, "horizon");
  shape.rank = detail::read_count(in, "rank");
  const auto init = in.expect("initial_state", 1);
  const int initial = detail::parse_int(init[1], in.line());
  detail::check_index(initial, shape.n_states, "initial state", in.line());

  const int S = shape.n_states, A = shape.n_actions, H = shape.horizon, d = shape.rank;
  std::vector<double> phi(static_cast<std::size_t>(H) * S * A * d);
  std::vector<double> mu(static_cast<std::size_t>(H) * S * d);
  RewardTable reward(H, S, A);
  // Every record names its own location, but records must appear in canonical order
  // so that a truncated file is detected at the first missing line.
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const auto t = in.expect("phi", static_cast<std::size_t>(3 + d));
        if (detail::parse_int(t[1], in.line()) != h || detail::parse_int(t[2], in.line()) != s ||
            detail::parse_int(t[3], in.line()) != a)
          throw ParseError(in.line(), "phi record out of order");
        const std::size_t off = ((static_cast<std::size_t>(h) * S + s) * A + a) * d;
        for (int j = 0; j < d; ++j) phi[off + j] = detail::parse_double(t[4 + j], in.line());
      }
  for (int h = 0; h < H; ++h)
    for (int n = 0; n < S; ++n) {
      const auto t = in.expect("mu", static_cast<std::size_t>(2 + d));
      if (detail::parse_int(t[1], in.line()) != h || detail::parse_int(t[2], in.line()) != n)
        throw ParseError(in.line(), "mu record out of order");
      const std::size_t off = (static_cast<std::size_t>(h) * S + n) * d;
      for (int j = 0; j < d; ++j) mu[off + j] = detail::parse_double(t[3 + j], in.line());
    }
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const auto t = in.expect("reward", 4);
        if (detail::parse_int(t[1], in.line()) != h || detail::parse_int(t[2], in.line()) != s ||
            detail::parse_int(t[3], in.line()) != a)
          throw ParseError(in.line(), "reward record out of order");
        reward(h, s, a) = detail::parse_double(t[4], in.line());
      }
  std::vector<std::string_view> extra;
  if (in.next(extra)) throw ParseError(in.line(), "trailing content after reward table");
  return LowRankMDP(shape, std::move(phi), std::move(mu), std::move(reward), initial);
}

/// Kernel format: "format tabular-kernel/1", states/actions/horizon, then
/// "row h s a p_0 .. p_{S-1}" for every (h, s, a).
inline void write_kernel(std::ostream& os, const TransitionTable& kernel) {
  os << "format " << kKernelFormat << '\n'
     << "states " << kernel.n_states() << '\n'
     << "actions " << kernel.n_actions() << '\n'
     << "horizon " << kernel.horizon() << '\n';
  for (int h = 0; h < kernel.horizon(); ++h)
    for (int s = 0; s < kernel.n_states(); ++s)
      for (int a = 0; a < kernel.n_actions(); ++a) {
        os << "row " << h << ' ' << s << ' ' << a;
        detail::write_values(os, kernel.row(h, s, a));
        os << '\n';
      }
}

inline TransitionTable read_kernel(std::istream& is) {
  detail::LineReader in(is);
  const auto fmt = in.expect("format", 1);
  if (fmt[1] != kKernelFormat)
    throw ParseError(in.line(), "unsupported format '" + std::string(fmt[1]) + "'");
  const int S = detail::read_count(in, "states");
  const int A = detail::read_count(in, "actions");
  const int H = detail::read_count(in, "horizon");
  TransitionTable kernel(H, S, A);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const auto t = in.expect("row", static_cast<std::size_t>(3 + S));
        if (detail::parse_int(t[1], in.line()) != h || detail::parse_int(t[2], in.line()) != s ||
            detail::parse_int(t[3], in.line()) != a)
          throw ParseError(in.line(), "kernel row out of order");
        auto row = kernel.row(h, s, a);
        for (int n = 0; n < S; ++n) row[n] = detail::parse_double(t[4 + n], in.line());
      }
  std::vector<std::string_view> extra;
  if (in.next(extra)) throw ParseError(in.line(), "trailing content after kernel table");
  return kernel;
}

inline std::string to_text(const LowRankMDP& mdp) {
  std::ostringstream os;
  write_mdp(os, mdp);
  return os.str();
}

inline LowRankMDP mdp_from_text(const std::string& text) {
  std::istringstream is(text);
  return read_mdp(is);
}

inline void save_mdp(const std::string& path, const LowRankMDP& mdp) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_mdp(os, mdp);
}

inline LowRankMDP load_mdp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_mdp(is);
}

}  // namespace lowrank
