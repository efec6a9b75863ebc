#pragma once

// Multi-indices over the three jet directions (u, y, y1).
//
// A jet coordinate f_sigma is identified by how many times it has been
// differentiated in each direction; mixed partials commute, so (du, dy, dy1)
// is the normal form.  Indices are densely enumerated, graded by total order
// and lexicographic in (du, dy) within a grade, which gives every coordinate a
// stable slot in jet-value arrays without any global registry.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace feedinv {

enum class JetDir : std::uint8_t { u = 0, y = 1, y1 = 2 };

inline const char* jet_dir_name(JetDir d) {
  switch (d) {
    case JetDir::u: return "u";
    case JetDir::y: return "y";
    default: return "y1";
  }
}

struct MultiIndex {
  std::uint8_t du = 0;
  std::uint8_t dy = 0;
  std::uint8_t dy1 = 0;

  constexpr int order() const { return du + dy + dy1; }

  constexpr MultiIndex plus(JetDir d) const {
    MultiIndex r = *this;
    switch (d) {
      case JetDir::u: ++r.du; break;
      case JetDir::y: ++r.dy; break;
      case JetDir::y1: ++r.dy1; break;
    }
    return r;
  }

  std::optional<MultiIndex> minus(JetDir d) const {
    MultiIndex r = *this;
    switch (d) {
      case JetDir::u:
        if (r.du == 0) return std::nullopt;
        --r.du; break;
      case JetDir::y:
        if (r.dy == 0) return std::nullopt;
        --r.dy; break;
      case JetDir::y1:
        if (r.dy1 == 0) return std::nullopt;
        --r.dy1; break;
    }
    return r;
  }

  int count(JetDir d) const {
    switch (d) {
      case JetDir::u: return du;
      case JetDir::y: return dy;
      default: return dy1;
    }
  }

  friend constexpr bool operator==(const MultiIndex& a, const MultiIndex& b) {
    return a.du == b.du && a.dy == b.dy && a.dy1 == b.dy1;
  }
  friend constexpr bool operator!=(const MultiIndex& a, const MultiIndex& b) {
    return !(a == b);
  }
  // Graded order, then lexicographic in (du, dy); matches the dense id order.
  friend constexpr bool operator<(const MultiIndex& a, const MultiIndex& b) {
    if (a.order() != b.order()) return a.order() < b.order();
    if (a.du != b.du) return a.du < b.du;
    return a.dy < b.dy;
  }

  // Number of multi-indices of total order <= k: C(k+3, 3).
  static constexpr int count_up_to(int k) {
    return (k + 1) * (k + 2) * (k + 3) / 6;
  }

  // Dense id: all indices of lower order first, then lexicographic (du, dy).
  constexpr int id() const {
    const int o = order();
    const int offset = o * (o + 1) * (o + 2) / 6;  // count_up_to(o - 1)
    int within = 0;
    for (int i = 0; i < du; ++i) within += o - i + 1;
    within += dy;
    return offset + within;
  }

  static MultiIndex from_id(int id) {
    int o = 0;
    while (count_up_to(o) <= id) ++o;
    int within = id - o * (o + 1) * (o + 2) / 6;
    int du = 0;
    while (within >= o - du + 1) { within -= o - du + 1; ++du; }
    MultiIndex m;
    m.du = static_cast<std::uint8_t>(du);
    m.dy = static_cast<std::uint8_t>(within);
    m.dy1 = static_cast<std::uint8_t>(o - du - within);
    return m;
  }

  // Coordinate name: "f" for the fibre coordinate, otherwise "f_" followed by
  // u's, then y's, then y1's, e.g. {1,0,2} -> "f_uy1y1".
  std::string name() const {
    if (order() == 0) return "f";
    std::string s = "f_";
    for (int i = 0; i < du; ++i) s += 'u';
    for (int i = 0; i < dy; ++i) s += 'y';
    for (int i = 0; i < dy1; ++i) s += "y1";
    return s;
  }

  // Parses the suffix after "f_" in any order, e.g. "y1uy" == "uyy1".
  // Returns nullopt on any character outside {u, y, y1}.
  static std::optional<MultiIndex> parse_suffix(const std::string& s) {
    MultiIndex m;
    std::size_t i = 0;
    while (i < s.size()) {
      if (s[i] == 'u') { ++m.du; ++i; }
      else if (s.compare(i, 2, "y1") == 0) { ++m.dy1; i += 2; }
      else if (s[i] == 'y') { ++m.dy; ++i; }
      else return std::nullopt;
    }
    return m;
  }
};

inline constexpr std::array<JetDir, 3> kJetDirs = {JetDir::u, JetDir::y, JetDir::y1};

}  // namespace feedinv
