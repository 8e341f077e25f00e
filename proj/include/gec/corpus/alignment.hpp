#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gec::corpus {

enum class EdgeKind : std::uint8_t { Match, Sub, Ins, Del };

/// One alignment step. `src`/`tgt` are -1 for the side an edge does not consume.
struct Edge {
  EdgeKind kind;
  int src;
  int tgt;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Monotone edit path covering every source and target index exactly once.
struct Alignment {
  std::vector<Edge> edges;

  /// Number of non-MATCH edges.
  std::size_t cost() const;
  std::size_t size() const { return edges.size(); }
};

namespace detail {
Alignment backtrace(const std::vector<std::uint32_t>& dist, std::size_t n, std::size_t m,
                    const std::vector<std::uint8_t>& equal);
}

/// Minimal Levenshtein path between two sequences.
///
/// Ties are broken while tracing back from the end: diagonal (MATCH or SUB)
/// first, then INS, then DEL.
template <typename T>
Alignment align(std::span<const T> src, std::span<const T> tgt) {
  const std::size_t n = src.size();
  const std::size_t m = tgt.size();
  const std::size_t w = m + 1;
  std::vector<std::uint8_t> equal(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) equal[i * m + j] = src[i] == tgt[j];

  std::vector<std::uint32_t> dist((n + 1) * w);
  for (std::size_t j = 0; j <= m; ++j) dist[j] = static_cast<std::uint32_t>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    dist[i * w] = static_cast<std::uint32_t>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const std::uint32_t diag = dist[(i - 1) * w + j - 1] + (equal[(i - 1) * m + j - 1] ? 0 : 1);
      const std::uint32_t ins = dist[i * w + j - 1] + 1;
      const std::uint32_t del = dist[(i - 1) * w + j] + 1;
      dist[i * w + j] = std::min(diag, std::min(ins, del));
    }
  }
  return detail::backtrace(dist, n, m, equal);
}

template <typename C>
Alignment align(const C& src, const C& tgt) {
  using T = typename C::value_type;
  return align<T>(std::span<const T>(src.data(), src.size()), std::span<const T>(tgt.data(), tgt.size()));
}

}  // namespace gec::corpus
