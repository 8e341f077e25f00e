#include "gec/corpus/alignment.hpp"

#include <algorithm>

namespace gec::corpus {

std::size_t Alignment::cost() const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [](const Edge& e) { return e.kind != EdgeKind::Match; }));
}

namespace detail {

Alignment backtrace(const std::vector<std::uint32_t>& dist, std::size_t n, std::size_t m,
                    const std::vector<std::uint8_t>& equal) {
  const std::size_t w = m + 1;
  Alignment a;
  a.edges.reserve(n + m);
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    const std::uint32_t here = dist[i * w + j];
    if (i > 0 && j > 0) {
      const bool eq = equal[(i - 1) * m + j - 1];
      if (dist[(i - 1) * w + j - 1] + (eq ? 0 : 1) == here) {
        a.edges.push_back({eq ? EdgeKind::Match : EdgeKind::Sub, static_cast<int>(i - 1), static_cast<int>(j - 1)});
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && dist[i * w + j - 1] + 1 == here) {
      a.edges.push_back({EdgeKind::Ins, -1, static_cast<int>(j - 1)});
      --j;
      continue;
    }
    a.edges.push_back({EdgeKind::Del, static_cast<int>(i - 1), -1});
    --i;
  }
  std::reverse(a.edges.begin(), a.edges.end());
  return a;
}

}  // namespace detail
}  // namespace gec::corpus
