#include "geotdm/egtn.hpp"

namespace geotdm {

void build_edge_rows(const GraphBatch& g, int64_t frames,
                     std::vector<int64_t>& src_rows, std::vector<int64_t>& dst_rows) {
  src_rows.clear();
  dst_rows.clear();
  size_t total = 0;
  for (const auto& es : g.edges) total += es.size() * static_cast<size_t>(frames);
  src_rows.reserve(total);
  dst_rows.reserve(total);
  for (int64_t b = 0; b < g.n_batch; ++b) {
    const auto& es = g.edges[static_cast<size_t>(b)];
    for (int64_t t = 0; t < frames; ++t) {
      int64_t base = (b * frames + t) * g.n_nodes;
      for (const auto& e : es) {
        src_rows.push_back(base + e[0]);
        dst_rows.push_back(base + e[1]);
      }
    }
  }
}

}  // namespace geotdm
