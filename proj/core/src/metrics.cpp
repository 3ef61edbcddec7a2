#include "msam/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "msam/errors.hpp"
#include "msam/parallel.hpp"

namespace msam {
namespace {

template <typename T>
void check_inputs(const Tensor<T>& s_vt, std::span<const std::size_t> gt) {
  if (s_vt.rank() != 2) throw ShapeError("ranks: scores must be [B x T], got " + to_string(s_vt.shape()));
  if (gt.size() != s_vt.dim(1)) {
    throw ReferenceError("ranks: " + std::to_string(gt.size()) + " ground-truth entries for " +
                         std::to_string(s_vt.dim(1)) + " texts");
  }
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (gt[t] >= s_vt.dim(0)) {
      throw ReferenceError("ranks: text " + std::to_string(t) + " refers to missing video " +
                           std::to_string(gt[t]));
    }
  }
}

std::vector<std::vector<std::size_t>> captions_by_video(std::size_t videos,
                                                        std::span<const std::size_t> gt) {
  std::vector<std::vector<std::size_t>> out(videos);
  for (std::size_t t = 0; t < gt.size(); ++t) out[gt[t]].push_back(t);
  for (std::size_t v = 0; v < videos; ++v) {
    if (out[v].empty()) throw ReferenceError("v2t_ranks: video " + std::to_string(v) + " has no caption");
  }
  return out;
}

}  // namespace

std::string to_string(Direction d) {
  return d == Direction::TextToVideo ? "text-to-video" : "video-to-text";
}

template <typename T>
RankVector t2v_ranks(const Tensor<T>& s_vt, std::span<const std::size_t> gt) {
  check_inputs(s_vt, gt);
  const std::size_t b = s_vt.dim(0), n = s_vt.dim(1);
  const auto s = s_vt.data();
  RankVector out{std::vector<std::size_t>(n), b};
  parallel_for(n, [&](std::size_t t) {
    const T target = s[gt[t] * n + t];
    std::size_t above = 0;
    for (std::size_t v = 0; v < b; ++v) above += s[v * n + t] > target;
    out.ranks[t] = 1 + above;
  });
  return out;
}

template <typename T>
RankVector v2t_ranks(const Tensor<T>& s_vt, std::span<const std::size_t> gt) {
  check_inputs(s_vt, gt);
  const std::size_t b = s_vt.dim(0), n = s_vt.dim(1);
  const auto captions = captions_by_video(b, gt);
  const auto s = s_vt.data();
  RankVector out{std::vector<std::size_t>(b), n};
  parallel_for(b, [&](std::size_t v) {
    const T* row = s.data() + v * n;
    std::size_t best = n;
    for (const std::size_t t : captions[v]) {
      std::size_t above = 0;
      for (std::size_t u = 0; u < n; ++u) above += row[u] > row[t];
      best = std::min(best, 1 + above);
    }
    out.ranks[v] = best;
  });
  return out;
}

template <typename T>
RankVector oracle_ranks(const Tensor<T>& s_vt, std::span<const std::size_t> gt, Direction direction) {
  check_inputs(s_vt, gt);
  const std::size_t b = s_vt.dim(0), n = s_vt.dim(1);
  // One list per query: (score, is_ground_truth) for every candidate.
  std::vector<std::vector<std::pair<T, bool>>> lists;
  if (direction == Direction::TextToVideo) {
    for (std::size_t t = 0; t < n; ++t) {
      auto& list = lists.emplace_back();
      for (std::size_t v = 0; v < b; ++v) list.emplace_back(s_vt.at({v, t}), gt[t] == v);
    }
  } else {
    captions_by_video(b, gt);
    for (std::size_t v = 0; v < b; ++v) {
      auto& list = lists.emplace_back();
      for (std::size_t t = 0; t < n; ++t) list.emplace_back(s_vt.at({v, t}), gt[t] == v);
    }
  }
  RankVector out{{}, direction == Direction::TextToVideo ? b : n};
  for (auto& list : lists) {
    std::sort(list.begin(), list.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second && !y.second;
    });
    const auto hit = std::find_if(list.begin(), list.end(), [](const auto& e) { return e.second; });
    out.ranks.push_back(std::size_t(hit - list.begin()) + 1);
  }
  return out;
}

double recall_at(const RankVector& ranks, std::size_t k) {
  if (ranks.ranks.empty()) throw ContractError("recall_at: empty rank vector");
  const auto hits = std::count_if(ranks.ranks.begin(), ranks.ranks.end(),
                                  [k](std::size_t r) { return r <= k; });
  return double(hits) / double(ranks.ranks.size());
}

RetrievalReport report(const RankVector& ranks, Direction direction) {
  if (ranks.ranks.empty()) throw ContractError("report: empty rank vector");
  for (const std::size_t r : ranks.ranks) {
    if (r < 1 || r > ranks.num_candidates) {
      throw ContractError("report: rank " + std::to_string(r) + " outside [1, " +
                          std::to_string(ranks.num_candidates) + "]");
    }
  }
  RetrievalReport out;
  out.direction = direction;
  out.ranks = ranks;
  for (const std::size_t k : {1, 5, 10}) out.r_at[k] = recall_at(ranks, k);

  std::vector<std::size_t> sorted = ranks.ranks;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  out.mdr = n % 2 ? double(sorted[n / 2]) : (double(sorted[n / 2 - 1]) + double(sorted[n / 2])) / 2.0;
  out.mnr = std::accumulate(sorted.begin(), sorted.end(), 0.0) / double(n);
  return out;
}

std::string serialize(const RetrievalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "direction=%s\nr1=%.4f\nr5=%.4f\nr10=%.4f\nmdr=%.4f\nmnr=%.4f\nn_queries=%zu\n",
                to_string(r.direction).c_str(), r.r_at.at(1), r.r_at.at(5), r.r_at.at(10), r.mdr,
                r.mnr, r.ranks.ranks.size());
  return buf;
}

#define MSAM_INSTANTIATE(T)                                                                 \
  template RankVector t2v_ranks(const Tensor<T>&, std::span<const std::size_t>);           \
  template RankVector v2t_ranks(const Tensor<T>&, std::span<const std::size_t>);           \
  template RankVector oracle_ranks(const Tensor<T>&, std::span<const std::size_t>, Direction);

MSAM_INSTANTIATE(float)
MSAM_INSTANTIATE(double)

#undef MSAM_INSTANTIATE

}  // namespace msam
