#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msam/tensor.hpp"

namespace msam {

enum class Direction { TextToVideo, VideoToText };

std::string to_string(Direction d);

struct RankVector {
  std::vector<std::size_t> ranks;  // 1-based
  std::size_t num_candidates = 0;
};

struct RetrievalReport {
  Direction direction = Direction::TextToVideo;
  std::map<std::size_t, double> r_at;  // K -> fraction, K in {1, 5, 10}
  double mdr = 0;
  double mnr = 0;
  RankVector ranks;
};

// `gt[t]` is the video index of text t. Scores are [B x T].
//
// Ranks count candidates with a strictly greater score, so ties resolve in
// favour of the ground truth. For video-to-text, a video's rank is the best
// rank among its captions.
template <typename T>
RankVector t2v_ranks(const Tensor<T>& s_vt, std::span<const std::size_t> gt);

template <typename T>
RankVector v2t_ranks(const Tensor<T>& s_vt, std::span<const std::size_t> gt);

// Same contract, computed by fully sorting each query's candidates.
template <typename T>
RankVector oracle_ranks(const Tensor<T>& s_vt, std::span<const std::size_t> gt, Direction direction);

double recall_at(const RankVector& ranks, std::size_t k);

RetrievalReport report(const RankVector& ranks, Direction direction);

// Flat key=value lines: direction, r1, r5, r10, mdr, mnr, n_queries.
std::string serialize(const RetrievalReport& report);

}  // namespace msam
