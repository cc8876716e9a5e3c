#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "egostitch/core.hpp"

namespace egostitch {

inline constexpr int kMaxChunkLength = 1 << 20;

/// Splits [0, frame_count) into chunks of `chunk_length` frames starting every
/// (chunk_length - overlap) frames. The final chunk may be short.
inline std::vector<ChunkPlan> plan_chunks(int frame_count, int chunk_length, int overlap) {
  if (frame_count < 1) throw ConfigError("plan_chunks: frame count must be >= 1");
  if (overlap < 0) throw ConfigError("plan_chunks: overlap must be >= 0");
  if (chunk_length < 1 || chunk_length > kMaxChunkLength) {
    throw ConfigError("plan_chunks: chunk length out of range");
  }
  if (overlap >= chunk_length) {
    throw ConfigError("plan_chunks: overlap (" + std::to_string(overlap) + ") must be smaller than chunk length (" +
                      std::to_string(chunk_length) + ")");
  }
  const int stride = chunk_length - overlap;
  std::vector<ChunkPlan> plans;
  for (long long s = 0; s < frame_count; s += stride) {
    ChunkPlan p;
    p.chunk_id = static_cast<int>(plans.size());
    p.start = static_cast<int>(s);
    p.end = static_cast<int>(std::min<long long>(s + chunk_length, frame_count));
    p.overlap_end = plans.empty() ? p.start : std::max(p.start, plans.back().end);
    plans.push_back(p);
  }
  return plans;
}

/// Earliest chunk containing frame t.
inline int owner_chunk(const std::vector<ChunkPlan>& plans, int t) {
  for (const auto& p : plans) {
    if (p.contains(t)) return p.chunk_id;
  }
  throw ConsistencyError("frame " + std::to_string(t) + " is not covered by any chunk");
}

}  // namespace egostitch
