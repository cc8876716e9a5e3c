#pragma once

// Interaction-aware dynamic prior: hands are always suppressed, objects are
// suppressed from their interaction onset onwards, optionally restricted to
// instances close to a hand.

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "egostitch/core.hpp"
#include "egostitch/ingest.hpp"
#include "egostitch/parallel.hpp"

namespace egostitch {

struct NearHandParams {
  int radius = 3;
  double threshold = 0.5;

  void validate() const {
    if (radius < 0) throw ConfigError("near-hand radius must be >= 0");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("near-hand threshold must lie in [0, 1]");
  }
};

/// Instance masks visible at one frame, keyed by track id. Tracks absent from
/// the map are treated as empty masks.
using FrameMasks = std::map<int, BinaryMask>;

struct ActivationState {
  int frame = 0;
  std::set<int> activated;
  std::set<int> near_hand;  // subset of activated
};

/// Objects whose onset is at or before t. Hands are never part of this set.
inline std::set<int> activated_set(std::span<const Track> tracks, int t) {
  std::set<int> out;
  for (const auto& tr : tracks) {
    if (!tr.is_hand() && tr.onset_frame && *tr.onset_frame <= t) out.insert(tr.track_id);
  }
  return out;
}

inline std::set<int> activated_set(const TrackIndex& index, int t) { return activated_set(index.tracks, t); }

/// Square (Chebyshev) dilation with a (2r+1)x(2r+1) structuring element,
/// done as two separable running-count passes.
inline BinaryMask dilate(const BinaryMask& mask, int radius) {
  if (radius < 0) throw ConfigError("dilation radius must be >= 0");
  if (radius == 0) return mask;
  const int w = mask.width();
  const int h = mask.height();
  BinaryMask horizontal(w, h);
  for (int y = 0; y < h; ++y) {
    int active = 0;
    for (int x = 0; x < std::min(radius, w); ++x) active += mask.at(x, y);
    for (int x = 0; x < w; ++x) {
      if (x + radius < w) active += mask.at(x + radius, y);
      if (x - radius - 1 >= 0) active -= mask.at(x - radius - 1, y);
      horizontal.set(x, y, active > 0);
    }
  }
  BinaryMask out(w, h);
  for (int x = 0; x < w; ++x) {
    int active = 0;
    for (int y = 0; y < std::min(radius, h); ++y) active += horizontal.at(x, y);
    for (int y = 0; y < h; ++y) {
      if (y + radius < h) active += horizontal.at(x, y + radius);
      if (y - radius - 1 >= 0) active -= horizontal.at(x, y - radius - 1);
      out.set(x, y, active > 0);
    }
  }
  return out;
}

/// |instance ∩ dilated_hand| / |instance|.
inline double hand_overlap_fraction(const BinaryMask& instance, const BinaryMask& dilated_hand) {
  if (!instance.same_shape(dilated_hand)) throw ConsistencyError("near-hand filter: mask size mismatch");
  std::size_t inside = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < instance.size(); ++i) {
    if (!instance.test(i)) continue;
    ++total;
    inside += dilated_hand.test(i);
  }
  if (total == 0) throw DegenerateInstanceError("near-hand filter: empty instance mask");
  return static_cast<double>(inside) / static_cast<double>(total);
}

inline bool near_hand_pass(const BinaryMask& instance, const BinaryMask& hand_union, const NearHandParams& params) {
  params.validate();
  return hand_overlap_fraction(instance, dilate(hand_union, params.radius)) >= params.threshold;
}

namespace detail {

inline const BinaryMask* find_mask(const FrameMasks& masks, int track_id, int width, int height) {
  auto it = masks.find(track_id);
  if (it == masks.end()) return nullptr;
  if (it->second.width() != width || it->second.height() != height) {
    throw ConsistencyError("instance mask of track " + std::to_string(track_id) + " has the wrong size");
  }
  return &it->second;
}

}  // namespace detail

inline BinaryMask hand_union(std::span<const Track> tracks, const FrameMasks& masks, int width, int height) {
  BinaryMask out(width, height);
  for (const auto& tr : tracks) {
    if (!tr.is_hand()) continue;
    if (const BinaryMask* m = detail::find_mask(masks, tr.track_id, width, height)) out |= *m;
  }
  return out;
}

/// Activated set and its near-hand subset at frame t. Instances without a
/// visible mask at t cannot be judged by the filter and are left out of it.
inline ActivationState activation_state(std::span<const Track> tracks, const FrameMasks& masks, int t, int width,
                                        int height, const std::optional<NearHandParams>& filter) {
  ActivationState st;
  st.frame = t;
  st.activated = activated_set(tracks, t);
  if (!filter) {
    st.near_hand = st.activated;
    return st;
  }
  filter->validate();
  const BinaryMask dilated = dilate(hand_union(tracks, masks, width, height), filter->radius);
  for (int id : st.activated) {
    const BinaryMask* m = detail::find_mask(masks, id, width, height);
    if (m == nullptr || m->empty()) continue;
    if (hand_overlap_fraction(*m, dilated) >= filter->threshold) st.near_hand.insert(id);
  }
  return st;
}

namespace detail {

inline BinaryMask union_of(std::span<const Track> tracks, const FrameMasks& masks, const std::set<int>& ids, int width,
                           int height) {
  BinaryMask out(width, height);
  for (const auto& tr : tracks) {
    if (!ids.count(tr.track_id)) continue;
    if (const BinaryMask* m = find_mask(masks, tr.track_id, width, height)) out |= *m;
  }
  return out;
}

}  // namespace detail

/// Union of activated object instances at t (near-hand filtered if requested).
inline BinaryMask object_prior(std::span<const Track> tracks, const FrameMasks& masks, int t, int width, int height,
                               const std::optional<NearHandParams>& filter = std::nullopt) {
  const ActivationState st = activation_state(tracks, masks, t, width, height, filter);
  return detail::union_of(tracks, masks, filter ? st.near_hand : st.activated, width, height);
}

/// D_t = hand union ∨ activated-object union.
inline BinaryMask dynamic_prior(std::span<const Track> tracks, const FrameMasks& masks, int t, int width, int height,
                                const std::optional<NearHandParams>& filter = std::nullopt) {
  return hand_union(tracks, masks, width, height) | object_prior(tracks, masks, t, width, height, filter);
}

enum class SuppressionMode { DynamicOnly, Cumulative };

/// Per-frame mask of hands plus every tracked instance visible at t, onsets
/// ignored.
inline BinaryMask instantaneous_prior(std::span<const Track> tracks, const FrameMasks& masks, int width, int height,
                                      const std::optional<NearHandParams>& filter = std::nullopt) {
  const BinaryMask hands = hand_union(tracks, masks, width, height);
  BinaryMask out = hands;
  std::optional<BinaryMask> dilated;
  if (filter) {
    filter->validate();
    dilated = dilate(hands, filter->radius);
  }
  for (const auto& tr : tracks) {
    if (tr.is_hand()) continue;
    const BinaryMask* m = detail::find_mask(masks, tr.track_id, width, height);
    if (m == nullptr || m->empty()) continue;
    if (dilated && hand_overlap_fraction(*m, *dilated) < filter->threshold) continue;
    out |= *m;
  }
  return out;
}

using MaskProvider = std::function<FrameMasks(int frame)>;

/// Loads every track's mask at frame t from the track index.
inline MaskProvider track_mask_provider(const TrackIndex& index, int width, int height) {
  return [&index, width, height](int t) {
    FrameMasks out;
    for (const auto& tr : index.tracks) {
      BinaryMask m = index.load_instance_mask(tr, t, width, height);
      if (!m.empty()) out.emplace(tr.track_id, std::move(m));
    }
    return out;
  };
}

inline std::vector<BinaryMask> suppression_masks(SuppressionMode mode, std::span<const Track> tracks,
                                                 const MaskProvider& masks_at, int frame_count, int width, int height,
                                                 const std::optional<NearHandParams>& filter = std::nullopt) {
  std::vector<BinaryMask> out(static_cast<std::size_t>(frame_count));
  parallel_for(out.size(), [&](std::size_t i) {
    const int t = static_cast<int>(i);
    const FrameMasks masks = masks_at(t);
    out[i] = mode == SuppressionMode::Cumulative ? dynamic_prior(tracks, masks, t, width, height, filter)
                                                 : instantaneous_prior(tracks, masks, width, height, filter);
  });
  return out;
}

/// Footprint series: frame t holds every pixel that was dynamic at some s <= t.
inline std::vector<BinaryMask> footprint_series(const std::vector<BinaryMask>& instantaneous) {
  std::vector<BinaryMask> out;
  out.reserve(instantaneous.size());
  for (const auto& m : instantaneous) out.push_back(out.empty() ? m : (out.back() | m));
  return out;
}

}  // namespace egostitch
