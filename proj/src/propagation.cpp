#include "geoseg/propagation.hpp"

#include <cmath>

#include "geoseg/error.hpp"
#include "geoseg/rng.hpp"
#include "geoseg/warp.hpp"

namespace geoseg {

std::size_t LabelMap::annotated_count() const {
  std::size_t n = 0;
  for (auto l : labels) n += l != kIgnore;
  return n;
}

void VoteGrid::add(const LabelMap& labels) {
  if (labels.width != width || labels.height != height)
    throw ShapeError("VoteGrid::add: label map extents do not match");
  for (std::size_t p = 0; p < labels.labels.size(); ++p) {
    const auto l = labels.labels[p];
    if (l == kIgnore) continue;
    if (l >= classes) throw ShapeError("VoteGrid::add: label " + std::to_string(l) + " >= class count");
    ++at(p, l);
  }
}

std::uint64_t stream_key(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

LabelMap warp_annotation(const Frame& source, const Frame& target, const Intrinsics& K,
                         double occl_threshold) {
  if (!source.annotation)
    throw GeometryError("warp_annotation: source frame " + source.id() + " has no annotation");
  const auto field = frame_correspondence(target, source, K, occl_threshold);
  const LabelMap& src = *source.annotation;
  LabelMap out(target.width(), target.height());
  for (std::size_t p = 0; p < field.valid.size(); ++p) {
    if (!field.valid[p]) continue;
    const int x = static_cast<int>(std::lround(field.u[p]));
    const int y = static_cast<int>(std::lround(field.v[p]));
    out.labels[p] = src.at(x, y);
  }
  return out;
}

LabelMap merge_votes(const VoteGrid& votes, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  LabelMap out(votes.width, votes.height);
  std::vector<int> tied;
  tied.reserve(votes.classes);
  const std::size_t npix = static_cast<std::size_t>(votes.width) * votes.height;
  for (std::size_t p = 0; p < npix; ++p) {
    std::uint32_t best = 0;
    tied.clear();
    for (int c = 0; c < votes.classes; ++c) {
      const auto n = votes.at(p, c);
      if (n == 0 || n < best) continue;
      if (n > best) {
        best = n;
        tied.clear();
      }
      tied.push_back(c);
    }
    if (tied.empty()) continue;
    const int pick = tied.size() == 1 ? tied[0] : tied[rng.index(tied.size())];
    out.labels[p] = static_cast<std::uint8_t>(pick);
  }
  return out;
}

PropagationResult propagate_sequence(const std::vector<const Frame*>& labeled,
                                     const std::vector<const Frame*>& unlabeled,
                                     const Intrinsics& K, int num_classes,
                                     double occl_threshold, std::uint64_t rng_seed) {
  PropagationResult result;
  if (unlabeled.empty()) return result;
  const std::string& seq = unlabeled.front()->sequence;
  for (const auto* f : labeled)
    if (f->sequence != seq) throw GeometryError("propagate_sequence: mixed sequences");
  for (const auto* f : unlabeled)
    if (f->sequence != seq) throw GeometryError("propagate_sequence: mixed sequences");

  std::vector<LabelMap> merged(unlabeled.size());
  const int n = static_cast<int>(unlabeled.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const Frame& target = *unlabeled[i];
    VoteGrid votes(target.width(), target.height(), num_classes);
    for (const auto* source : labeled) votes.add(warp_annotation(*source, target, K, occl_threshold));
    merged[i] = merge_votes(votes, derive_seed(rng_seed, {stream_key(target.id())}));
  }
  for (int i = 0; i < n; ++i) {
    const auto id = unlabeled[i]->id();
    if (merged[i].annotated_count() == 0) result.uncovered.push_back(id);
    result.labels.emplace(id, std::move(merged[i]));
  }
  return result;
}

PropagationResult propagate_dataset(const Dataset& ds, double occl_threshold, std::uint64_t rng_seed) {
  PropagationResult out;
  for (const auto& [name, frames] : ds.train_sequences()) {
    std::vector<const Frame*> labeled, unlabeled;
    for (const auto* f : frames) (f->annotation ? labeled : unlabeled).push_back(f);
    auto r = propagate_sequence(labeled, unlabeled, ds.intrinsics, ds.num_classes(), occl_threshold, rng_seed);
    out.labels.merge(r.labels);
    out.uncovered.insert(out.uncovered.end(), r.uncovered.begin(), r.uncovered.end());
  }
  return out;
}

}  // namespace geoseg
