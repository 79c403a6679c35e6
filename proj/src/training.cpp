#include "handmask/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace handmask {

DataSplit split_dataset(int count, double heldout_fraction, Rng& rng) {
  if (count < 1) throw std::invalid_argument("split_dataset: empty dataset");
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) throw std::invalid_argument("heldout_fraction must lie in [0,1)");
  std::vector<int> order(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  int held = static_cast<int>(std::lround(count * heldout_fraction));
  if (heldout_fraction > 0.0 && count > 1) held = std::clamp(held, 1, count - 1);
  DataSplit split;
  split.heldout.assign(order.begin(), order.begin() + held);
  split.train.assign(order.begin() + held, order.end());
  std::sort(split.heldout.begin(), split.heldout.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

DataSplit split_per_class(const std::vector<std::optional<int>>& labels, int train_per_class, Rng& rng) {
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) by_class[*labels[i]].push_back(static_cast<int>(i));
  DataSplit split;
  for (auto& [label, items] : by_class) {
    std::shuffle(items.begin(), items.end(), rng);
    const std::size_t n = std::min(items.size(), static_cast<std::size_t>(std::max(0, train_per_class)));
    split.train.insert(split.train.end(), items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n));
    split.heldout.insert(split.heldout.end(), items.begin() + static_cast<std::ptrdiff_t>(n), items.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.heldout.begin(), split.heldout.end());
  return split;
}

std::vector<std::vector<int>> make_batches(std::vector<int> indices, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::shuffle(indices.begin(), indices.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(indices.size(), at + static_cast<std::size_t>(batch_size));
    batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(at), indices.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<NormalizedSequence> normalize_all(const std::vector<HandSequence>& sequences) {
  std::vector<NormalizedSequence> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) out.push_back(normalize_sequence(s));
  return out;
}

}  // namespace handmask
