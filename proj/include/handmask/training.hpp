#pragma once

#include "handmask/optim.hpp"
#include "handmask/parameters.hpp"
#include "handmask/tokens.hpp"

#include <optional>
#include <vector>

namespace handmask {

// Everything needed to resume a run besides the parameters themselves.
template <typename S>
struct TrainingState {
  AdamState<S> optimizer;
  int epoch = 0;  // epochs completed
  Rng rng;
};

struct DataSplit {
  std::vector<int> train;
  std::vector<int> heldout;
};

// Shuffled split with round(n * fraction) held out (at least one when n > 1).
DataSplit split_dataset(int count, double heldout_fraction, Rng& rng);

// Up to `train_per_class` labelled examples per class go to train, the rest
// to heldout. Unlabelled items are skipped.
DataSplit split_per_class(const std::vector<std::optional<int>>& labels, int train_per_class, Rng& rng);

// Shuffled mini-batches of the given indices; the last batch may be short.
std::vector<std::vector<int>> make_batches(std::vector<int> indices, int batch_size, Rng& rng);

std::vector<NormalizedSequence> normalize_all(const std::vector<HandSequence>& sequences);

}  // namespace handmask
