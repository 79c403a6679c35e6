#include "handmask/model.hpp"

namespace handmask {

HandModelAsset resolve_asset(const ModelConfig& config) {
  if (config.asset_path.empty()) return synth_asset(config.asset_seed);
  if (!std::filesystem::exists(config.asset_path))
    throw AssetError("hand-model asset not found: " + config.asset_path);
  return load_asset(config.asset_path);
}

}  // namespace handmask
