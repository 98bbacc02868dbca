#pragma once

#include "dcanas/data.hpp"
#include "dcanas/tensor.hpp"

namespace dcanas::inline DCANAS_PRECISION {

inline Tensor batch_images(const Batch& b) {
  return Tensor::from({static_cast<std::int64_t>(b.size()), b.channels, b.height, b.width},
                      std::vector<Real>(b.images.begin(), b.images.end()));
}

}  // namespace dcanas::inline DCANAS_PRECISION
