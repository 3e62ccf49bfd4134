#pragma once

#include <torch/torch.h>

#include <string>

#include "imuge/errors.hpp"

namespace imuge {

// Images are [N, C, H, W] float tensors in [-1, 1]; masks are [N, 1, H, W] in [0, 1].

inline void require_4d(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 4) {
    throw ShapeError(std::string(what) + ": expected a 4-D [N,C,H,W] tensor");
  }
}

inline void require_channels(const torch::Tensor& t, int64_t channels, const char* what) {
  require_4d(t, what);
  if (t.size(1) != channels) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                     std::to_string(t.size(1)));
  }
}

inline void require_same_spatial(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  require_4d(a, what);
  require_4d(b, what);
  if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
    throw ShapeError(std::string(what) + ": batch or spatial size mismatch");
  }
}

inline void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch");
  }
}

/// True when every element is exactly 0 or 1.
inline bool is_binary(const torch::Tensor& t) {
  return ((t == 0) | (t == 1)).all().item<bool>();
}

/// Maps the [-1, 1] pipeline range onto [0, 1].
inline torch::Tensor to_unit_range(const torch::Tensor& t) { return (t + 1.0) * 0.5; }

}  // namespace imuge
