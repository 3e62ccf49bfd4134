#pragma once

#include <torch/torch.h>

#include <vector>

#include "imuge/backbone.hpp"

namespace imuge {

struct DiscriminatorConfig {
  int64_t in_channels = 3;
  int64_t base_width = 64;
  Normalization normalization = Normalization::instance;

  void validate() const;
};

/// 70x70 PatchGAN: three stride-2 4x4 convolutions followed by two stride-1 4x4
/// convolutions, leaky ReLU (0.2) throughout, raw scores out.
///
/// For progressive training the input may arrive at 1/2^j of the full size; it then
/// enters through a 1x1 adapter and skips the first j strided layers. Fading blends the
/// new layer's features with the adapter path of the 2x pooled input.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(DiscriminatorConfig config);

  torch::Tensor forward(const torch::Tensor& images);
  /// `depth` = number of 2x reductions the input already had (0 = full size, 3 = 1/8).
  torch::Tensor forward_progressive(const torch::Tensor& images, int depth, double fade);

  /// Score-map side for an input of side `n` entering at `depth` (no padding tricks).
  static int64_t score_size(int64_t n, int depth);

 private:
  torch::Tensor run_from(torch::Tensor h, int depth);

  DiscriminatorConfig config_;
  std::vector<torch::nn::Sequential> strided_;   // 3 layers
  std::vector<torch::nn::Sequential> adapters_;  // depth 1..3 entries
  torch::nn::Sequential tail_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

}  // namespace imuge
