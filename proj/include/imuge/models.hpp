#pragma once

#include <torch/torch.h>

#include <vector>

#include "imuge/backbone.hpp"
#include "imuge/discriminator.hpp"
#include "imuge/phase.hpp"

namespace imuge {

struct ModelConfig {
  int64_t base_width = 32;
  int64_t discriminator_width = 64;
  Normalization normalization = Normalization::instance;
  Activation activation = Activation::relu;
  Pooling pooling = Pooling::max;
  std::vector<int64_t> dilation_rates{2, 4, 8};
  bool feature_sharing = true;       // mask-gated skips at levels 1-2 of the decoder
  bool decoder_mask_channel = false; // feed the mask as a 4th decoder input channel
  bool zero_init_residual = true;    // encoder starts as the identity map

  void validate() const;
  BackboneConfig encoder_config() const;
  BackboneConfig verifier_config() const;
  BackboneConfig decoder_config() const;
  DiscriminatorConfig discriminator_config() const;
};

struct Immunized {
  torch::Tensor image;     // I_M = clamp(I + R, -1, 1)
  torch::Tensor residual;  // R
};

/// Encoder, verifier, decoder and the two patch discriminators (one for immunized
/// images, one for recovered images).
class ImugeModelImpl : public torch::nn::Module {
 public:
  explicit ImugeModelImpl(ModelConfig config = {});

  Immunized immunize(const torch::Tensor& original);
  /// Soft tamper mask in [0, 1], one channel.
  torch::Tensor verify(const torch::Tensor& attacked);
  /// Full-resolution recovery from a rectified image and its binary mask.
  torch::Tensor recover(const torch::Tensor& rectified, const torch::Tensor& mask);
  /// Recovery at the stage resolution of `phase` (both inputs already downsampled).
  torch::Tensor recover_progressive(const torch::Tensor& rectified_low, const torch::Tensor& mask_low,
                                    const PhaseState& phase);

  torch::Tensor discriminate_immunized(const torch::Tensor& images);
  torch::Tensor discriminate_recovered(const torch::Tensor& images, const PhaseState& phase);

  std::vector<torch::Tensor> generator_parameters() const;  // encoder + decoder
  std::vector<torch::Tensor> verifier_parameters() const;

  const ModelConfig& config() const { return config_; }

  Backbone encoder{nullptr};
  Backbone verifier{nullptr};
  Backbone decoder{nullptr};
  PatchDiscriminator disc_immunized{nullptr};
  PatchDiscriminator disc_recovered{nullptr};

 private:
  torch::Tensor decoder_input(const torch::Tensor& rectified, const torch::Tensor& mask) const;

  ModelConfig config_;
};
TORCH_MODULE(ImugeModel);

}  // namespace imuge
