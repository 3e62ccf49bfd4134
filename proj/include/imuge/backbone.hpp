#pragma once

#include <torch/torch.h>

#include <array>
#include <map>
#include <vector>

#include "imuge/phase.hpp"

namespace imuge {

enum class Normalization { instance, batch };
enum class Activation { relu, leaky_relu };
enum class Pooling { max, average };
enum class OutputHead { tanh, sigmoid };

struct BackboneConfig {
  int64_t in_channels = 3;
  int64_t out_channels = 3;
  int64_t base_width = 32;
  int64_t levels = 4;
  std::vector<int64_t> dilation_rates{2, 4, 8};
  Normalization normalization = Normalization::instance;
  Activation activation = Activation::relu;
  Pooling pooling = Pooling::max;
  OutputHead head = OutputHead::tanh;
  // Levels whose skip connection is replaced by the mask-gated mix of decoder and
  // encoder features. Only levels 1 and 2 may be listed.
  std::vector<int> sharing_levels{};
  // Zero the final 1x1 head so a fresh network outputs exactly 0 before the
  // activation (the encoder then starts as the identity map).
  bool zero_init_head = false;

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
  /// Channel count of level k (1-based): base_width * 2^(k-1).
  int64_t channels_at(int level) const;
};

/// Intermediate features of one forward pass, keyed by level (1..4).
///
/// encoder_features[k] is the output of encoding segment k (size input/2^(k-1)).
/// decoder_features[k] is the upsampled decoder feature arriving at level k from the
/// level below it; shared_features[k] is the mask-gated mix at that level, present
/// only for sharing levels that received a mask.
struct FeatureTapSet {
  std::map<int, torch::Tensor> encoder_features;
  std::map<int, torch::Tensor> decoder_features;
  std::map<int, torch::Tensor> shared_features;
};

/// The shared U-Net: four encoding segments, a dilated bottleneck at 1/16 of the
/// input, four decoding segments with level-wise skip concatenation, and a 1x1 head.
///
/// Each level also owns a 1x1 input adapter and a 1x1 output head (levels 2..4) so the
/// network can run progressively from a deeper entry level.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(BackboneConfig config);

  /// Full-resolution pass. `sharing_mask` ([N,1,H,W], binary) enables local feature
  /// sharing at the configured levels; pass an undefined tensor to disable it.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& sharing_mask = {});
  std::pair<torch::Tensor, FeatureTapSet> forward_with_taps(const torch::Tensor& x,
                                                            const torch::Tensor& sharing_mask = {});

  /// Progressive pass at stage `phase.stage`: only levels >= 5 - stage take part, and the
  /// newest level is faded in against the previous stage's pathway (fed with a 2x
  /// average-pooled input and nearest-upsampled back). `x_low` and `sharing_mask`
  /// are at the stage resolution.
  torch::Tensor forward_progressive(const torch::Tensor& x_low, const PhaseState& phase,
                                    const torch::Tensor& sharing_mask = {});

  const BackboneConfig& config() const { return config_; }

  torch::nn::Sequential encoding_segment(int level) const { return encoders_.at(level - 1); }
  torch::nn::Sequential decoding_segment(int level) const { return mergers_.at(level - 1); }
  torch::nn::Sequential upsampling_segment(int level) const { return upsamplers_.at(level - 1); }
  torch::nn::Sequential bottleneck() const { return bottleneck_; }
  torch::nn::Conv2d output_head(int level) const;

 private:
  torch::Tensor run(const torch::Tensor& x, int entry_level, const torch::Tensor& sharing_mask,
                    FeatureTapSet* taps);
  torch::Tensor pool(const torch::Tensor& x) const;
  torch::Tensor activate_head(const torch::Tensor& x) const;
  void check_input(const torch::Tensor& x, int entry_level) const;

  BackboneConfig config_;
  std::vector<torch::nn::Sequential> encoders_;
  std::vector<torch::nn::Sequential> upsamplers_;
  std::vector<torch::nn::Sequential> mergers_;
  torch::nn::Sequential bottleneck_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  // Index k-2 holds the adapter / head of entry level k (k = 2..4).
  std::vector<torch::nn::Sequential> input_adapters_;
  std::vector<torch::nn::Conv2d> stage_heads_;
};
TORCH_MODULE(Backbone);

/// Shared conv building blocks, also used by the discriminator.
torch::nn::AnyModule make_norm(Normalization norm, int64_t channels);
torch::nn::AnyModule make_activation(Activation act);

}  // namespace imuge
