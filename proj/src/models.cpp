#include "imuge/models.hpp"

#include "imuge/errors.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

void ModelConfig::validate() const {
  encoder_config().validate();
  discriminator_config().validate();
}

BackboneConfig ModelConfig::encoder_config() const {
  BackboneConfig cfg;
  cfg.in_channels = 3;
  cfg.out_channels = 3;
  cfg.base_width = base_width;
  cfg.dilation_rates = dilation_rates;
  cfg.normalization = normalization;
  cfg.activation = activation;
  cfg.pooling = pooling;
  cfg.head = OutputHead::tanh;
  cfg.zero_init_head = zero_init_residual;
  return cfg;
}

BackboneConfig ModelConfig::verifier_config() const {
  BackboneConfig cfg = encoder_config();
  cfg.out_channels = 1;
  cfg.head = OutputHead::sigmoid;
  cfg.zero_init_head = false;
  return cfg;
}

BackboneConfig ModelConfig::decoder_config() const {
  BackboneConfig cfg = encoder_config();
  cfg.in_channels = decoder_mask_channel ? 4 : 3;
  cfg.zero_init_head = false;
  if (feature_sharing) cfg.sharing_levels = {1, 2};
  return cfg;
}

DiscriminatorConfig ModelConfig::discriminator_config() const {
  DiscriminatorConfig cfg;
  cfg.base_width = discriminator_width;
  cfg.normalization = normalization;
  return cfg;
}

ImugeModelImpl::ImugeModelImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  encoder = register_module("encoder", Backbone(config_.encoder_config()));
  verifier = register_module("verifier", Backbone(config_.verifier_config()));
  decoder = register_module("decoder", Backbone(config_.decoder_config()));
  disc_immunized = register_module("disc_immunized", PatchDiscriminator(config_.discriminator_config()));
  disc_recovered = register_module("disc_recovered", PatchDiscriminator(config_.discriminator_config()));
}

Immunized ImugeModelImpl::immunize(const torch::Tensor& original) {
  require_channels(original, 3, "immunize");
  auto residual = encoder->forward(original);
  return {torch::clamp(original + residual, -1.0, 1.0), residual};
}

torch::Tensor ImugeModelImpl::verify(const torch::Tensor& attacked) {
  require_channels(attacked, 3, "verify");
  return verifier->forward(attacked);
}

torch::Tensor ImugeModelImpl::decoder_input(const torch::Tensor& rectified, const torch::Tensor& mask) const {
  require_channels(rectified, 3, "recover");
  require_channels(mask, 1, "recover mask");
  require_same_spatial(rectified, mask, "recover");
  if (!config_.decoder_mask_channel) return rectified;
  return torch::cat({rectified, mask.to(rectified.scalar_type())}, 1);
}

torch::Tensor ImugeModelImpl::recover(const torch::Tensor& rectified, const torch::Tensor& mask) {
  auto input = decoder_input(rectified, mask);
  return decoder->forward(input, config_.feature_sharing ? mask : torch::Tensor{});
}

torch::Tensor ImugeModelImpl::recover_progressive(const torch::Tensor& rectified_low, const torch::Tensor& mask_low,
                                                  const PhaseState& phase) {
  auto input = decoder_input(rectified_low, mask_low);
  return decoder->forward_progressive(input, phase, config_.feature_sharing ? mask_low : torch::Tensor{});
}

torch::Tensor ImugeModelImpl::discriminate_immunized(const torch::Tensor& images) {
  return disc_immunized->forward(images);
}

torch::Tensor ImugeModelImpl::discriminate_recovered(const torch::Tensor& images, const PhaseState& phase) {
  return disc_recovered->forward_progressive(images, 4 - phase.stage, phase.stage == 1 ? 1.0 : phase.fade);
}

std::vector<torch::Tensor> ImugeModelImpl::generator_parameters() const {
  auto params = encoder->parameters();
  auto dec = decoder->parameters();
  params.insert(params.end(), dec.begin(), dec.end());
  return params;
}

std::vector<torch::Tensor> ImugeModelImpl::verifier_parameters() const { return verifier->parameters(); }

}  // namespace imuge
