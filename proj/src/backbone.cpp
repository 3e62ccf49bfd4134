#include "imuge/backbone.hpp"

#include <algorithm>
#include <string>

#include "imuge/errors.hpp"
#include "imuge/masks.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

namespace nn = torch::nn;

torch::nn::AnyModule make_norm(Normalization norm, int64_t channels) {
  if (norm == Normalization::batch) {
    return nn::AnyModule(nn::BatchNorm2d(nn::BatchNorm2dOptions(channels)));
  }
  return nn::AnyModule(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true)));
}

torch::nn::AnyModule make_activation(Activation act) {
  if (act == Activation::leaky_relu) {
    return nn::AnyModule(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  }
  return nn::AnyModule(nn::ReLU());
}

void BackboneConfig::validate() const {
  if (levels != 4) throw ConfigError("backbone: levels must be 4");
  if (base_width <= 0) throw ConfigError("backbone: base_width must be positive");
  if (in_channels <= 0 || out_channels <= 0) throw ConfigError("backbone: channel counts must be positive");
  if (dilation_rates.empty()) throw ConfigError("backbone: bottleneck needs at least one dilation rate");
  for (auto r : dilation_rates) {
    if (r <= 0) throw ConfigError("backbone: dilation rates must be positive");
  }
  for (int level : sharing_levels) {
    if (level != 1 && level != 2) throw ConfigError("backbone: feature sharing exists only at levels 1 and 2");
  }
}

int64_t BackboneConfig::channels_at(int level) const { return base_width << (level - 1); }

namespace {

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t dilation = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(dilation).dilation(dilation).bias(false));
}

void push_conv_block(nn::Sequential& seq, const BackboneConfig& cfg, int64_t in, int64_t out,
                     int64_t dilation = 1) {
  seq->push_back(conv3x3(in, out, dilation));
  seq->push_back(make_norm(cfg.normalization, out));
  seq->push_back(make_activation(cfg.activation));
}

torch::Tensor upsample_nearest2x(const torch::Tensor& x) {
  return x.repeat_interleave(2, 2).repeat_interleave(2, 3);
}

}  // namespace

BackboneImpl::BackboneImpl(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& cfg = config_;
  const int64_t deepest = cfg.channels_at(4);

  for (int k = 1; k <= 4; ++k) {
    const int64_t in = k == 1 ? cfg.in_channels : cfg.channels_at(k - 1);
    const int64_t ch = cfg.channels_at(k);
    nn::Sequential enc;
    push_conv_block(enc, cfg, in, ch);
    push_conv_block(enc, cfg, ch, ch);
    encoders_.push_back(register_module("encode" + std::to_string(k), enc));
  }

  bottleneck_ = nn::Sequential();
  for (auto rate : cfg.dilation_rates) push_conv_block(bottleneck_, cfg, deepest, deepest, rate);
  register_module("bottleneck", bottleneck_);

  for (int k = 1; k <= 4; ++k) {
    const int64_t in = k == 4 ? deepest : cfg.channels_at(k + 1);
    const int64_t ch = cfg.channels_at(k);
    nn::Sequential up;
    up->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, ch, 4).stride(2).padding(1).bias(false)));
    up->push_back(make_norm(cfg.normalization, ch));
    up->push_back(make_activation(cfg.activation));
    upsamplers_.push_back(register_module("up" + std::to_string(k), up));

    nn::Sequential merge;
    push_conv_block(merge, cfg, 2 * ch, ch);
    push_conv_block(merge, cfg, ch, ch);
    mergers_.push_back(register_module("decode" + std::to_string(k), merge));
  }

  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(cfg.channels_at(1), cfg.out_channels, 1)));

  for (int k = 2; k <= 4; ++k) {
    nn::Sequential adapter;
    adapter->push_back(nn::Conv2d(nn::Conv2dOptions(cfg.in_channels, cfg.channels_at(k - 1), 1)));
    adapter->push_back(make_activation(cfg.activation));
    input_adapters_.push_back(register_module("from_image" + std::to_string(k), adapter));
    stage_heads_.push_back(register_module(
        "to_image" + std::to_string(k), nn::Conv2d(nn::Conv2dOptions(cfg.channels_at(k), cfg.out_channels, 1))));
  }

  if (cfg.zero_init_head) {
    torch::NoGradGuard no_grad;
    head_->weight.zero_();
    head_->bias.zero_();
    for (auto& h : stage_heads_) {
      h->weight.zero_();
      h->bias.zero_();
    }
  }
}

torch::nn::Conv2d BackboneImpl::output_head(int level) const {
  if (level == 1) return head_;
  return stage_heads_.at(level - 2);
}

torch::Tensor BackboneImpl::pool(const torch::Tensor& x) const {
  if (config_.pooling == Pooling::average) return torch::avg_pool2d(x, 2);
  return torch::max_pool2d(x, 2);
}

torch::Tensor BackboneImpl::activate_head(const torch::Tensor& x) const {
  return config_.head == OutputHead::sigmoid ? torch::sigmoid(x) : torch::tanh(x);
}

void BackboneImpl::check_input(const torch::Tensor& x, int entry_level) const {
  require_channels(x, config_.in_channels, "backbone input");
  const int64_t factor = int64_t{1} << (5 - entry_level);
  const int64_t h = x.size(2), w = x.size(3);
  if (h % factor != 0 || w % factor != 0) {
    throw ShapeError("backbone input: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by " + std::to_string(factor));
  }
  if (config_.normalization == Normalization::instance && (h / factor) * (w / factor) < 2) {
    throw ShapeError("backbone input: bottleneck would collapse to a single pixel");
  }
}

torch::Tensor BackboneImpl::run(const torch::Tensor& x, int entry_level, const torch::Tensor& sharing_mask,
                                FeatureTapSet* taps) {
  check_input(x, entry_level);
  if (sharing_mask.defined()) {
    require_same_spatial(x, sharing_mask, "backbone sharing mask");
  }

  torch::Tensor h = entry_level == 1 ? x : input_adapters_[entry_level - 2]->forward(x);
  std::array<torch::Tensor, 5> skips;
  for (int k = entry_level; k <= 4; ++k) {
    skips[k] = encoders_[k - 1]->forward(h);
    if (taps) taps->encoder_features[k] = skips[k];
    h = pool(skips[k]);
  }
  h = bottleneck_->forward(h);

  for (int k = 4; k >= entry_level; --k) {
    torch::Tensor arriving = upsamplers_[k - 1]->forward(h);
    if (taps) taps->decoder_features[k] = arriving;
    torch::Tensor skip = skips[k];
    const bool shares = sharing_mask.defined() &&
                        std::find(config_.sharing_levels.begin(), config_.sharing_levels.end(), k) !=
                            config_.sharing_levels.end();
    if (shares) {
      const torch::Tensor m = downsample_mask(sharing_mask, k - entry_level + 1);
      skip = arriving * m + skips[k] * (1.0 - m);
      if (taps) taps->shared_features[k] = skip;
    }
    h = mergers_[k - 1]->forward(torch::cat({skip, arriving}, 1));
  }

  const torch::Tensor logits = entry_level == 1 ? head_->forward(h) : stage_heads_[entry_level - 2]->forward(h);
  return activate_head(logits);
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& x, const torch::Tensor& sharing_mask) {
  return run(x, 1, sharing_mask, nullptr);
}

std::pair<torch::Tensor, FeatureTapSet> BackboneImpl::forward_with_taps(const torch::Tensor& x,
                                                                         const torch::Tensor& sharing_mask) {
  FeatureTapSet taps;
  auto out = run(x, 1, sharing_mask, &taps);
  return {out, std::move(taps)};
}

torch::Tensor BackboneImpl::forward_progressive(const torch::Tensor& x_low, const PhaseState& phase,
                                                const torch::Tensor& sharing_mask) {
  if (phase.stage < 1 || phase.stage > 4) throw ShapeError("forward_progressive: stage must be in 1..4");
  if (!(phase.fade >= 0.0 && phase.fade <= 1.0)) throw ContractError("forward_progressive: fade must be in [0,1]");
  const int entry = 5 - phase.stage;
  if (phase.stage == 1 || phase.fade >= 1.0) return run(x_low, entry, sharing_mask, nullptr);

  require_4d(x_low, "forward_progressive input");
  if (x_low.size(2) % 2 != 0 || x_low.size(3) % 2 != 0) throw ShapeError("forward_progressive: odd input size");
  const torch::Tensor prev_mask = sharing_mask.defined() ? downsample_mask(sharing_mask, 2) : torch::Tensor{};
  const torch::Tensor previous =
      upsample_nearest2x(run(torch::avg_pool2d(x_low, 2), entry + 1, prev_mask, nullptr));
  if (phase.fade <= 0.0) return previous;
  const torch::Tensor newest = run(x_low, entry, sharing_mask, nullptr);
  return newest * phase.fade + previous * (1.0 - phase.fade);
}

}  // namespace imuge
