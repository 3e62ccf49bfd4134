#include "imuge/discriminator.hpp"

#include <string>

#include "imuge/errors.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

namespace nn = torch::nn;

void DiscriminatorConfig::validate() const {
  if (in_channels <= 0 || base_width <= 0) throw ConfigError("discriminator: widths must be positive");
}

namespace {

nn::Conv2d conv4(int64_t in, int64_t out, int64_t stride, bool bias) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(stride).padding(1).bias(bias));
}

nn::AnyModule leaky() { return nn::AnyModule(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2))); }

}  // namespace

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorConfig config) : config_(config) {
  config_.validate();
  const int64_t w = config_.base_width;
  const int64_t widths[] = {config_.in_channels, w, 2 * w, 4 * w};
  for (int j = 0; j < 3; ++j) {
    nn::Sequential layer;
    layer->push_back(conv4(widths[j], widths[j + 1], 2, j == 0));
    if (j > 0) layer->push_back(make_norm(config_.normalization, widths[j + 1]));
    layer->push_back(leaky());
    strided_.push_back(register_module("down" + std::to_string(j + 1), layer));
  }
  for (int j = 1; j <= 3; ++j) {
    nn::Sequential adapter;
    adapter->push_back(nn::Conv2d(nn::Conv2dOptions(config_.in_channels, widths[j], 1)));
    adapter->push_back(leaky());
    adapters_.push_back(register_module("from_image" + std::to_string(j), adapter));
  }
  tail_ = nn::Sequential();
  tail_->push_back(conv4(4 * w, 8 * w, 1, false));
  tail_->push_back(make_norm(config_.normalization, 8 * w));
  tail_->push_back(leaky());
  tail_->push_back(conv4(8 * w, 1, 1, true));
  register_module("tail", tail_);
}

int64_t PatchDiscriminatorImpl::score_size(int64_t n, int depth) {
  for (int j = depth; j < 3; ++j) n = (n + 2 - 4) / 2 + 1;
  n = (n + 2 - 4) + 1;
  return (n + 2 - 4) + 1;
}

torch::Tensor PatchDiscriminatorImpl::run_from(torch::Tensor h, int depth) {
  for (int j = depth; j < 3; ++j) h = strided_[j]->forward(h);
  return tail_->forward(h);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& images) { return forward_progressive(images, 0, 1.0); }

torch::Tensor PatchDiscriminatorImpl::forward_progressive(const torch::Tensor& images, int depth, double fade) {
  require_channels(images, config_.in_channels, "discriminator input");
  if (depth < 0 || depth > 3) throw ShapeError("discriminator: entry depth must be in 0..3");
  if (score_size(std::min(images.size(2), images.size(3)), depth) < 1) {
    throw ShapeError("discriminator: input too small for the patch stack");
  }
  auto enter = [&](const torch::Tensor& x, int d) { return d == 0 ? x : adapters_[d - 1]->forward(x); };
  if (depth == 3 || fade >= 1.0) return run_from(enter(images, depth), depth);

  // The newest layer (strided_[depth]) is faded in against the pooled-input path.
  const torch::Tensor previous = enter(torch::avg_pool2d(images, 2), depth + 1);
  if (fade <= 0.0) return run_from(previous, depth + 1);
  const torch::Tensor newest = strided_[depth]->forward(enter(images, depth));
  return run_from(newest * fade + previous * (1.0 - fade), depth + 1);
}

}  // namespace imuge
