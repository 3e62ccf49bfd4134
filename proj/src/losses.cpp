#include "imuge/losses.hpp"

#include "imuge/errors.hpp"
#include "imuge/tensor_util.hpp"

namespace imuge {

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0 || theta < 0) throw ConfigError("loss weights must be non-negative");
}

torch::Tensor loss_cls(const torch::Tensor& predicted, const torch::Tensor& target, double eps) {
  require_same_shape(predicted, target, "loss_cls");
  const auto p = torch::clamp(predicted, eps, 1.0 - eps);
  return -(target * torch::log(p) + (1.0 - target) * torch::log(1.0 - p)).mean();
}

namespace {

torch::Tensor distance_map(const torch::Tensor& a, const torch::Tensor& b, Distance distance) {
  const auto diff = a - b;
  switch (distance) {
    case Distance::l1: return diff.abs();
    case Distance::charbonnier: return torch::sqrt(diff * diff + 1e-6);
    case Distance::l2: break;
  }
  return diff * diff;
}

}  // namespace

ReconstructionLoss loss_rec(const torch::Tensor& original, const torch::Tensor& immunized,
                            const torch::Tensor& recovered, const torch::Tensor& ground_truth, Distance distance) {
  require_same_shape(original, recovered, "loss_rec recovered");
  require_channels(ground_truth, 1, "loss_rec mask");
  require_same_spatial(original, ground_truth, "loss_rec mask");
  ReconstructionLoss out;
  const auto err = distance_map(original, recovered, distance);
  const auto mask_mass = ground_truth.sum() * original.size(1);
  // Masked mean over tampered elements; guarded so an empty mask contributes exactly 0.
  const auto emphasis = (err * ground_truth).sum() / torch::clamp_min(mask_mass, 1.0);
  out.recovery = err.mean() + emphasis;
  if (immunized.defined()) {
    require_same_shape(original, immunized, "loss_rec immunized");
    out.immunization = distance_map(original, immunized, distance).mean();
  } else {
    out.immunization = torch::zeros({}, original.options());
  }
  return out;
}

torch::Tensor loss_adv_generator(const torch::Tensor& scores) { return (1.0 - scores).pow(2).mean(); }

torch::Tensor loss_adv_discriminator(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  return 0.5 * fake_scores.pow(2).mean() + 0.5 * (1.0 - real_scores).pow(2).mean();
}

double loss_total(const LossReport& r, const LossWeights& w, bool decoupled) {
  const double alpha = decoupled ? 0.0 : w.alpha;
  return (r.l_R + w.gamma * r.l_C) + alpha * r.l_cls + w.beta * (r.l_DR + w.theta * r.l_DC);
}

namespace {

double scalar(const torch::Tensor& t) { return t.defined() ? t.detach().item<double>() : 0.0; }

torch::Tensor scaled(const torch::Tensor& t, double weight) {
  return t.defined() && weight != 0.0 ? t * weight : torch::Tensor{};
}

}  // namespace

torch::Tensor generator_objective(const GeneratorTerms& t, const LossWeights& w, bool decoupled) {
  const double alpha = decoupled ? 0.0 : w.alpha;
  torch::Tensor total;
  for (const auto& part : {scaled(t.recovery, 1.0), scaled(t.immunization, w.gamma), scaled(t.cls, alpha),
                           scaled(t.adv_recovered, w.beta), scaled(t.adv_immunized, w.beta * w.theta)}) {
    if (!part.defined()) continue;
    total = total.defined() ? total + part : part;
  }
  if (!total.defined()) throw ContractError("generator_objective: no loss terms given");
  return total;
}

LossReport make_report(const GeneratorTerms& t, const LossWeights& w, bool decoupled) {
  LossReport r;
  r.l_cls = scalar(t.cls);
  r.l_R = scalar(t.recovery);
  r.l_C = scalar(t.immunization);
  r.l_DR = scalar(t.adv_recovered);
  r.l_DC = scalar(t.adv_immunized);
  r.l_total = loss_total(r, w, decoupled);
  return r;
}

}  // namespace imuge
