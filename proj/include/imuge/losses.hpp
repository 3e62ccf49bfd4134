#pragma once

#include <torch/torch.h>

namespace imuge {

struct LossWeights {
  double alpha = 0.01;   // tamper classification
  double beta = 0.005;   // adversarial
  double gamma = 0.5;    // immunized-image fidelity inside the reconstruction loss
  double theta = 0.5;    // immunized-image adversarial term inside the adversarial loss

  void validate() const;
};

/// Scalar loss parts of one generator update.
struct LossReport {
  double l_cls = 0.0;
  double l_R = 0.0;
  double l_C = 0.0;
  double l_DR = 0.0;
  double l_DC = 0.0;
  double l_total = 0.0;
};

enum class Distance { l2, l1, charbonnier };

/// Mean binary cross entropy of the predicted mask against the ground truth; the
/// prediction is clamped to [eps, 1 - eps].
torch::Tensor loss_cls(const torch::Tensor& predicted, const torch::Tensor& target, double eps = 1e-7);

struct ReconstructionLoss {
  torch::Tensor recovery;      // l_R
  torch::Tensor immunization;  // l_C

  torch::Tensor combined(double gamma) const { return recovery + gamma * immunization; }
};

/// l_R = mean d(I, I_R) + (masked mean of d(I, I_R) over M_G = 1, or 0 if M_G is empty);
/// l_C = mean d(I, I_M). d is the squared error unless another distance is selected.
ReconstructionLoss loss_rec(const torch::Tensor& original, const torch::Tensor& immunized,
                            const torch::Tensor& recovered, const torch::Tensor& ground_truth,
                            Distance distance = Distance::l2);

/// Least-squares generator loss: mean (1 - score)^2.
torch::Tensor loss_adv_generator(const torch::Tensor& scores);

/// Least-squares discriminator loss: 0.5 mean fake^2 + 0.5 mean (1 - real)^2.
torch::Tensor loss_adv_discriminator(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);

/// Generator objective from scalar parts; alpha is forced to zero when decoupled.
double loss_total(const LossReport& report, const LossWeights& weights, bool decoupled = false);

/// Tensor parts of the generator objective. Undefined parts count as zero.
struct GeneratorTerms {
  torch::Tensor cls, recovery, immunization, adv_recovered, adv_immunized;
};

/// Same weighting as loss_total, on tensors, keeping the graph.
torch::Tensor generator_objective(const GeneratorTerms& terms, const LossWeights& weights, bool decoupled);

/// Reads the parts out as doubles and fills l_total from them.
LossReport make_report(const GeneratorTerms& terms, const LossWeights& weights, bool decoupled);

}  // namespace imuge
