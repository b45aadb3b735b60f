#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rege/errors.hpp"
#include "rege/toy/model.hpp"
#include "rege/toy/train.hpp"

namespace rege::toy {

// Classification-as-generation task where the label is a function of the
// descriptor: one bit comes from the visual half, one from the prior half.
// A model seeing only one token stream tops out at half the classes, so
// ablation orderings are meaningful by construction.
template <typename Real> class SyntheticTask {
public:
  static constexpr int kNumClasses = 4;
  static constexpr int kInstructionIds[3] = {3, 4, 5};
  static constexpr int kAnswerLead = 8;
  static constexpr int kClassTokenBase = 10;

  static SyntheticTask make(std::uint64_t seed) {
    SyntheticTask task;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    task.w_vis_.resize(kDescriptorHalf);
    task.w_pri_.resize(kDescriptorHalf);
    for (int i = 0; i < kDescriptorHalf; ++i)
      task.w_vis_(i) = static_cast<Real>(gauss(rng));
    for (int i = 0; i < kDescriptorHalf; ++i)
      task.w_pri_(i) = static_cast<Real>(gauss(rng));
    task.w_vis_ /= task.w_vis_.norm();
    task.w_pri_ /= task.w_pri_.norm();
    return task;
  }

  int label_of(const Vec<Real>& descriptor) const {
    int bit_vis = w_vis_.dot(descriptor.head(kDescriptorHalf)) > 0 ? 1 : 0;
    int bit_pri = w_pri_.dot(descriptor.tail(kDescriptorHalf)) > 0 ? 1 : 0;
    return bit_vis + 2 * bit_pri;
  }

  static std::vector<int> answer_for(int label) {
    return {kAnswerLead, kClassTokenBase + label};
  }

  // Descriptors are resampled to keep a margin from the class boundaries.
  std::vector<Sample<Real>> make_samples(int n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Real margin = Real(0.5);
    std::vector<Sample<Real>> out;
    out.reserve(n);
    for (int k = 0; k < n; ++k) {
      Sample<Real> s;
      s.descriptor.resize(kDescriptorDim);
      auto draw_half = [&](int offset, const Vec<Real>& w) {
        for (;;) {
          Vec<Real> half(kDescriptorHalf);
          for (int i = 0; i < kDescriptorHalf; ++i)
            half(i) = static_cast<Real>(gauss(rng));
          if (std::abs(w.dot(half)) >= margin) {
            s.descriptor.segment(offset, kDescriptorHalf) = half;
            return;
          }
        }
      };
      draw_half(0, w_vis_);
      draw_half(kDescriptorHalf, w_pri_);
      s.instruction_ids.assign(std::begin(kInstructionIds), std::end(kInstructionIds));
      s.answer_ids = answer_for(label_of(s.descriptor));
      out.push_back(std::move(s));
    }
    return out;
  }

  double accuracy(const Model<Real>& model, const std::vector<Sample<Real>>& samples,
                  const ForwardOptions& fwd = {}) const {
    if (samples.empty())
      throw data_error("accuracy: no samples");
    int hits = 0;
    for (const auto& s : samples) {
      auto decoded = model.greedy_decode(s, static_cast<int>(s.answer_ids.size()), fwd);
      if (decoded == s.answer_ids)
        ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
  }

private:
  Vec<Real> w_vis_, w_pri_;
};

struct AblationBudget {
  int steps = 300;
  int batch_size = 16;
  double lr = 3e-3;
  int n_train = 64;
  int n_eval = 128;
  std::uint64_t seed = 99;
};

struct CellSpec {
  std::string name;
  bool use_visual = true;
  bool use_prior = true;
  bool tune_theta = true;
  bool tune_gamma = true;
  bool tune_lora = true;
  PriorTokenPosition position = PriorTokenPosition::after_visual;
};

struct AblationCell {
  CellSpec spec;
  double init_loss = 0;
  double final_loss = 0;
  double accuracy = 0;
};

// Trains one configuration with the shared task/data/seed and reports its
// final training loss and held-out generation accuracy.
template <typename Real>
AblationCell run_ablation_cell(const Config& base_cfg, const AblationBudget& budget,
                               const CellSpec& spec) {
  Config cfg = base_cfg;
  cfg.prior_token_position = spec.position;

  SyntheticTask<Real> task = SyntheticTask<Real>::make(budget.seed);
  auto train_set = task.make_samples(budget.n_train, budget.seed + 1);
  auto eval_set = task.make_samples(budget.n_eval, budget.seed + 2);

  Model<Real> model = Model<Real>::init(cfg);
  AdamW<Real> opt(model.trainable);
  TuneMask mask{spec.tune_theta, spec.tune_gamma, spec.tune_lora};
  ForwardOptions fwd{spec.use_visual, spec.use_prior, true};

  AblationCell cell;
  cell.spec = spec;
  cell.init_loss = static_cast<double>(
      mean_nll<Real>(model, std::span<const Sample<Real>>(train_set), fwd));

  std::vector<Sample<Real>> batch(budget.batch_size);
  for (int step = 0; step < budget.steps; ++step) {
    for (int j = 0; j < budget.batch_size; ++j)
      batch[j] = train_set[(static_cast<std::size_t>(step) * budget.batch_size + j) %
                           train_set.size()];
    train_step<Real>(model, opt, std::span<const Sample<Real>>(batch),
                     static_cast<Real>(budget.lr), mask, fwd);
  }

  cell.final_loss = static_cast<double>(
      mean_nll<Real>(model, std::span<const Sample<Real>>(train_set), fwd));
  cell.accuracy = task.accuracy(model, eval_set, fwd);
  return cell;
}

inline std::vector<CellSpec> standard_ablation_cells() {
  using P = PriorTokenPosition;
  return {
      {"prior_only", false, true, true, true, true, P::after_visual},
      {"visual_only", true, false, true, true, true, P::after_visual},
      {"visual_prior_full", true, true, true, true, true, P::after_visual},
      {"visual_prior_tune_prior_projector", true, true, true, false, false, P::after_visual},
      {"visual_prior_tune_lora_visual_projector", true, true, false, true, true,
       P::after_visual},
      {"visual_prior_tune_none", true, true, false, false, false, P::after_visual},
      {"visual_prior_full_prior_first", true, true, true, true, true, P::before_visual},
  };
}

template <typename Real>
std::vector<AblationCell> run_ablation(const Config& cfg, const AblationBudget& budget) {
  std::vector<AblationCell> cells;
  for (const auto& spec : standard_ablation_cells())
    cells.push_back(run_ablation_cell<Real>(cfg, budget, spec));
  return cells;
}

} // namespace rege::toy
