#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rege/errors.hpp"
#include "rege/toy/model.hpp"

namespace rege::toy {

// Which parts of Θ receive updates. Disabled groups keep their init values.
struct TuneMask {
  bool theta = true;
  bool gamma = true;
  bool lora = true;

  bool allows(const std::string& tensor_name) const {
    if (tensor_name.rfind("theta.", 0) == 0)
      return theta;
    if (tensor_name.rfind("gamma.", 0) == 0)
      return gamma;
    return lora;
  }
};

template <typename Real> class AdamW {
public:
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
  Real weight_decay = Real(0);

  explicit AdamW(const Trainable<Real>& shape)
      : m_(zeros_like(shape)), v_(zeros_like(shape)) {}

  void step(Trainable<Real>& params, const Trainable<Real>& grads, Real lr,
            const TuneMask& mask = {}) {
    ++t_;
    const Real bc1 = Real(1) - std::pow(beta1, static_cast<Real>(t_));
    const Real bc2 = Real(1) - std::pow(beta2, static_cast<Real>(t_));

    std::vector<Mat<Real>*> ps, ms, vs;
    std::vector<const Mat<Real>*> gs;
    std::vector<std::string> names;
    for_each_trainable(params, [&](const std::string& n, Mat<Real>& x) {
      ps.push_back(&x);
      names.push_back(n);
    });
    for_each_trainable(const_cast<Trainable<Real>&>(grads),
                       [&](const std::string&, Mat<Real>& x) { gs.push_back(&x); });
    for_each_trainable(m_, [&](const std::string&, Mat<Real>& x) { ms.push_back(&x); });
    for_each_trainable(v_, [&](const std::string&, Mat<Real>& x) { vs.push_back(&x); });

    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!mask.allows(names[i]))
        continue;
      Mat<Real>& w = *ps[i];
      const Mat<Real>& g = *gs[i];
      Mat<Real>& m = *ms[i];
      Mat<Real>& v = *vs[i];
      m = beta1 * m + (Real(1) - beta1) * g;
      v = beta2 * v + (Real(1) - beta2) * g.cwiseProduct(g);
      Mat<Real> mhat = m / bc1;
      Mat<Real> vhat = v / bc2;
      Mat<Real> update =
          mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix()) + weight_decay * w;
      w -= lr * update;
    }
  }

private:
  std::int64_t t_ = 0;
  Trainable<Real> m_;
  Trainable<Real> v_;
};

// One optimizer step on the batch-mean NLL. Only Θ changes; a non-finite
// loss aborts before any parameter is touched.
template <typename Real>
Real train_step(Model<Real>& model, AdamW<Real>& opt, std::span<const Sample<Real>> batch,
                Real lr, const TuneMask& mask = {}, const ForwardOptions& fwd = {}) {
  if (batch.empty())
    throw data_error("train_step: empty batch");
  Trainable<Real> grads = zeros_like(model.trainable);
  Real loss = 0;
  for (const auto& sample : batch)
    loss += model.nll_with_grads(sample, grads, fwd);
  const Real inv = Real(1) / static_cast<Real>(batch.size());
  loss *= inv;
  if (!std::isfinite(loss))
    throw data_error("train_step: non-finite loss (" + std::to_string(loss) + ") on batch of " +
                     std::to_string(batch.size()));
  for_each_trainable(grads, [&](const std::string&, Mat<Real>& g) { g *= inv; });
  opt.step(model.trainable, grads, lr, mask);
  return loss;
}

template <typename Real>
Real mean_nll(const Model<Real>& model, std::span<const Sample<Real>> samples,
              const ForwardOptions& fwd = {}) {
  Real total = 0;
  for (const auto& s : samples)
    total += model.nll(s, fwd);
  return total / static_cast<Real>(samples.size());
}

} // namespace rege::toy
