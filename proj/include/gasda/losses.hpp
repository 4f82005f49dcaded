#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "gasda/error.hpp"
#include "gasda/geometry.hpp"
#include "gasda/ops.hpp"
#include "gasda/tensor.hpp"

namespace gasda::losses {

struct LossWeights {
  double lambda1 = 10.0;  // cycle consistency
  double lambda2 = 30.0;  // identity mapping
  double eta = 0.85;      // SSIM share of the photometric term
  double mu = 0.15;       // L1 share of the photometric term
  double gamma1 = 50.0;   // supervised depth
  double gamma2 = 50.0;   // geometry consistency
  double gamma3 = 50.0;   // depth consistency
  double gamma4 = 0.5;    // edge-aware smoothness

  void validate() const {
    for (const double w : {lambda1, lambda2, eta, mu, gamma1, gamma2, gamma3, gamma4}) {
      if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
    }
  }
};

// The ten terms of the full objective, in reporting order.
enum class Term : std::size_t { kGanT, kGanS, kCyc, kIdt, kSde, kTde, kTgc, kSgc, kDc, kDs };
inline constexpr std::size_t kNumTerms = 10;

inline constexpr std::array<std::string_view, kNumTerms> kTermNames{"gan_t", "gan_s", "cyc", "idt", "sde",
                                                                    "tde",   "tgc",   "sgc", "dc",  "ds"};

inline std::string_view term_name(Term t) { return kTermNames[static_cast<std::size_t>(t)]; }

// Coefficient of each term in the full objective.
inline double term_weight(Term t, const LossWeights& w) {
  switch (t) {
    case Term::kGanT:
    case Term::kGanS:
      return 1.0;
    case Term::kCyc:
      return w.lambda1;
    case Term::kIdt:
      return w.lambda2;
    case Term::kSde:
    case Term::kTde:
      return w.gamma1;
    case Term::kTgc:
    case Term::kSgc:
      return w.gamma2;
    case Term::kDc:
      return w.gamma3;
    case Term::kDs:
      return w.gamma4;
  }
  return 0.0;
}

inline constexpr std::array<Term, 4> kTranslationTerms{Term::kGanT, Term::kGanS, Term::kCyc, Term::kIdt};

// Sparse set of term values; V is double (reporting) or Tensor<T> (training).
template <class V>
struct TermSet {
  std::array<std::optional<V>, kNumTerms> values{};

  bool has(Term t) const { return values[static_cast<std::size_t>(t)].has_value(); }
  const V& get(Term t) const {
    const auto& v = values[static_cast<std::size_t>(t)];
    if (!v) throw std::invalid_argument("loss term '" + std::string(term_name(t)) + "' missing");
    return *v;
  }
  void set(Term t, V v) { values[static_cast<std::size_t>(t)] = std::move(v); }
};

namespace detail {

inline double scaled(double v, double s) { return v * s; }
inline double plus(double a, double b) { return a + b; }
template <class T>
Tensor<T> scaled(const Tensor<T>& v, double s) {
  return ops::scale(v, static_cast<T>(s));
}
template <class T>
Tensor<T> plus(const Tensor<T>& a, const Tensor<T>& b) {
  return ops::add(a, b);
}

}  // namespace detail

// Sum of the present terms, each times its coefficient. Absent terms count as 0.
template <class V>
V weighted_total(const TermSet<V>& parts, const LossWeights& w, V zero) {
  V total = zero;
  bool first = true;
  for (std::size_t i = 0; i < kNumTerms; ++i) {
    if (!parts.values[i]) continue;
    V term = detail::scaled(*parts.values[i], term_weight(static_cast<Term>(i), w));
    total = first ? term : detail::plus(total, term);
    first = false;
  }
  return total;
}

// L_trans = gan_t + gan_s + lambda1*cyc + lambda2*idt.
template <class V>
V translation_objective(const TermSet<V>& parts, const LossWeights& w) {
  TermSet<V> only;
  for (const Term t : kTranslationTerms) only.set(t, parts.get(t));
  return weighted_total(only, w, only.get(Term::kGanT));
}

// L_trans + gamma1*(sde+tde) + gamma2*(tgc+sgc) + gamma3*dc + gamma4*ds.
template <class V>
V full_objective(const TermSet<V>& parts, const LossWeights& w) {
  for (std::size_t i = 0; i < kNumTerms; ++i) parts.get(static_cast<Term>(i));
  return weighted_total(parts, w, parts.get(Term::kGanT));
}

// Per-term scalars of one step (or an epoch mean) plus the weighted total.
struct LossReport {
  std::array<double, kNumTerms> terms{};
  double disc = 0.0;  // discriminator objective, not part of the total
  double total = 0.0;

  double& operator[](Term t) { return terms[static_cast<std::size_t>(t)]; }
  double operator[](Term t) const { return terms[static_cast<std::size_t>(t)]; }

  TermSet<double> as_terms() const {
    TermSet<double> s;
    for (std::size_t i = 0; i < kNumTerms; ++i) s.values[i] = terms[i];
    return s;
  }
};

// ----------------------------------------------------------- adversarial

enum class AdversarialForm { kLeastSquares, kLogLikelihood };

template <class T>
struct AdversarialLosses {
  Tensor<T> generator;
  Tensor<T> discriminator;
};

namespace detail {

template <class T>
void require_nonempty(const Tensor<T>& t, const char* what) {
  if (!t.defined() || t.numel() == 0) throw ShapeError(std::string(what) + ": empty discriminator map");
}

// log(1 + e^x), stable for large |x|.
template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return ops::add(ops::leaky_relu(x, T(0)), ops::log(ops::add_scalar(ops::exp(ops::scale(ops::abs(x), T(-1))), T(1))));
}

}  // namespace detail

// Generator side: mean((D(fake)-1)^2), or -mean(log sigmoid(D(fake))).
template <class T>
Tensor<T> generator_adversarial_loss(const Tensor<T>& disc_fake, AdversarialForm form = AdversarialForm::kLeastSquares) {
  detail::require_nonempty(disc_fake, "adversarial");
  if (form == AdversarialForm::kLeastSquares) return ops::mean(ops::square(ops::add_scalar(disc_fake, T(-1))));
  return ops::mean(detail::softplus(ops::scale(disc_fake, T(-1))));
}

// Discriminator side: mean((D(real)-1)^2) + mean(D(fake)^2), or the
// log-likelihood counterpart. Real and fake maps may differ in shape.
template <class T>
Tensor<T> discriminator_adversarial_loss(const Tensor<T>& disc_real, const Tensor<T>& disc_fake,
                                         AdversarialForm form = AdversarialForm::kLeastSquares) {
  detail::require_nonempty(disc_real, "adversarial");
  detail::require_nonempty(disc_fake, "adversarial");
  if (form == AdversarialForm::kLeastSquares) {
    return ops::add(ops::mean(ops::square(ops::add_scalar(disc_real, T(-1)))), ops::mean(ops::square(disc_fake)));
  }
  return ops::add(ops::mean(detail::softplus(ops::scale(disc_real, T(-1)))), ops::mean(detail::softplus(disc_fake)));
}

template <class T>
AdversarialLosses<T> adversarial_losses(const Tensor<T>& disc_real, const Tensor<T>& disc_fake,
                                        AdversarialForm form = AdversarialForm::kLeastSquares) {
  return {generator_adversarial_loss(disc_fake, form), discriminator_adversarial_loss(disc_real, disc_fake, form)};
}

// ------------------------------------------------------------- L1 family

template <class T>
Tensor<T> mean_abs_difference(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
  return ops::mean(ops::abs(ops::sub(a, b)));
}

// One direction of the cycle term: mean |G'(G(x)) - x|.
template <class T>
Tensor<T> cycle_loss(const Tensor<T>& x, const Tensor<T>& reconstructed) {
  return mean_abs_difference(reconstructed, x, "cycle_loss");
}

// One direction of the identity term: mean |G(x) - x| for x already in G's output domain.
template <class T>
Tensor<T> identity_loss(const Tensor<T>& x, const Tensor<T>& mapped) {
  return mean_abs_difference(mapped, x, "identity_loss");
}

// Mean absolute depth error in meters.
template <class T>
Tensor<T> depth_supervised_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
  return mean_abs_difference(pred, gt, "depth_supervised_loss");
}

template <class T>
Tensor<T> depth_consistency_loss(const Tensor<T>& pred_t, const Tensor<T>& pred_s) {
  return mean_abs_difference(pred_t, pred_s, "depth_consistency_loss");
}

// --------------------------------------------------------- photometric

// eta * mean((1 - ssim)/2) + mu * mean(abs_diff), from precomputed maps.
template <class T>
Tensor<T> photometric_mix(const Tensor<T>& ssim_map, const Tensor<T>& abs_diff, double eta, double mu) {
  const Tensor<T> dssim = ops::mean(ops::scale(ops::add_scalar(ops::scale(ssim_map, T(-1)), T(1)), T(0.5)));
  return ops::add(ops::scale(dssim, static_cast<T>(eta)), ops::scale(ops::mean(abs_diff), static_cast<T>(mu)));
}

// Stereo photometric consistency between the left view and its
// reconstruction from the right view.
template <class T>
Tensor<T> geometry_consistency_loss(const Tensor<T>& left, const Tensor<T>& reconstruction, const LossWeights& w) {
  if (left.shape() != reconstruction.shape()) {
    throw ShapeError("geometry_consistency_loss: " + left.shape().str() + " vs " + reconstruction.shape().str());
  }
  const Tensor<T> map = geometry::ssim(left, reconstruction);  // rejects values outside [0,1]
  return photometric_mix(map, ops::abs(ops::sub(left, reconstruction)), w.eta, w.mu);
}

// Edge-aware smoothness: mean over pixels and both directions of
// exp(-|grad image|) * |grad depth|, image gradients averaged over channels.
template <class T>
Tensor<T> smoothness_loss(const Tensor<T>& depth, const Tensor<T>& image) {
  const Shape ds = depth.shape(), is = image.shape();
  if (ds.n != is.n || ds.c != 1 || ds.h != is.h || ds.w != is.w) {
    throw ShapeError("smoothness_loss: depth " + ds.str() + " vs image " + is.str());
  }
  const auto [ddx, ddy] = geometry::spatial_gradients(depth);
  const auto [idx, idy] = geometry::spatial_gradients(image);
  const Tensor<T> wx = ops::exp(ops::scale(ops::mean_channels(ops::abs(idx)), T(-1)));
  const Tensor<T> wy = ops::exp(ops::scale(ops::mean_channels(ops::abs(idy)), T(-1)));
  const Tensor<T> sx = ops::mean(ops::mul(wx, ops::abs(ddx)));
  const Tensor<T> sy = ops::mean(ops::mul(wy, ops::abs(ddy)));
  return ops::scale(ops::add(sx, sy), T(0.5));
}

}  // namespace gasda::losses
