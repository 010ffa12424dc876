#pragma once

// Closed-form Dirichlet / evidence calculus.
//
// Evidence e_k >= 0 maps to pseudocounts alpha_k = e_k + 1. The mean alpha/S
// is the point prediction and u = K/S (S = sum of alpha) is the vacuity
// uncertainty: 1 for the uniform prior, tending to 0 as evidence grows.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "edlstage/error.hpp"
#include "edlstage/special.hpp"

namespace edlstage {

// Number of attack stages (reward-machine states).
inline constexpr std::size_t kNumStages = 3;

class EvidenceVector {
 public:
  EvidenceVector() = default;

  explicit EvidenceVector(std::vector<double> evidence) : values_(std::move(evidence)) {
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if (!std::isfinite(values_[k]) || values_[k] < 0.0) {
        throw InvalidEvidenceError("evidence[" + std::to_string(k) +
                                   "] must be finite and >= 0, got " +
                                   std::to_string(values_[k]));
      }
    }
  }

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }

  friend bool operator==(const EvidenceVector&, const EvidenceVector&) = default;

 private:
  std::vector<double> values_;
};

class DirichletParams {
 public:
  explicit DirichletParams(std::vector<double> alpha) : alpha_(std::move(alpha)) {
    if (alpha_.empty()) throw DomainError("Dirichlet parameters must be non-empty");
    for (std::size_t k = 0; k < alpha_.size(); ++k) {
      if (!std::isfinite(alpha_[k]) || !(alpha_[k] > 0.0)) {
        throw DomainError("alpha[" + std::to_string(k) + "] must be positive and finite, got " +
                          std::to_string(alpha_[k]));
      }
    }
  }

  std::span<const double> alpha() const noexcept { return alpha_; }
  std::size_t size() const noexcept { return alpha_.size(); }
  double operator[](std::size_t k) const { return alpha_[k]; }

  double strength() const { return std::accumulate(alpha_.begin(), alpha_.end(), 0.0); }

  friend bool operator==(const DirichletParams&, const DirichletParams&) = default;

 private:
  std::vector<double> alpha_;
};

inline DirichletParams evidence_to_alpha(const EvidenceVector& evidence) {
  std::vector<double> alpha(evidence.values().begin(), evidence.values().end());
  for (double& a : alpha) a += 1.0;
  return DirichletParams(std::move(alpha));
}

inline DirichletParams evidence_to_alpha(std::span<const double> evidence) {
  return evidence_to_alpha(EvidenceVector(std::vector<double>(evidence.begin(), evidence.end())));
}

inline EvidenceVector alpha_to_evidence(const DirichletParams& d) {
  std::vector<double> e(d.alpha().begin(), d.alpha().end());
  for (double& v : e) v -= 1.0;
  return EvidenceVector(std::move(e));
}

inline std::vector<double> mean(const DirichletParams& d) {
  const double s = d.strength();
  std::vector<double> p(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) p[k] = d[k] / s;
  return p;
}

inline std::vector<double> variance(const DirichletParams& d) {
  const double s = d.strength();
  std::vector<double> var(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    var[k] = d[k] * (s - d[k]) / (s * s * (s + 1.0));
  }
  return var;
}

inline double uncertainty(const DirichletParams& d) {
  return static_cast<double>(d.size()) / d.strength();
}

namespace detail {

inline double checked_sum(std::span<const double> alpha, const char* fn) {
  if (alpha.empty()) throw DomainError(std::string(fn) + ": empty parameter vector");
  double s = 0.0;
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw DomainError(std::string(fn) + ": components must be positive, got " +
                        std::to_string(a));
    }
    s += a;
  }
  return s;
}

}  // namespace detail

// ln B(alpha) = sum lnGamma(alpha_k) - lnGamma(S).
inline double log_multinomial_beta(std::span<const double> alpha) {
  const double s = detail::checked_sum(alpha, "log_multinomial_beta");
  double acc = 0.0;
  for (double a : alpha) acc += special::log_gamma(a);
  return acc - special::log_gamma(s);
}

/// KL[ Dir(p | alpha) || Dir(p | 1) ] for a parameter vector of length >= 2.
///
/// This is the misclassification regulariser once the true class is
/// removed from alpha. Zero iff every component equals 1.
inline double kl_to_uniform(std::span<const double> alpha) {
  const double s = detail::checked_sum(alpha, "kl_to_uniform");
  if (alpha.size() < 2) throw DomainError("kl_to_uniform: need at least 2 components");
  const double dim = static_cast<double>(alpha.size());
  const double psi_s = special::digamma(s);
  double kl = special::log_gamma(s) - special::log_gamma(dim);
  for (double a : alpha) {
    kl -= special::log_gamma(a);
    kl += (a - 1.0) * (special::digamma(a) - psi_s);
  }
  // Rounding can leave a tiny negative value at alpha == 1.
  return kl < 0.0 ? 0.0 : kl;
}

/// d KL / d alpha_j = (alpha_j - 1) psi'(alpha_j) - (S - K') psi'(S).
inline std::vector<double> kl_to_uniform_gradient(std::span<const double> alpha) {
  const double s = detail::checked_sum(alpha, "kl_to_uniform_gradient");
  if (alpha.size() < 2) throw DomainError("kl_to_uniform_gradient: need at least 2 components");
  const double excess = s - static_cast<double>(alpha.size());
  const double tail = excess * special::trigamma(s);
  std::vector<double> grad(alpha.size());
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    grad[j] = (alpha[j] - 1.0) * special::trigamma(alpha[j]) - tail;
  }
  return grad;
}

}  // namespace edlstage
