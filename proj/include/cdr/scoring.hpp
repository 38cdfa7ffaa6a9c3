#ifndef CDR_SCORING_HPP
#define CDR_SCORING_HPP

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cdr/common.hpp"

namespace cdr {

enum class LogBase { e, ten };

inline std::string to_string(LogBase b) { return b == LogBase::e ? "e" : "10"; }

inline LogBase parse_log_base(const std::string& s) {
  if (s == "e" || s == "ln") return LogBase::e;
  if (s == "10") return LogBase::ten;
  throw InputError("log_base must be \"e\" or \"10\", got \"" + s + "\"");
}

/// Custom effective score combining potency (IC50), efficacy (lower limit)
/// and cumulative response (AUC):
///   log((auc + lower_limit + ic50) / (2 * auc * lower_limit * ic50)).
/// Higher is more effective. All inputs must be strictly positive.
inline double compute_ces(double auc, double lower_limit, double ic50,
                          LogBase base = LogBase::e) {
  if (!(auc > 0.0) || !(lower_limit > 0.0) || !(ic50 > 0.0) || !std::isfinite(auc) ||
      !std::isfinite(lower_limit) || !std::isfinite(ic50)) {
    throw std::domain_error("compute_ces: auc, lower_limit and ic50 must be finite and > 0");
  }
  // Log of the ratio as a difference keeps tiny products from underflowing.
  double v = std::log(auc + lower_limit + ic50) -
             (std::log(2.0) + std::log(auc) + std::log(lower_limit) + std::log(ic50));
  return base == LogBase::e ? v : v / std::log(10.0);
}

/// Binarization cut: mu + 1.28 sigma, sigma being the population standard
/// deviation. 1.28 is the standard normal 90th percentile.
struct ThresholdSpec {
  double mu = 0.0;
  double sigma = 0.0;
  double threshold = 0.0;
  std::size_t n = 0;
  LogBase log_base = LogBase::e;
};

inline constexpr double kTailZ = 1.28;

/// Published gate used to drop cell lines with too few highly effective drugs.
inline constexpr double kPublishedThreshold = 7.2734;

inline ThresholdSpec compute_threshold(std::span<const double> ces, LogBase base = LogBase::e) {
  if (ces.size() < 2) throw std::invalid_argument("compute_threshold: need at least 2 values");
  double sum = 0.0;
  for (double v : ces) {
    if (!std::isfinite(v)) throw std::domain_error("compute_threshold: non-finite value");
    sum += v;
  }
  const double n = static_cast<double>(ces.size());
  const double mu = sum / n;
  double ss = 0.0;
  for (double v : ces) ss += (v - mu) * (v - mu);
  ThresholdSpec spec;
  spec.mu = mu;
  spec.sigma = std::sqrt(ss / n);
  spec.threshold = mu + kTailZ * spec.sigma;
  spec.n = ces.size();
  spec.log_base = base;
  return spec;
}

inline int binarize(double ces, const ThresholdSpec& spec) { return ces >= spec.threshold ? 1 : 0; }

inline void to_json(nlohmann::json& j, const ThresholdSpec& s) {
  j = {{"mu", s.mu}, {"sigma", s.sigma}, {"threshold", s.threshold}, {"n", s.n},
       {"log_base", to_string(s.log_base)}};
}

inline void from_json(const nlohmann::json& j, ThresholdSpec& s) {
  s.mu = j.at("mu").get<double>();
  s.sigma = j.at("sigma").get<double>();
  s.threshold = j.at("threshold").get<double>();
  s.n = j.at("n").get<std::size_t>();
  s.log_base = parse_log_base(j.at("log_base").get<std::string>());
}

}  // namespace cdr

#endif  // CDR_SCORING_HPP
