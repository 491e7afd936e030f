// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TOPKSIM_SCHEDULE_HPP_
#define TOPKSIM_SCHEDULE_HPP_

#include <cmath>
#include <cstdint>
#include <string>

#include "topksim/errors.hpp"

namespace topksim {

// Learning-rate sequence, defined for steps t >= 1.
//
// kConstant         alpha_t = alpha0
// kPowerLaw         alpha_t = alpha0 * t^(-theta), non-increasing
// kFixedNonconvex   alpha_t = alpha0, where alpha0 was produced by
//                   fixed_lr_nonconvex; the kind tag records provenance
struct LearningRateSchedule {
  enum class Kind { kConstant, kPowerLaw, kFixedNonconvex };

  Kind kind = Kind::kConstant;
  double alpha0 = 0.1;
  double theta = 0.5;  // power-law exponent, used by kPowerLaw only

  void validate() const {
    if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) {
      throw InvalidParameterError("schedule: alpha0 must be positive");
    }
    if (kind == Kind::kPowerLaw && (!(theta > 0.0) || !std::isfinite(theta))) {
      throw InvalidParameterError("schedule: theta must be positive");
    }
  }

  double alpha(std::int64_t t) const {
    if (t < 1) {
      throw InvalidParameterError("schedule: step index starts at 1");
    }
    if (kind == Kind::kPowerLaw) {
      return alpha0 * std::pow(static_cast<double>(t), -theta);
    }
    return alpha0;
  }

  bool is_constant() const { return kind != Kind::kPowerLaw; }

  std::string kind_name() const {
    switch (kind) {
      case Kind::kConstant:
        return "constant";
      case Kind::kPowerLaw:
        return "power_law";
      case Kind::kFixedNonconvex:
        return "fixed_nonconvex";
    }
    return "unknown";
  }
};

}  // namespace topksim

#endif  // TOPKSIM_SCHEDULE_HPP_
