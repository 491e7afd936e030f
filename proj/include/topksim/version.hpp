// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace topksim {

inline constexpr std::string_view kVersion = "0.1.0";

}  // namespace topksim
