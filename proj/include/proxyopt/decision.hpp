#pragma once

#include <string_view>

namespace proxyopt {

/// Three-way launch decision induced by thresholding a t-statistic at +/-2.
enum class Decision { Positive, Neutral, Negative };

inline constexpr double kSignificanceThreshold = 2.0;

/// Positive if delta/sqrt(var) > 2, Negative if < -2, otherwise Neutral.
/// |t| == 2 is Neutral. Throws ValidationError when var <= 0 or inputs are not finite.
Decision decide(double delta_hat, double var_hat);

std::string_view to_string(Decision d);

}  // namespace proxyopt
