#pragma once

#include <string>
#include <string_view>

namespace bip {

enum class ActivationKind { ReLU, GeLU, SiLU };

// Maximum slope of each activation, rounded up at the sixth decimal.
// Produced by tools/lipschitz_sweep.py; ReLU is exact.
inline constexpr double kReluLipschitz = 1.0;
inline constexpr double kGeluTanhLipschitz = 1.128994;
inline constexpr double kSiluLipschitz = 1.099840;

double lipschitz_constant(ActivationKind kind);

/// GeLU uses the tanh approximation.
template <typename T>
T activate(ActivationKind kind, T x);

template <typename T>
T activate_grad(ActivationKind kind, T x);

std::string to_string(ActivationKind kind);
ActivationKind parse_activation(std::string_view name);

}  // namespace bip
