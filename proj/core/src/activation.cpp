#include "bip/activation.hpp"

#include <cmath>
#include <stdexcept>

namespace bip {

namespace {

template <typename T>
constexpr T kGeluScale = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluCubic = static_cast<T>(0.044715);

}  // namespace

double lipschitz_constant(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::ReLU:
      return kReluLipschitz;
    case ActivationKind::GeLU:
      return kGeluTanhLipschitz;
    case ActivationKind::SiLU:
      return kSiluLipschitz;
  }
  throw std::invalid_argument("unknown activation");
}

template <typename T>
T activate(ActivationKind kind, T x) {
  switch (kind) {
    case ActivationKind::ReLU:
      return x > T(0) ? x : T(0);
    case ActivationKind::GeLU: {
      const T u = kGeluScale<T> * (x + kGeluCubic<T> * x * x * x);
      return T(0.5) * x * (T(1) + std::tanh(u));
    }
    case ActivationKind::SiLU:
      return x / (T(1) + std::exp(-x));
  }
  throw std::invalid_argument("unknown activation");
}

template <typename T>
T activate_grad(ActivationKind kind, T x) {
  switch (kind) {
    case ActivationKind::ReLU:
      return x > T(0) ? T(1) : T(0);
    case ActivationKind::GeLU: {
      const T u = kGeluScale<T> * (x + kGeluCubic<T> * x * x * x);
      const T t = std::tanh(u);
      const T du = kGeluScale<T> * (T(1) + T(3) * kGeluCubic<T> * x * x);
      return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
    }
    case ActivationKind::SiLU: {
      const T s = T(1) / (T(1) + std::exp(-x));
      return s * (T(1) + x * (T(1) - s));
    }
  }
  throw std::invalid_argument("unknown activation");
}

template float activate(ActivationKind, float);
template double activate(ActivationKind, double);
template float activate_grad(ActivationKind, float);
template double activate_grad(ActivationKind, double);

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::ReLU:
      return "relu";
    case ActivationKind::GeLU:
      return "gelu";
    case ActivationKind::SiLU:
      return "silu";
  }
  return "unknown";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "relu") return ActivationKind::ReLU;
  if (name == "gelu") return ActivationKind::GeLU;
  if (name == "silu" || name == "swish") return ActivationKind::SiLU;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

}  // namespace bip
