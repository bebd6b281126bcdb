#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "poc/fixed_point.hpp"

namespace poc {

/// Mersenne prime 2^61 - 1.
inline constexpr uint64_t kModulus = (uint64_t{1} << 61) - 1;

/// Element of the prime field F_p with p = 2^61 - 1.
class Fp {
 public:
  constexpr Fp() = default;
  explicit Fp(int v) : v_(reduce_signed(v)) {}

  /// Requires v < p; throws `kMalformed` otherwise.
  static Fp from_canonical(uint64_t v);
  static Fp from_u64(uint64_t v) { return Fp(reduce(uint128{v}), Tag{}); }
  static Fp from_int(int128 v) { return Fp(reduce_signed(v), Tag{}); }

  constexpr uint64_t value() const noexcept { return v_; }

  friend Fp operator+(Fp a, Fp b) {
    uint64_t s = a.v_ + b.v_;
    return Fp(s >= kModulus ? s - kModulus : s, Tag{});
  }
  friend Fp operator-(Fp a, Fp b) { return Fp(a.v_ >= b.v_ ? a.v_ - b.v_ : a.v_ + kModulus - b.v_, Tag{}); }
  friend Fp operator*(Fp a, Fp b) { return Fp(reduce(uint128{a.v_} * b.v_), Tag{}); }
  Fp operator-() const { return Fp(v_ == 0 ? 0 : kModulus - v_, Tag{}); }
  Fp& operator+=(Fp b) { return *this = *this + b; }
  Fp& operator-=(Fp b) { return *this = *this - b; }
  Fp& operator*=(Fp b) { return *this = *this * b; }

  friend constexpr bool operator==(Fp a, Fp b) noexcept { return a.v_ == b.v_; }

 private:
  struct Tag {};
  constexpr Fp(uint64_t v, Tag) : v_(v) {}

  static uint64_t reduce(uint128 x) {
    // 2^61 == 1 (mod p), so fold the high bits down twice.
    uint128 folded = (x & kModulus) + (x >> 61);
    uint64_t y = static_cast<uint64_t>((folded & kModulus) + (folded >> 61));
    return y >= kModulus ? y - kModulus : y;
  }
  static uint64_t reduce_signed(int128 v) {
    if (v >= 0) return reduce(static_cast<uint128>(v));
    uint64_t m = reduce(static_cast<uint128>(-v));
    return m == 0 ? 0 : kModulus - m;
  }

  uint64_t v_ = 0;
};

/// Maps a fixed-point value into F_p; negative raws become p + raw.
/// Throws `kOverflow` unless |raw| < p/2.
Fp encode(Fixed x);
/// Inverse of `encode` on its legal domain.
Fixed decode(Fp e);

std::vector<Fp> encode_vec(std::span<const Fixed> v);
std::vector<Fixed> decode_vec(std::span<const Fp> v);

}  // namespace poc

namespace Eigen {

template <>
struct NumTraits<poc::Fp> : GenericNumTraits<poc::Fp> {
  using Real = poc::Fp;
  using NonInteger = poc::Fp;
  using Nested = poc::Fp;
  using Literal = poc::Fp;
  enum {
    IsComplex = 0,
    IsInteger = 1,
    IsSigned = 0,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 1,
    MulCost = 3
  };
  static inline int digits10() { return 18; }
  static inline poc::Fp epsilon() { return poc::Fp(0); }
  static inline poc::Fp dummy_precision() { return poc::Fp(0); }
  static inline poc::Fp highest() { return poc::Fp::from_canonical(poc::kModulus - 1); }
  static inline poc::Fp lowest() { return poc::Fp(0); }
};

}  // namespace Eigen

namespace poc {

using FpVector = Eigen::Matrix<Fp, Eigen::Dynamic, 1>;
using FpMatrix = Eigen::Matrix<Fp, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Elementwise `encode` over a dense fixed-point expression.
template <typename Derived>
Eigen::Matrix<Fp, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime,
              Derived::IsRowMajor ? Eigen::RowMajor : Eigen::ColMajor>
encode(const Eigen::MatrixBase<Derived>& m) {
  return m.unaryExpr([](const Fixed& x) { return encode(x); });
}

}  // namespace poc
