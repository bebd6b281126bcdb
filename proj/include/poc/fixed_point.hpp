#pragma once

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <iosfwd>

#include "poc/error.hpp"

namespace poc {

using int128 = __int128;
using uint128 = unsigned __int128;

/// Number of fractional bits in every fixed-point value.
inline constexpr int kFracBits = 16;
inline constexpr int64_t kFixedOne = int64_t{1} << kFracBits;
/// Exclusive bound on |raw|.
inline constexpr int64_t kRawLimit = int64_t{1} << 62;

/// Signed fixed-point number: value = raw / 2^kFracBits.
///
/// Arithmetic is checked: any result whose raw magnitude reaches 2^62 raises
/// `Errc::kOverflow` instead of wrapping. Multiplication truncates toward zero.
class Fixed {
 public:
  constexpr Fixed() = default;
  /// Integer value `v` (so `Fixed(1)` is 1.0). Required by Eigen's `Scalar(0)` / `Scalar(1)`.
  explicit Fixed(int v) : raw_(checked(int128{v} << kFracBits)) {}

  static Fixed from_raw(int64_t raw) { return Fixed(checked(raw), RawTag{}); }
  static Fixed from_int(int64_t v) { return Fixed(checked(int128{v} << kFracBits), RawTag{}); }
  /// Rounds to the nearest representable value (ties away from zero).
  static Fixed from_double(double v);
  static Fixed lsb() { return from_raw(1); }

  constexpr int64_t raw() const noexcept { return raw_; }
  double to_double() const noexcept { return static_cast<double>(raw_) / static_cast<double>(kFixedOne); }
  explicit operator double() const noexcept { return to_double(); }

  friend Fixed operator+(Fixed a, Fixed b) { return Fixed(checked(int128{a.raw_} + b.raw_), RawTag{}); }
  friend Fixed operator-(Fixed a, Fixed b) { return Fixed(checked(int128{a.raw_} - b.raw_), RawTag{}); }
  friend Fixed operator*(Fixed a, Fixed b);
  Fixed operator-() const { return Fixed(-raw_, RawTag{}); }
  Fixed& operator+=(Fixed b) { return *this = *this + b; }
  Fixed& operator-=(Fixed b) { return *this = *this - b; }
  Fixed& operator*=(Fixed b) { return *this = *this * b; }

  friend constexpr bool operator==(Fixed a, Fixed b) noexcept { return a.raw_ == b.raw_; }
  friend constexpr auto operator<=>(Fixed a, Fixed b) noexcept { return a.raw_ <=> b.raw_; }

  /// Throws `kOverflow` unless |v| < 2^62.
  static int64_t checked(int128 v);

 private:
  struct RawTag {};
  constexpr Fixed(int64_t raw, RawTag) : raw_(raw) {}

  int64_t raw_ = 0;
};

/// Fixed-point product, truncated toward zero.
Fixed fxp_mul(Fixed a, Fixed b);

std::ostream& operator<<(std::ostream& os, Fixed x);

}  // namespace poc

namespace Eigen {

template <>
struct NumTraits<poc::Fixed> : GenericNumTraits<poc::Fixed> {
  using Real = poc::Fixed;
  using NonInteger = poc::Fixed;
  using Nested = poc::Fixed;
  using Literal = poc::Fixed;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 2,
    MulCost = 4
  };
  static inline int digits10() { return 4; }
  static inline poc::Fixed epsilon() { return poc::Fixed::lsb(); }
  static inline poc::Fixed dummy_precision() { return poc::Fixed::lsb(); }
  static inline poc::Fixed highest() { return poc::Fixed::from_raw(poc::kRawLimit - 1); }
  static inline poc::Fixed lowest() { return poc::Fixed::from_raw(-(poc::kRawLimit - 1)); }
};

}  // namespace Eigen

namespace poc {

using FixedVector = Eigen::Matrix<Fixed, Eigen::Dynamic, 1>;
/// Row-major so the canonical serialization order matches memory order.
using FixedMatrix = Eigen::Matrix<Fixed, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace poc
