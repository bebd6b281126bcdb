#include "poc/fixed_point.hpp"

#include <cmath>
#include <ostream>

#include "poc/field.hpp"
#include "poc/gadgets.hpp"

namespace poc {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::kOverflow: return "Overflow";
    case Errc::kDomainError: return "DomainError";
    case Errc::kZeroVector: return "ZeroVector";
    case Errc::kLayoutMismatch: return "LayoutMismatch";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kEmptyInput: return "EmptyInput";
    case Errc::kDivergence: return "Divergence";
    case Errc::kInsufficientData: return "InsufficientData";
    case Errc::kMissingPrevious: return "MissingPrevious";
    case Errc::kTooFew: return "TooFew";
    case Errc::kEmptyEval: return "EmptyEval";
    case Errc::kTooManyTrainers: return "TooManyTrainers";
    case Errc::kVerifyFail: return "VerifyFail";
    case Errc::kNotFound: return "NotFound";
    case Errc::kInsufficientDeposit: return "InsufficientDeposit";
    case Errc::kInvalidDescriptor: return "InvalidDescriptor";
    case Errc::kWrongPhase: return "WrongPhase";
    case Errc::kWrongRound: return "WrongRound";
    case Errc::kDuplicateRegistration: return "DuplicateRegistration";
    case Errc::kDuplicateSubmission: return "DuplicateSubmission";
    case Errc::kUnknownTrainer: return "UnknownTrainer";
    case Errc::kUnauthorized: return "Unauthorized";
    case Errc::kMissingTranscript: return "MissingTranscript";
    case Errc::kMalformed: return "Malformed";
    case Errc::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

int64_t Fixed::checked(int128 v) {
  if (v >= kRawLimit || v <= -kRawLimit) throw Error(Errc::kOverflow, "fixed-point magnitude exceeds 2^62");
  return static_cast<int64_t>(v);
}

Fixed Fixed::from_double(double v) {
  if (!std::isfinite(v)) throw Error(Errc::kOverflow, "non-finite value");
  const double scaled = std::round(std::ldexp(v, kFracBits));
  if (std::fabs(scaled) >= std::ldexp(1.0, 62)) throw Error(Errc::kOverflow, "fixed-point magnitude exceeds 2^62");
  return from_raw(static_cast<int64_t>(scaled));
}

Fixed operator*(Fixed a, Fixed b) {
  // int128 division truncates toward zero.
  const int128 wide = int128{a.raw_} * b.raw_;
  return Fixed(Fixed::checked(wide / kFixedOne), Fixed::RawTag{});
}

Fixed fxp_mul(Fixed a, Fixed b) { return a * b; }

std::ostream& operator<<(std::ostream& os, Fixed x) { return os << x.to_double(); }

// ---- field ----

Fp Fp::from_canonical(uint64_t v) {
  if (v >= kModulus) throw Error(Errc::kMalformed, "field element not below modulus");
  return Fp(v, Tag{});
}

Fp encode(Fixed x) {
  constexpr int64_t half = static_cast<int64_t>(kModulus / 2);
  const int64_t raw = x.raw();
  if (raw > half || raw < -half) throw Error(Errc::kOverflow, "fixed-point value outside field encoding range");
  return Fp::from_int(raw);
}

Fixed decode(Fp e) {
  constexpr uint64_t half = kModulus / 2;
  const uint64_t v = e.value();
  return v <= half ? Fixed::from_raw(static_cast<int64_t>(v)) : Fixed::from_raw(-static_cast<int64_t>(kModulus - v));
}

std::vector<Fp> encode_vec(std::span<const Fixed> v) {
  std::vector<Fp> out;
  out.reserve(v.size());
  for (Fixed x : v) out.push_back(encode(x));
  return out;
}

std::vector<Fixed> decode_vec(std::span<const Fp> v) {
  std::vector<Fixed> out;
  out.reserve(v.size());
  for (Fp e : v) out.push_back(decode(e));
  return out;
}

// ---- gadgets ----

int64_t isqrt(int128 y) {
  if (y < 0) throw Error(Errc::kDomainError, "square root of a negative value");
  auto x = static_cast<int128>(std::sqrt(static_cast<long double>(y)));
  while (x * x > y) --x;
  while ((x + 1) * (x + 1) <= y) ++x;
  return static_cast<int64_t>(x);
}

bool check_isqrt(int128 y, int64_t x) {
  if (x < 0 || y < 0) return false;
  const int128 lo = int128{x} * x;
  const int128 hi = (int128{x} + 1) * (int128{x} + 1);
  return lo <= y && y < hi;
}

DivMod floor_divmod(int128 numerator, int64_t divisor) {
  if (divisor <= 0) throw Error(Errc::kDomainError, "divisor must be positive");
  int128 q = numerator / divisor;
  int128 r = numerator % divisor;
  if (r < 0) {
    q -= 1;
    r += divisor;
  }
  if (q >= kRawLimit || q <= -kRawLimit) throw Error(Errc::kOverflow, "quotient exceeds 2^62");
  return {static_cast<int64_t>(q), static_cast<int64_t>(r)};
}

bool check_divmod(int128 numerator, int64_t divisor, int64_t quotient, int64_t remainder) {
  if (divisor <= 0) throw Error(Errc::kDomainError, "divisor must be positive");
  if (remainder < 0 || remainder >= divisor) return false;
  return int128{divisor} * quotient + remainder == numerator;
}

bool check_sqrt(Fixed y, Fixed x) {
  if (y.raw() < 0) throw Error(Errc::kDomainError, "square root of a negative value");
  return check_isqrt(int128{y.raw()} << kFracBits, x.raw());
}

Fixed prove_sqrt(Fixed y) {
  if (y.raw() < 0) throw Error(Errc::kDomainError, "square root of a negative value");
  return Fixed::from_raw(isqrt(int128{y.raw()} << kFracBits));
}

bool check_div(Fixed a, Fixed b, Fixed c, int64_t r) {
  if (b.raw() <= 0) throw Error(Errc::kDomainError, "divisor must be positive");
  return check_divmod(int128{a.raw()} << kFracBits, b.raw(), c.raw(), r);
}

DivWitness prove_div(Fixed a, Fixed b) {
  const DivMod dm = floor_divmod(int128{a.raw()} << kFracBits, b.raw());
  return {Fixed::from_raw(dm.quotient), dm.remainder};
}

}  // namespace poc
