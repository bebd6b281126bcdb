#pragma once

#include <cstdint>

#include "poc/fixed_point.hpp"

// Witness-checking gadgets. Each `check_*` is the relation a verifier
// enforces; each `prove_*` produces the unique witness that satisfies it.

namespace poc {

/// floor(sqrt(y)) for y >= 0.
int64_t isqrt(int128 y);
/// x*x <= y < (x+1)*(x+1), with x >= 0.
bool check_isqrt(int128 y, int64_t x);

struct DivMod {
  int64_t quotient;
  int64_t remainder;
};

/// Floor division: numerator == divisor*quotient + remainder, 0 <= remainder < divisor.
/// Throws `kDomainError` if divisor <= 0 and `kOverflow` if the quotient does not fit.
DivMod floor_divmod(int128 numerator, int64_t divisor);
bool check_divmod(int128 numerator, int64_t divisor, int64_t quotient, int64_t remainder);

/// True iff x.raw^2 <= y.raw*2^f < (x.raw+1)^2. Throws `kDomainError` if y < 0.
bool check_sqrt(Fixed y, Fixed x);
/// The unique x accepted by `check_sqrt(y, x)`.
Fixed prove_sqrt(Fixed y);

struct DivWitness {
  Fixed quotient;
  int64_t remainder;
};

/// True iff a.raw*2^f == b.raw*c.raw + r and 0 <= r < b.raw.
/// Throws `kDomainError` if b <= 0.
bool check_div(Fixed a, Fixed b, Fixed c, int64_t r);
DivWitness prove_div(Fixed a, Fixed b);

}  // namespace poc
