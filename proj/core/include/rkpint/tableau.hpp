#pragma once

// Fully implicit Runge-Kutta tableaux of the three collocation families used
// throughout this project, plus the SVD-based factorization of the coefficient
// matrix that drives the stage preconditioner.

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "rkpint/dense.hpp"

namespace rkpint {

enum class RkFamily { Gauss, RadauIIA, LobattoIIIC };

std::string family_name(RkFamily f);
/// Accepts "gauss", "radauiia"/"radau", "lobattoiiic"/"lobatto" (any case).
RkFamily parse_family(const std::string& name);

struct ButcherTableau {
  RkFamily family = RkFamily::Gauss;
  std::size_t stages = 0;
  DenseMatrix a;           // s x s, nonsingular for these families
  std::vector<double> b;   // quadrature weights, all positive
  std::vector<double> c;   // abscissae in [0,1], strictly ascending
  int order = 0;           // classical order: 2s, 2s-1, 2s-2
  bool stiffly_accurate = false;  // last row of A equals b
};

/// Construct a tableau. Supported: Gauss s>=1, Radau IIA s>=1, Lobatto IIIC
/// s>=2, all up to s=12.  Nodes come from companion-matrix eigenvalues of the
/// family's node polynomial, polished by three Newton steps in long double;
/// coefficients from collocation / quadrature Vandermonde solves.
ButcherTableau make_tableau(RkFamily family, std::size_t stages);

struct RkSvdFactors {
  DenseMatrix u;                                 // orthogonal
  std::vector<double> sigma;                     // descending, positive
  DenseMatrix v;                                 // orthogonal, A = U S V^T
  DenseMatrix w;                                 // W = U^T V, orthogonal
  std::vector<std::complex<double>> w_spectrum;  // on the unit circle
  double min_real_w = 0.0;  // min Re(lambda(W)); sign decides the inclusion theorem
};

RkSvdFactors rk_factorization(const ButcherTableau& t);

// Spectrum-of-W invariance under the SVD sign ambiguity.  When all singular
// values are distinct, any valid SVD differs only by simultaneous column sign
// flips of U and V, so the spectrum of U^T V is well defined; this check
// enumerates sign patterns and reports the worst spectral discrepancy.
struct PolarInvarianceResult {
  bool applicable = false;      // false: singular values too close to resolve
  std::size_t trials = 0;       // sign patterns actually tested
  double max_discrepancy = 0.0; // max over patterns of matched-eigenvalue distance
};
PolarInvarianceResult polar_invariance_check(const ButcherTableau& t,
                                             std::size_t trials);

}  // namespace rkpint
