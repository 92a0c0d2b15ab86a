//! Scalar special functions shared by the physics modules.
//!
//! Thin wrappers around `libm` plus the few routines the standard library
//! does not provide: the regularized upper incomplete gamma function at
//! integer order and Gauss-Legendre quadrature rules (used as an
//! independent cross-check oracle for the moment recurrences).
//!
//! | Function                | Domain notes                              |
//! |-------------------------|-------------------------------------------|
//! | [`erf`], [`erfc`]       | all of `f64`                              |
//! | [`ln_gamma`]            | positive arguments                        |
//! | [`ln_factorial`]        | any `u64`                                 |
//! | [`reg_upper_gamma_int`] | integer order `a >= 1`, `0 <= x <= 700`   |
//! | [`gauss_legendre`]      | rule order `1..=512`                      |

use alloc::vec::Vec;

/// Error function.
#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Complementary error function, accurate for large positive arguments
/// where `1 - erf(x)` would cancel.
#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Natural logarithm of the gamma function for positive arguments.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    libm::lgamma(x)
}

/// `ln(n!)` without overflow.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Regularized upper incomplete gamma function `Q(a, x)` for integer
/// order `a >= 1`.
///
/// For integer order the function reduces to a finite Poisson tail sum,
///
/// ```text
/// Q(a, x) = exp(-x) * sum_{k=0}^{a-1} x^k / k!
/// ```
///
/// evaluated with a scaled running term so no intermediate overflows. All
/// terms are positive, so the sum is stable in every regime. Requires
/// `x <= 700` so that `exp(-x)` stays normal; callers in this crate have
/// `x = 2 R^2` with detection range `R <= 18`.
pub fn reg_upper_gamma_int(a: u32, x: f64) -> f64 {
    assert!(a >= 1, "order must be a positive integer");
    assert!((0.0..=700.0).contains(&x), "argument out of range: {x}");
    let mut term = libm::exp(-x);
    let mut sum = term;
    for k in 1..a {
        term *= x / k as f64;
        sum += term;
    }
    sum.min(1.0)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre recurrence from the usual
/// Chebyshev-like initial guesses; each root converges in a handful of
/// steps to near machine precision. The rule integrates polynomials up to
/// degree `2n - 1` exactly, which the tests verify on monomials.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!((1..=512).contains(&n), "rule order out of range: {n}");
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            // Ascending Legendre recurrence for P_n(x) and P_{n-1}(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if libm::fabs(dx) < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Integrates `f` over `[lo, hi]` with a fixed-order Gauss-Legendre rule.
pub fn integrate_gl<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for (t, w) in nodes.iter().zip(weights.iter()) {
        acc += w * f(mid + half * t);
    }
    acc * half
}

// ═══════════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════════
