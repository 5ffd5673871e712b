//! Controllable canonical realization of a strictly proper transfer function.

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::kernel::StateSpace;
use crate::linalg::Matrix;

type C64 = Complex<f64>;

/// Probe points for checking a realization against its transfer function,
/// kept off the imaginary axis where lightly damped poles live.
const PROBES: [(f64, f64); 5] = [(0.5, 0.3), (0.7, 1.1), (1.3, -0.4), (0.2, 2.9), (2.1, 0.8)];

fn strip_leading_zeros(coeffs: &[f64]) -> &[f64] {
    let first = coeffs.iter().position(|&c| c != 0.0).unwrap_or(coeffs.len());
    &coeffs[first..]
}

/// Evaluates a polynomial with coefficients ordered from the highest power.
fn polyval(coeffs: &[f64], s: C64) -> C64 {
    coeffs
        .iter()
        .fold(C64::new(0.0, 0.0), |acc, &c| acc * s + C64::new(c, 0.0))
}

/// Realizes `num(s) / den(s)` (coefficients from the highest power) on the
/// horizon `[0, T]`.
///
/// The result is the companion form with `B = e_n`:
///
/// ```text
///     A = [  0    1    0  …   0      ]      C = [b_0  b_1  …  b_{n-1}]
///         [  ⋮              ⋱        ]
///         [ -a_0 -a_1 -a_2 … -a_{n-1}]
/// ```
///
/// for the monic denominator `sⁿ + a_{n-1}sⁿ⁻¹ + … + a_0`.
pub fn parse_transfer_function(numerator: &[f64], denominator: &[f64], horizon: f64) -> Result<StateSpace> {
    if numerator.iter().chain(denominator).any(|c| !c.is_finite()) {
        return Err(Error::Validation(
            "transfer function coefficients must be finite".into(),
        ));
    }
    let Some(&lead) = denominator.first() else {
        return Err(Error::Validation("denominator is empty".into()));
    };
    if lead == 0.0 {
        return Err(Error::Validation(
            "denominator leading coefficient must be nonzero".into(),
        ));
    }
    let num = strip_leading_zeros(numerator);
    if num.is_empty() {
        return Err(Error::Validation("numerator is identically zero".into()));
    }
    let n = denominator.len() - 1;
    if num.len() > n {
        return Err(Error::Validation(format!(
            "transfer function must be strictly proper: numerator degree {} vs denominator degree {n}",
            num.len() - 1
        )));
    }

    let mut a = Matrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        // a_j multiplies s^j; denominator[n - j] is that coefficient
        // `+ 0.0` turns -0.0 into 0.0 for tidier output
        a[(n - 1, j)] = -denominator[n - j] / lead + 0.0;
    }
    let mut b = Matrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    let mut c = Matrix::zeros(1, n);
    for (k, &coef) in num.iter().rev().enumerate() {
        c[(0, k)] = coef / lead;
    }
    let sys = StateSpace::new(a, b, c, horizon)?;
    check_realization(&sys, num, denominator)?;
    Ok(sys)
}

/// `C (sI - A)⁻¹ B`.
pub fn frequency_response(sys: &StateSpace, s: C64) -> Result<C64> {
    let n = sys.order();
    let a = sys.a().map(|v| C64::new(v, 0.0));
    let b = sys.b().map(|v| C64::new(v, 0.0));
    let c = sys.c().map(|v| C64::new(v, 0.0));
    let resolvent = nalgebra::DMatrix::<C64>::identity(n, n) * s - a;
    let x = resolvent
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Domain(format!("s = {s} is an eigenvalue of A")))?;
    Ok((c * x)[(0, 0)])
}

fn check_realization(sys: &StateSpace, num: &[f64], den: &[f64]) -> Result<()> {
    for &(re, im) in &PROBES {
        let s = C64::new(re, im);
        let den_s = polyval(den, s);
        if den_s.norm() < 1e-8 {
            continue;
        }
        let expected = polyval(num, s) / den_s;
        let got = frequency_response(sys, s)?;
        if (got - expected).norm() > 1e-8 * expected.norm().max(1e-300) {
            return Err(Error::Validation(format!(
                "realization mismatch at s = {s}: {got} vs {expected}"
            )));
        }
    }
    Ok(())
}
