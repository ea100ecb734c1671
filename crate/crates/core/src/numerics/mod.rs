//! Shared numerical substrate: tensors, the reverse-mode tape, a pinned
//! RNG, frequency encoding, smooth-L1 and the finite-difference oracle used
//! by every other module's gradient tests.

pub mod dense;
pub mod graph;
pub mod real;
pub mod rng;
pub mod tensor;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use graph::{Gradients, Graph, NodeId};
pub use real::{Dtype, Real};
pub use rng::Rng;
pub use tensor::{ShapeError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// The probed function produced a non-finite value.
    NonFinite { coordinate: usize },
    BadArg(String),
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::NonFinite { coordinate } => {
                write!(f, "non-finite function value while probing coordinate {coordinate}")
            }
            NumericsError::BadArg(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for NumericsError {}

/// Frequency encoding of a vector: concat(x, sin(2^k x), cos(2^k x)) for
/// k = 0..n_freq, column-major over k with sin before cos. Output length is
/// d * (1 + 2 * n_freq).
pub fn pos_encode<T: Real>(x: &[T], n_freq: usize) -> Vec<T> {
    let d = x.len();
    let mut out = alloc::vec![T::zero(); d * (1 + 2 * n_freq)];
    pos_encode_into(x, n_freq, &mut out);
    out
}

pub(crate) fn pos_encode_into<T: Real>(x: &[T], n_freq: usize, out: &mut [T]) {
    let d = x.len();
    out[..d].copy_from_slice(x);
    for k in 0..n_freq {
        let f = T::lit((1u64 << k) as f64);
        for (j, &xj) in x.iter().enumerate() {
            let a = f * xj;
            out[d + 2 * k * d + j] = a.sin();
            out[d + (2 * k + 1) * d + j] = a.cos();
        }
    }
}

/// Smooth L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise. C1 at |x| = 1.
pub fn smooth_l1<T: Real>(x: T) -> T {
    let a = x.abs();
    if a < T::one() {
        T::lit(0.5) * x * x
    } else {
        a - T::lit(0.5)
    }
}

/// Central-difference gradient estimate, one probe pair per coordinate.
pub fn finite_diff_grad<T: Real>(
    mut f: impl FnMut(&[T]) -> T,
    x: &[T],
    h: f64,
) -> Result<Vec<T>, NumericsError> {
    let step = T::lit(h);
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFinite { coordinate: i });
        }
        grad.push((plus - minus) / (T::lit(2.0) * step));
    }
    Ok(grad)
}

/// Worst relative disagreement between an analytic and a numeric gradient.
///
/// Per coordinate: |a - n| / max(1, |a|, |n|), which degrades to an absolute
/// comparison near zero where central differences are noise-limited.
pub fn max_rel_err<T: Real>(analytic: &[T], numeric: &[T]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = 1f64.max(a.f64().abs()).max(n.f64().abs());
        let rel = (a.f64() - n.f64()).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

/// Convenience: check a tape-built scalar loss against central differences
/// over one flattened parameter vector. `build` must evaluate the loss at
/// the supplied parameter values and (when asked) return the analytic
/// gradient as well.
pub fn check_gradient<T: Real>(
    mut loss: impl FnMut(&[T]) -> T,
    analytic: &[T],
    at: &[T],
    h: f64,
    rel_tol: f64,
) -> Result<f64, NumericsError> {
    let numeric = finite_diff_grad(&mut loss, at, h)?;
    let err = max_rel_err(analytic, &numeric);
    if err > rel_tol {
        return Err(NumericsError::BadArg(alloc::format!(
            "gradient mismatch: worst rel err {err:.3e} > {rel_tol:.1e}"
        )));
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn pos_encode_zero_input() {
        let out = pos_encode(&[0.0f64, 0.0, 0.0], 6);
        assert_eq!(out.len(), 39);
        assert!(out[..3].iter().all(|&v| v == 0.0));
        for k in 0..6 {
            for j in 0..3 {
                assert_eq!(out[3 + 2 * k * 3 + j], 0.0, "sin block");
                assert_eq!(out[3 + (2 * k + 1) * 3 + j], 1.0, "cos block");
            }
        }
    }

    #[test]
    fn pos_encode_pi() {
        let out = pos_encode(&[core::f64::consts::PI], 1);
        assert_eq!(out.len(), 3);
        assert!((out[0] - core::f64::consts::PI).abs() < 1e-15);
        assert!(out[1].abs() < 1e-12); // sin(pi)
        assert!((out[2] + 1.0).abs() < 1e-12); // cos(pi)
    }

    #[test]
    fn pos_encode_length_three_by_four() {
        assert_eq!(pos_encode(&[0.1f64, 0.2, 0.3], 4).len(), 27);
    }

    #[test]
    fn pos_encode_per_band_lipschitz_bound() {
        // d out_k / d x_j is bounded by 2^(n_freq - 1) per band.
        let n_freq = 5;
        let bound = (1u64 << (n_freq - 1)) as f64;
        let mut rng = crate::numerics::rng::Rng::new(11);
        for _ in 0..200 {
            let x: f64 = rng.range(-3.0, 3.0);
            // Per-band derivatives via central differences on each output.
            let enc = |v: f64| pos_encode(&[v], n_freq);
            let h = 1e-6;
            let up = enc(x + h);
            let dn = enc(x - h);
            for (u, d) in up.iter().zip(&dn) {
                let deriv = (u - d) / (2.0 * h);
                assert!(deriv.abs() <= bound + 1e-4, "deriv {deriv} exceeds {bound}");
            }
        }
    }

    #[test]
    fn smooth_l1_known_values() {
        assert_eq!(smooth_l1(0.0f64), 0.0);
        assert_eq!(smooth_l1(0.5f64), 0.125);
        assert_eq!(smooth_l1(2.0f64), 1.5);
    }

    #[test]
    fn finite_diff_on_square() {
        let g = finite_diff_grad(|v: &[f64]| v[0] * v[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_on_constant_is_zero() {
        let g = finite_diff_grad(|_: &[f64]| 7.25, &[1.0, -2.0, 3.0], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_of_smooth_l1_past_knee() {
        let g = finite_diff_grad(|v: &[f64]| smooth_l1(v[0]), &[2.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_propagates_non_finite() {
        let r = finite_diff_grad(|v: &[f64]| (v[0] - 1.0).ln(), &[1.0], 1e-5);
        assert!(matches!(r, Err(NumericsError::NonFinite { .. })));
    }

    proptest! {
        #[test]
        fn smooth_l1_is_even(x in -50.0f64..50.0) {
            prop_assert_eq!(smooth_l1(x), smooth_l1(-x));
        }

        #[test]
        fn smooth_l1_nonnegative(x in -50.0f64..50.0) {
            prop_assert!(smooth_l1(x) >= 0.0);
        }
    }

    #[test]
    fn smooth_l1_c1_at_knee() {
        // value and first derivative agree across |x| = 1
        let eps = 1e-7f64;
        assert!((smooth_l1(1.0 - eps) - smooth_l1(1.0 + eps)).abs() < 1e-6);
        let g_in = finite_diff_grad(|v: &[f64]| smooth_l1(v[0]), &[1.0 - 1e-4], 1e-6).unwrap();
        let g_out = finite_diff_grad(|v: &[f64]| smooth_l1(v[0]), &[1.0 + 1e-4], 1e-6).unwrap();
        assert!((g_in[0] - g_out[0]).abs() < 1e-3);
    }
}
