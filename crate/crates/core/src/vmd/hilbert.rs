//! FFT-based analytic signal.

use num_complex::Complex;
use rustfft::FftPlanner;

use super::VmdError;
use crate::scalar::Scalar;

/// Shortest series accepted by [`analytic_signal`].
pub const MIN_ANALYTIC_LEN: usize = 4;

/// `x + j·H[x]`, built by zeroing the negative half of the spectrum and
/// doubling the positive half.
pub fn analytic_signal<T: Scalar>(x: &[T]) -> Result<Vec<Complex<T>>, VmdError> {
    let n = x.len();
    if n < MIN_ANALYTIC_LEN {
        return Err(VmdError::TooShort {
            len: n,
            min: MIN_ANALYTIC_LEN,
        });
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
    planner.plan_fft_forward(n).process(&mut buf);

    let two = T::of(2.0);
    let positive_end = n.div_ceil(2);
    for (k, c) in buf.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == n / 2) {
            continue;
        }
        *c = if k < positive_end { *c * two } else { Complex::new(T::zero(), T::zero()) };
    }

    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = T::one() / T::of(n as f64);
    Ok(buf.into_iter().map(|c| c * scale).collect())
}
