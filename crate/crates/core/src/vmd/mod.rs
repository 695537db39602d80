//! Variational mode decomposition.
//!
//! Each series is mirror-extended, transformed, and split into band-limited
//! modes by alternating Wiener-filter updates in the one-sided spectrum.
//! Center frequencies are in cycles per sample, so they lie in `[0, 0.5]`.

mod hilbert;
pub mod io;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hilbert::{analytic_signal, MIN_ANALYTIC_LEN};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VmdError {
    #[error("series of length {len} is too short; need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("invalid decomposition config: {0}")]
    InvalidConfig(String),
    #[error("turbine {turbine}: {source}")]
    Turbine {
        turbine: usize,
        #[source]
        source: Box<VmdError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FreqInit {
    /// `ω_i = 0.5·i/M`
    #[default]
    Uniform,
    Zero,
    /// Uniform draws on `[0, 0.5)` from `VmdConfig::seed`, sorted.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmdConfig {
    pub num_modes: usize,
    /// Bandwidth penalty.
    pub alpha: f64,
    /// Dual ascent step; 0 disables exact reconstruction.
    pub tau: f64,
    /// Threshold on relative mode change between sweeps.
    pub tol: f64,
    pub max_iters: usize,
    pub init: FreqInit,
    pub seed: u64,
    /// Record the relative reconstruction error after every sweep.
    pub trace: bool,
}

impl Default for VmdConfig {
    fn default() -> Self {
        Self {
            num_modes: 7,
            alpha: 2000.0,
            tau: 0.0,
            tol: 1e-7,
            max_iters: 500,
            init: FreqInit::Uniform,
            seed: 0,
            trace: false,
        }
    }
}

impl VmdConfig {
    pub fn with_modes(num_modes: usize) -> Self {
        Self {
            num_modes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), VmdError> {
        let bad = |m: &str| Err(VmdError::InvalidConfig(m.to_string()));
        if self.num_modes == 0 {
            return bad("num_modes must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be non-negative");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        Ok(())
    }

    /// Shortest series this config accepts.
    pub fn min_len(&self) -> usize {
        8 * self.num_modes
    }

    /// Half-power half-width of the mode filter, in cycles per sample.
    pub fn bandwidth(&self) -> f64 {
        1.0 / (2.0 * self.alpha).sqrt()
    }
}

/// Decomposition of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct ImfSet<T> {
    /// One series per mode, ordered by ascending center frequency.
    pub modes: Vec<Vec<T>>,
    pub center_freqs: Vec<T>,
    /// `input − Σ modes`.
    pub residual: Vec<T>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Relative spectral reconstruction error per sweep, when traced.
    pub trace: Vec<f64>,
}

impl<T: Scalar> ImfSet<T> {
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }

    /// Sum of all modes at each step.
    pub fn reconstruction(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        for mode in &self.modes {
            for (o, &v) in out.iter_mut().zip(mode) {
                *o += v;
            }
        }
        out
    }
}

/// Reusable decomposition context that caches FFT plans.
pub struct Decomposer<T: Scalar> {
    planner: FftPlanner<T>,
}

impl<T: Scalar> Default for Decomposer<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Decomposer<T> {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
        }
    }

    pub fn decompose(&mut self, x: &[T], cfg: &VmdConfig) -> Result<ImfSet<T>, VmdError> {
        cfg.validate()?;
        let len = x.len();
        if len < cfg.min_len() {
            return Err(VmdError::TooShort {
                len,
                min: cfg.min_len(),
            });
        }
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(VmdError::NonFinite { index });
        }

        let half = len / 2;
        let mut spectrum: Vec<Complex<T>> = x[..half]
            .iter()
            .rev()
            .chain(x)
            .chain(x[len - half..].iter().rev())
            .map(|&v| Complex::new(v, T::zero()))
            .collect();
        let t = spectrum.len();
        self.planner.plan_fft_forward(t).process(&mut spectrum);

        // one-sided bins 0..=t/2
        let bins = t / 2 + 1;
        let signal = &spectrum[..bins];
        let freqs: Vec<T> = (0..bins).map(|k| T::of(k as f64 / t as f64)).collect();
        let m = cfg.num_modes;
        let zero = Complex::new(T::zero(), T::zero());

        let mut omega = initial_freqs::<T>(cfg);
        let mut modes = vec![vec![zero; bins]; m];
        let mut total = vec![zero; bins];
        let mut dual = vec![zero; bins];
        let two_alpha = T::of(2.0 * cfg.alpha);
        let half_t = T::of(0.5);
        let tau = T::of(cfg.tau);
        let signal_energy: T = signal.iter().map(|c| c.norm_sqr()).fold(T::zero(), |a, b| a + b);

        let mut iterations = 0;
        let mut converged = false;
        let mut trace = Vec::new();
        while iterations < cfg.max_iters {
            iterations += 1;
            let mut change = T::zero();
            let mut previous = T::zero();
            for i in 0..m {
                let (mut num, mut den) = (T::zero(), T::zero());
                let w = omega[i];
                for k in 0..bins {
                    let old = modes[i][k];
                    let others = total[k] - old;
                    let d = freqs[k] - w;
                    let new = (signal[k] - others + dual[k] * half_t) / (T::one() + two_alpha * d * d);
                    modes[i][k] = new;
                    total[k] = others + new;
                    change += (new - old).norm_sqr();
                    previous += old.norm_sqr();
                    let p = new.norm_sqr();
                    num += freqs[k] * p;
                    den += p;
                }
                if den > T::zero() {
                    omega[i] = num / den;
                }
            }
            if tau > T::zero() {
                for k in 0..bins {
                    dual[k] += (signal[k] - total[k]) * tau;
                }
            }
            if cfg.trace {
                let err: T = (0..bins)
                    .map(|k| (signal[k] - total[k]).norm_sqr())
                    .fold(T::zero(), |a, b| a + b);
                let denom = signal_energy.max(T::min_positive_value());
                trace.push((err / denom).sqrt().as_f64());
            }
            if previous > T::zero() && change / previous < T::of(cfg.tol) {
                converged = true;
                break;
            }
            if change == T::zero() {
                // all-zero input: nothing moves
                converged = true;
                break;
            }
        }

        let inverse = self.planner.plan_fft_inverse(t);
        let scale = T::one() / T::of(t as f64);
        let mut time_modes: Vec<Vec<T>> = Vec::with_capacity(m);
        let mut full = vec![zero; t];
        for mode in &modes {
            full.fill(zero);
            full[..bins].copy_from_slice(mode);
            full[0].im = T::zero();
            if t % 2 == 0 {
                full[t / 2].im = T::zero();
            }
            for k in 1..t.div_ceil(2) {
                full[t - k] = mode[k].conj();
            }
            inverse.process(&mut full);
            time_modes.push(full[half..half + len].iter().map(|c| c.re * scale).collect());
        }

        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| omega[a].partial_cmp(&omega[b]).expect("finite frequencies"));
        let modes: Vec<Vec<T>> = order.iter().map(|&i| std::mem::take(&mut time_modes[i])).collect();
        let center_freqs: Vec<T> = order.iter().map(|&i| omega[i]).collect();

        let mut residual = x.to_vec();
        for mode in &modes {
            for (r, &v) in residual.iter_mut().zip(mode) {
                *r -= v;
            }
        }
        Ok(ImfSet {
            modes,
            center_freqs,
            residual,
            iterations_used: iterations,
            converged,
            trace,
        })
    }
}

fn initial_freqs<T: Scalar>(cfg: &VmdConfig) -> Vec<T> {
    let m = cfg.num_modes;
    match cfg.init {
        FreqInit::Uniform => (0..m).map(|i| T::of(0.5 * i as f64 / m as f64)).collect(),
        FreqInit::Zero => vec![T::zero(); m],
        FreqInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..0.5)).collect();
            w.sort_by(f64::total_cmp);
            w.into_iter().map(T::of).collect()
        }
    }
}

/// Decomposes a single series.
pub fn vmd_decompose<T: Scalar>(x: &[T], cfg: &VmdConfig) -> Result<ImfSet<T>, VmdError> {
    Decomposer::new().decompose(x, cfg)
}

/// Per-turbine decompositions of a `P×N` matrix whose columns are series.
#[derive(Debug, Clone)]
pub struct StackedImfs<T> {
    /// `P×N×M`
    pub imfs: Tensor<T>,
    pub sets: Vec<ImfSet<T>>,
}

/// Decomposes every column of `x` independently, in parallel.
pub fn decompose_all<T: Scalar>(x: &Tensor<T>, cfg: &VmdConfig) -> Result<StackedImfs<T>, VmdError> {
    if x.rank() != 2 {
        return Err(VmdError::InvalidConfig(format!(
            "expected a P×N matrix, got shape {:?}",
            x.shape()
        )));
    }
    let (p, n) = (x.rows(), x.cols());
    let sets = (0..n)
        .into_par_iter()
        .map_init(Decomposer::new, |d, j| {
            d.decompose(&x.column(j), cfg).map_err(|e| VmdError::Turbine {
                turbine: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m = cfg.num_modes;
    let imfs = Tensor::from_fn(&[p, n, m], |idx| {
        let (t, rest) = (idx / (n * m), idx % (n * m));
        sets[rest / m].modes[rest % m][t]
    });
    Ok(StackedImfs { imfs, sets })
}
