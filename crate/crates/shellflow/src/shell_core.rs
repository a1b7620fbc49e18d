//! Shell states, wavenumbers and the norm hierarchy H, V, V'.
//!
//! A state is a finite vector of complex shell amplitudes `u_1 .. u_N` with
//! wavenumbers `k_n = k0 * 2^n`. The bilinear stencils reference neighbours
//! `n-2 .. n+2`, with the convention that `u_{-1} = u_0 = 0` below the first
//! shell and `u_{N+1} = u_{N+2} = 0` above the truncation. Amplitudes are
//! stored padded with two zero cells on each side so that stencil kernels
//! never branch on the boundary.

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShellError};

pub const MIN_SHELLS: usize = 4;
const PAD: usize = 2;

/// `k_n = k0 * 2^n` for `n >= 1`.
pub fn wavenumber(n: usize, k0: f64) -> Result<f64> {
    if n < 1 {
        return Err(ShellError::Domain(format!("shell index must be >= 1, got {n}")));
    }
    Ok(k0 * 2f64.powi(n as i32))
}

/// Vector of N complex shell amplitudes, zero-padded at both boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellState {
    // len = n + 2*PAD, active cells at PAD .. PAD+n, pad cells identically zero
    padded: Vec<Complex64>,
    n: usize,
}

impl ShellState {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let n = amplitudes.len();
        if n < MIN_SHELLS {
            return Err(ShellError::Domain(format!(
                "need at least {MIN_SHELLS} shells, got {n}"
            )));
        }
        for (i, a) in amplitudes.iter().enumerate() {
            if !a.re.is_finite() || !a.im.is_finite() {
                return Err(ShellError::Domain(format!(
                    "non-finite amplitude at shell {}",
                    i + 1
                )));
            }
        }
        let mut padded = vec![Complex64::ZERO; n + 2 * PAD];
        padded[PAD..PAD + n].copy_from_slice(&amplitudes);
        Ok(Self { padded, n })
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n >= MIN_SHELLS, "need at least {MIN_SHELLS} shells");
        Self { padded: vec![Complex64::ZERO; n + 2 * PAD], n }
    }

    /// Unit vector e_m (1-based shell index).
    pub fn unit(n: usize, m: usize) -> Self {
        let mut s = Self::zeros(n);
        assert!((1..=n).contains(&m), "shell index out of range");
        s.padded[PAD + m - 1] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn n_shells(&self) -> usize {
        self.n
    }

    /// Active amplitudes u_1 .. u_N.
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.padded[PAD..PAD + self.n]
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.padded[PAD..PAD + self.n]
    }

    /// Amplitude at 1-based shell index `n` in `-1 ..= N+2`; the virtual cells are zero.
    #[inline]
    pub fn at(&self, n: i64) -> Complex64 {
        debug_assert!(n >= -(PAD as i64 - 1) && n <= (self.n + PAD) as i64);
        self.padded[(n + PAD as i64 - 1) as usize]
    }

    /// Padded backing slice; index `n` lives at slot `n + PAD - 1`.
    #[inline]
    pub(crate) fn padded(&self) -> &[Complex64] {
        &self.padded
    }

    pub fn is_finite(&self) -> bool {
        self.amplitudes().iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// |u|_H^2 = sum |u_n|^2.
    pub fn norm_h_sq(&self) -> f64 {
        self.amplitudes().iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm_h(&self) -> f64 {
        self.norm_h_sq().sqrt()
    }

    /// ||u||_V^2 = sum k_n^2 |u_n|^2.
    pub fn norm_v_sq(&self, k0: f64) -> f64 {
        let mut k = k0;
        let mut acc = 0.0;
        for a in self.amplitudes() {
            k *= 2.0;
            acc += k * k * a.norm_sqr();
        }
        acc
    }

    pub fn norm_v(&self, k0: f64) -> f64 {
        self.norm_v_sq(k0).sqrt()
    }

    /// |u|_{V'}^2 = sum k_n^{-2} |u_n|^2.
    pub fn norm_v_prime_sq(&self, k0: f64) -> f64 {
        let mut k = k0;
        let mut acc = 0.0;
        for a in self.amplitudes() {
            k *= 2.0;
            acc += a.norm_sqr() / (k * k);
        }
        acc
    }

    pub fn norm_v_prime(&self, k0: f64) -> f64 {
        self.norm_v_prime_sq(k0).sqrt()
    }

    /// <u, v>_H = Re sum u_n conj(v_n).
    pub fn inner_h(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.n, other.n);
        self.amplitudes()
            .iter()
            .zip(other.amplitudes())
            .map(|(a, b)| (a * b.conj()).re)
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for a in out.amplitudes_mut() {
            *a *= c;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_n(self.n, other.n)?;
        let mut out = self.clone();
        for (a, b) in out.amplitudes_mut().iter_mut().zip(other.amplitudes()) {
            *a += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_n(self.n, other.n)?;
        let mut out = self.clone();
        for (a, b) in out.amplitudes_mut().iter_mut().zip(other.amplitudes()) {
            *a -= b;
        }
        Ok(out)
    }

    /// self + c * other.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        check_n(self.n, other.n)?;
        let mut out = self.clone();
        for (a, b) in out.amplitudes_mut().iter_mut().zip(other.amplitudes()) {
            *a += c * b;
        }
        Ok(out)
    }

    /// One CSV row: re_1,im_1,...,re_N,im_N.
    pub fn to_csv_row(&self) -> String {
        let mut row = String::new();
        for (i, a) in self.amplitudes().iter().enumerate() {
            if i > 0 {
                row.push(',');
            }
            let _ = write!(row, "{},{}", a.re, a.im);
        }
        row
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.trim().split(',').collect();
        if fields.len() % 2 != 0 {
            return Err(ShellError::Domain(format!(
                "state row must hold 2N reals, got {} fields",
                fields.len()
            )));
        }
        let mut amps = Vec::with_capacity(fields.len() / 2);
        for pair in fields.chunks(2) {
            let re: f64 = pair[0]
                .trim()
                .parse()
                .map_err(|e| ShellError::Domain(format!("bad real part {:?}: {e}", pair[0])))?;
            let im: f64 = pair[1]
                .trim()
                .parse()
                .map_err(|e| ShellError::Domain(format!("bad imag part {:?}: {e}", pair[1])))?;
            amps.push(Complex64::new(re, im));
        }
        Self::new(amps)
    }
}

fn check_n(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(ShellError::DimensionMismatch { left, right });
    }
    Ok(())
}

/// (A^alpha u)_n = k_n^{2 alpha} u_n.
pub fn apply_a_alpha(x: &ShellState, alpha_exp: f64, k0: f64) -> ShellState {
    assert!(alpha_exp >= 0.0, "alpha exponent must be nonnegative");
    let mut out = x.clone();
    let mut k = k0;
    for a in out.amplitudes_mut() {
        k *= 2.0;
        *a *= k.powf(2.0 * alpha_exp);
    }
    out
}

/// Pair (u, w) in the product space H~ = H x H.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub u: ShellState,
    pub w: ShellState,
}

impl CoupledState {
    pub fn new(u: ShellState, w: ShellState) -> Result<Self> {
        check_n(u.n_shells(), w.n_shells())?;
        Ok(Self { u, w })
    }

    pub fn zeros(n: usize) -> Self {
        Self { u: ShellState::zeros(n), w: ShellState::zeros(n) }
    }

    /// Both components equal; used for diagonal data and the noise state.
    pub fn diagonal(x: ShellState) -> Self {
        Self { u: x.clone(), w: x }
    }

    pub fn n_shells(&self) -> usize {
        self.u.n_shells()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.w.is_finite()
    }

    pub fn norm_h_sq(&self) -> f64 {
        self.u.norm_h_sq() + self.w.norm_h_sq()
    }

    pub fn norm_h(&self) -> f64 {
        self.norm_h_sq().sqrt()
    }

    pub fn norm_v_sq(&self, k0: f64) -> f64 {
        self.u.norm_v_sq(k0) + self.w.norm_v_sq(k0)
    }

    pub fn norm_v(&self, k0: f64) -> f64 {
        self.norm_v_sq(k0).sqrt()
    }

    pub fn inner_h(&self, other: &Self) -> f64 {
        self.u.inner_h(&other.u) + self.w.inner_h(&other.w)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self { u: self.u.sub(&other.u)?, w: self.w.sub(&other.w)? })
    }

    pub fn distance_h(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.norm_h())
    }

    /// Two consecutive CSV rows tagged "u" and "w".
    pub fn to_csv_rows(&self) -> String {
        format!("u,{}\nw,{}", self.u.to_csv_row(), self.w.to_csv_row())
    }

    pub fn from_csv_rows(row_u: &str, row_w: &str) -> Result<Self> {
        let strip = |row: &str, tag: &str| -> Result<ShellState> {
            let rest = row
                .trim()
                .strip_prefix(tag)
                .and_then(|r| r.strip_prefix(','))
                .ok_or_else(|| {
                    ShellError::Domain(format!("expected row tagged {tag:?}: {row:?}"))
                })?;
            ShellState::from_csv_row(rest)
        };
        Self::new(strip(row_u, "u")?, strip(row_w, "w")?)
    }
}

/// q^lambda = u + lambda w and rho^lambda = q^lambda - u^0, the diagnostics
/// of the continuity argument.
pub fn combine_q_rho(
    x: &CoupledState,
    x0: &CoupledState,
    lambda: f64,
) -> Result<(ShellState, ShellState)> {
    check_n(x.n_shells(), x0.n_shells())?;
    let q = x.u.add_scaled(lambda, &x.w)?;
    let rho = q.sub(&x0.u)?;
    Ok((q, rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Goy,
    Sabra,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Goy => write!(f, "goy"),
            ModelKind::Sabra => write!(f, "sabra"),
        }
    }
}

/// All model scalars and the forcing spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub nu: f64,
    pub k0: f64,
    pub n_shells: usize,
    pub model: ModelKind,
    /// Sabra interaction parameter; ignored for GOY.
    pub delta: f64,
    pub lambda: f64,
    /// Forcing amplitudes sigma_n, padded with zeros to n_shells.
    pub sigma: Arc<Vec<Complex64>>,
    /// OU shift alpha >= 0.
    pub alpha: f64,
    /// Regularity exponent of the forcing assumption.
    pub epsilon: f64,
}

impl ModelConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nu: f64,
        k0: f64,
        n_shells: usize,
        model: ModelKind,
        delta: f64,
        lambda: f64,
        mut sigma: Vec<Complex64>,
        alpha: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(ShellError::Config(format!("viscosity must be positive, got {nu}")));
        }
        if !(k0 > 0.0) {
            return Err(ShellError::Config(format!("k0 must be positive, got {k0}")));
        }
        if n_shells < MIN_SHELLS {
            return Err(ShellError::Config(format!(
                "need at least {MIN_SHELLS} shells, got {n_shells}"
            )));
        }
        if !delta.is_finite() {
            return Err(ShellError::Config("delta must be finite".into()));
        }
        if !lambda.is_finite() {
            return Err(ShellError::Config("lambda must be finite".into()));
        }
        if !(alpha >= 0.0) {
            return Err(ShellError::Config(format!("alpha must be >= 0, got {alpha}")));
        }
        if !(epsilon > 0.0) {
            return Err(ShellError::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        let k_top = wavenumber(n_shells, k0)?;
        if !(nu * k_top * k_top).is_finite() {
            return Err(ShellError::Config(format!(
                "nu * k_N^2 overflows f64 at N = {n_shells}, k0 = {k0}"
            )));
        }
        if sigma.len() > n_shells {
            return Err(ShellError::Config(format!(
                "sigma has {} entries but the model has {n_shells} shells",
                sigma.len()
            )));
        }
        for (i, s) in sigma.iter().enumerate() {
            if !s.re.is_finite() || !s.im.is_finite() {
                return Err(ShellError::Config(format!("non-finite sigma at shell {}", i + 1)));
            }
        }
        sigma.resize(n_shells, Complex64::ZERO);
        Ok(Self {
            nu,
            k0,
            n_shells,
            model,
            delta,
            lambda,
            sigma: Arc::new(sigma),
            alpha,
            epsilon,
        })
    }

    /// Warnings that do not prevent a run. A forcing spectrum whose moduli
    /// grow along consecutive nonzero shells is flagged: the regularity
    /// assumption on the noise is only meaningful for decaying spectra.
    pub fn spectrum_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        let moduli: Vec<f64> = self.sigma.iter().map(|s| s.norm()).collect();
        let nonzero: Vec<(usize, f64)> = moduli
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(i, m)| (i + 1, *m))
            .collect();
        for pair in nonzero.windows(2) {
            let ((_, a), (n, b)) = (pair[0], pair[1]);
            if b > a {
                warnings.push(format!(
                    "forcing spectrum |sigma_n| does not decay (|sigma_{n}| = {b} > {a}); \
                     flat or growing spectra strain the regularity assumption"
                ));
                break;
            }
        }
        warnings
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut cfg = self.clone();
        cfg.lambda = lambda;
        cfg
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        let mut cfg = self.clone();
        cfg.alpha = alpha;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn wavenumber_doubles() {
        assert_eq!(wavenumber(3, 0.5).unwrap(), 4.0);
        assert_eq!(wavenumber(1, 1.0).unwrap(), 2.0);
        // independent oracle: repeated doubling
        let mut k = 1.0;
        for _ in 0..20 {
            k *= 2.0;
        }
        assert_eq!(wavenumber(20, 1.0).unwrap(), k);
        assert_eq!(wavenumber(20, 1.0).unwrap(), 1048576.0);
        assert!(wavenumber(0, 1.0).is_err());
    }

    #[test]
    fn norm_h_cases() {
        assert_eq!(ShellState::zeros(8).norm_h(), 0.0);
        assert_eq!(ShellState::unit(8, 2).norm_h(), 1.0);
        let mut amps = vec![Complex64::ZERO; 8];
        amps[0] = c(3.0, 4.0);
        assert_eq!(ShellState::new(amps).unwrap().norm_h(), 5.0);
    }

    #[test]
    fn norm_v_and_v_prime_cases() {
        assert_eq!(ShellState::zeros(8).norm_v(1.0), 0.0);
        assert_eq!(ShellState::unit(8, 1).norm_v(1.0), 2.0);
        assert_eq!(ShellState::zeros(8).norm_v_prime(1.0), 0.0);
        assert_eq!(ShellState::unit(8, 1).norm_v_prime(1.0), 0.5);
    }

    #[test]
    fn norm_hierarchy_inequalities() {
        // k_n >= 2 k0 gives ||u||_V >= 2 k0 |u|_H and |u|_{V'} <= |u|_H / (2 k0)
        for seed in 0..50u64 {
            let k0 = 0.25 + (seed as f64) * 0.1;
            let s = random_state(seed, 12);
            assert!(s.norm_v(k0) >= 2.0 * k0 * s.norm_h() * (1.0 - 1e-12));
            assert!(s.norm_v_prime(k0) <= s.norm_h() / (2.0 * k0) * (1.0 + 1e-12));
        }
    }

    fn random_state(seed: u64, n: usize) -> ShellState {
        let amps = (0..n)
            .map(|i| {
                let (a, b) = crate::rng::normal_pair(seed, crate::rng::STREAM_GENERIC, 7, i as u64, 0);
                c(a, b)
            })
            .collect();
        ShellState::new(amps).unwrap()
    }

    #[test]
    fn a_alpha_identity_and_square() {
        let u = random_state(3, 8);
        assert_eq!(apply_a_alpha(&u, 0.0, 1.0), u);
        let out = apply_a_alpha(&ShellState::unit(8, 1), 1.0, 1.0);
        assert_eq!(out.amplitudes()[0], c(4.0, 0.0));
    }

    #[test]
    fn a_alpha_semigroup() {
        let u = random_state(11, 8);
        let twice = apply_a_alpha(&apply_a_alpha(&u, 0.5, 1.3), 0.5, 1.3);
        let once = apply_a_alpha(&u, 1.0, 1.3);
        for (a, b) in twice.amplitudes().iter().zip(once.amplitudes()) {
            assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn a_alpha_linear() {
        for seed in 0..20u64 {
            let x = random_state(seed, 16);
            let y = random_state(seed + 100, 16);
            let (a, b) = crate::rng::normal_pair(seed, crate::rng::STREAM_GENERIC, 8, 0, 0);
            let lhs = apply_a_alpha(&x.scaled(a).add(&y.scaled(b)).unwrap(), 0.7, 1.0);
            let rhs = apply_a_alpha(&x, 0.7, 1.0)
                .scaled(a)
                .add(&apply_a_alpha(&y, 0.7, 1.0).scaled(b))
                .unwrap();
            let scale = rhs.norm_h().max(1.0);
            assert!(lhs.sub(&rhs).unwrap().norm_h() <= 1e-12 * scale);
        }
    }

    #[test]
    fn a_alpha_positive_definite() {
        for seed in 0..20u64 {
            let u = random_state(seed, 32);
            let alpha = 0.25 + 0.25 * (seed % 4) as f64;
            let k0 = 0.5;
            let quad = apply_a_alpha(&u, alpha, k0).inner_h(&u);
            assert!(quad >= k0.powf(2.0 * alpha) * u.norm_h_sq() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn combine_q_rho_cases() {
        let n = 8;
        let u = random_state(21, n);
        let w = random_state(22, n);
        let x = CoupledState::new(u.clone(), w.clone()).unwrap();

        // lambda = 0 against itself: q = u, rho = 0 exactly
        let (q, rho) = combine_q_rho(&x, &x, 0.0).unwrap();
        assert_eq!(q, u);
        assert_eq!(rho.norm_h(), 0.0);

        // lambda = 1 with u = w: q = 2u
        let diag = CoupledState::diagonal(u.clone());
        let (q, _) = combine_q_rho(&diag, &diag, 1.0).unwrap();
        assert_eq!(q, u.scaled(2.0));

        // explicit vector arithmetic at lambda = 1/2
        let e1 = ShellState::unit(n, 1);
        let e2 = ShellState::unit(n, 2);
        let x = CoupledState::new(e1.clone(), e2.clone()).unwrap();
        let x0 = CoupledState::new(e1.clone(), ShellState::zeros(n)).unwrap();
        let (q, rho) = combine_q_rho(&x, &x0, 0.5).unwrap();
        assert_eq!(q, e1.add(&e2.scaled(0.5)).unwrap());
        assert_eq!(rho, e2.scaled(0.5));

        // mismatched N is an error
        let y = CoupledState::zeros(16);
        assert!(combine_q_rho(&x, &y, 0.1).is_err());
    }

    #[test]
    fn state_validation() {
        assert!(ShellState::new(vec![Complex64::ZERO; 3]).is_err());
        assert!(ShellState::new(vec![c(f64::NAN, 0.0); 4]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = random_state(31, 6);
        let back = ShellState::from_csv_row(&s.to_csv_row()).unwrap();
        assert_eq!(s, back);

        let x = CoupledState::new(random_state(32, 6), random_state(33, 6)).unwrap();
        let rows = x.to_csv_rows();
        let mut lines = rows.lines();
        let back =
            CoupledState::from_csv_rows(lines.next().unwrap(), lines.next().unwrap()).unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn config_validation_and_warnings() {
        let cfg = ModelConfig::new(
            1.0,
            1.0,
            8,
            ModelKind::Goy,
            0.5,
            0.0,
            vec![c(0.2, 0.0), c(0.1, 0.0)],
            0.0,
            0.5,
        )
        .unwrap();
        assert_eq!(cfg.sigma.len(), 8);
        assert!(cfg.spectrum_warnings().is_empty());

        let flat = ModelConfig::new(
            1.0,
            1.0,
            8,
            ModelKind::Goy,
            0.5,
            0.0,
            vec![c(0.1, 0.0), c(0.1, 0.0), c(0.2, 0.0)],
            0.0,
            0.5,
        )
        .unwrap();
        assert_eq!(flat.spectrum_warnings().len(), 1);

        assert!(ModelConfig::new(
            0.0,
            1.0,
            8,
            ModelKind::Goy,
            0.5,
            0.0,
            vec![],
            0.0,
            0.5
        )
        .is_err());
    }
}
