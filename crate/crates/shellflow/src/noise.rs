//! Seeded two-sided complex Brownian paths, the shift maps theta_t, and the
//! Ornstein-Uhlenbeck process z~^alpha with exact one-step updates.
//!
//! A path never stores increments. The unit complex Gaussian attached to a
//! shell and an absolute grid cell is a pure function of
//! `(seed, shell, index)`, so theta-shifts are index offsets, two-sided
//! extension is free, and the same cell feeds both the Brownian increment
//! (for Euler-Maruyama) and the exact OU update (for the splitting scheme):
//! the two integrators then run on a common realization of the noise.
//!
//! Convention: E|beta_n(t)|^2 = t, realized as independent real and
//! imaginary Gaussians of variance t/2 each.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, ShellError};
use crate::rng;
use crate::shell_core::{CoupledState, ShellState};

/// Relative truncation of stationary warm-up sums: contributions damped by
/// more than e^{-RELAX_LOG} are below double precision.
const RELAX_LOG: f64 = 46.0;

/// Two-sided grid-discretized complex Brownian path per shell, addressable
/// by seed and shiftable by theta_t.
#[derive(Debug, Clone)]
pub struct NoisePath {
    seed: u64,
    dt: f64,
    t_min: f64,
    t_max: f64,
    shift_steps: i64,
    sigma: Arc<Vec<Complex64>>,
}

impl NoisePath {
    /// Deterministic path on the grid of spacing `dt` covering
    /// `[t_min, t_max]` (the window is advisory: cells outside it generate
    /// lazily). Requires `t_min <= 0 <= t_max`.
    pub fn sample_path(
        seed: u64,
        dt: f64,
        t_min: f64,
        t_max: f64,
        sigma: &[Complex64],
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(ShellError::Domain(format!("dt must be positive, got {dt}")));
        }
        if !(t_min <= 0.0 && 0.0 <= t_max) {
            return Err(ShellError::Domain(format!(
                "grid window must straddle 0, got [{t_min}, {t_max}]"
            )));
        }
        Ok(Self {
            seed,
            dt,
            t_min,
            t_max,
            shift_steps: 0,
            sigma: Arc::new(sigma.to_vec()),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn window(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    pub fn shift_steps(&self) -> i64 {
        self.shift_steps
    }

    pub fn n_shells(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[Complex64] {
        &self.sigma
    }

    /// Nearest grid index of `t`; errors if `t` is off-grid.
    pub fn grid_index(&self, t: f64) -> Result<i64> {
        let steps = (t / self.dt).round();
        if (t - steps * self.dt).abs() > 1e-9 * self.dt.max(t.abs()) {
            return Err(ShellError::Domain(format!(
                "time {t} is not aligned with the grid spacing {}",
                self.dt
            )));
        }
        Ok(steps as i64)
    }

    /// Unit complex Gaussian of the cell `[j dt, (j+1) dt)` in local time.
    #[inline]
    pub fn unit_gaussian(&self, shell: usize, local_index: i64) -> Complex64 {
        debug_assert!(shell >= 1);
        let abs = local_index + self.shift_steps;
        rng::complex_normal(self.seed, rng::STREAM_INCREMENTS, shell as u64, abs as u64)
    }

    /// Brownian increment of shell `n` over one grid cell:
    /// E|dW_n|^2 = |sigma_n|^2 dt.
    #[inline]
    pub fn increment(&self, shell: usize, local_index: i64) -> Complex64 {
        self.sigma[shell - 1] * self.dt.sqrt() * self.unit_gaussian(shell, local_index)
    }

    /// theta_s: shifted path with W(0) = 0 re-anchored; `s` must be on-grid.
    pub fn shift_theta(&self, s: f64) -> Result<Self> {
        let steps = self.grid_index(s)?;
        let mut shifted = self.clone();
        shifted.shift_steps += steps;
        Ok(shifted)
    }

    /// W_n(t) as the sum of increments between local times 0 and t.
    pub fn brownian_at(&self, shell: usize, t: f64) -> Result<Complex64> {
        let j = self.grid_index(t)?;
        let mut acc = Complex64::ZERO;
        if j >= 0 {
            for m in 0..j {
                acc += self.increment(shell, m);
            }
        } else {
            for m in j..0 {
                acc -= self.increment(shell, m);
            }
        }
        Ok(acc)
    }
}

/// Per-shell exact one-step OU update factors for a fixed grid spacing:
/// z <- e^{-gamma dt} z + sigma sqrt((1 - e^{-2 gamma dt}) / (2 gamma)) xi.
#[derive(Debug, Clone)]
pub struct OuKernel {
    pub alpha: f64,
    pub dt: f64,
    gamma: Vec<f64>,
    decay: Vec<f64>,
    noise_scale: Vec<Complex64>,
}

impl OuKernel {
    pub fn new(alpha: f64, nu: f64, k0: f64, sigma: &[Complex64], dt: f64) -> Self {
        let n = sigma.len();
        let mut gamma = Vec::with_capacity(n);
        let mut decay = Vec::with_capacity(n);
        let mut noise_scale = Vec::with_capacity(n);
        let mut k = k0;
        for s in sigma {
            k *= 2.0;
            let g = nu * k * k + alpha;
            let var_scale = (-(-2.0 * g * dt).exp_m1() / (2.0 * g)).sqrt();
            gamma.push(g);
            decay.push((-g * dt).exp());
            noise_scale.push(s * var_scale);
        }
        Self { alpha, dt, gamma, decay, noise_scale }
    }

    #[inline]
    pub fn step_shell(&self, shell_idx: usize, z: Complex64, xi: Complex64) -> Complex64 {
        self.decay[shell_idx] * z + self.noise_scale[shell_idx] * xi
    }

    /// Steps after which the origin of the warm-up sum is damped below
    /// double precision for this shell.
    fn relax_steps(&self, shell_idx: usize) -> i64 {
        (RELAX_LOG / (self.gamma[shell_idx] * self.dt)).ceil().max(1.0) as i64
    }

    /// Stationary pathwise value at local grid index `j`: the truncated
    /// convolution of the shifted increments, computed per shell by warming
    /// up from zero far enough back that the truncation error is below
    /// double precision. This realizes the stationary process as a pure
    /// function of the path, so it commutes with theta-shifts exactly.
    pub fn stationary_at(&self, path: &NoisePath, j: i64) -> ShellState {
        let n = self.gamma.len();
        let mut out = ShellState::zeros(n);
        for idx in 0..n {
            if self.noise_scale[idx] == Complex64::ZERO {
                continue;
            }
            let back = self.relax_steps(idx);
            let mut z = Complex64::ZERO;
            for m in (j - back)..j {
                z = self.step_shell(idx, z, path.unit_gaussian(idx + 1, m));
            }
            out.amplitudes_mut()[idx] = z;
        }
        out
    }

    /// Value at local index `j` of the process started from zero at
    /// absolute time 0 (the flow-construction convention). Requires the
    /// absolute index of `j` to be nonnegative.
    pub fn from_zero_origin_at(&self, path: &NoisePath, j: i64) -> Result<ShellState> {
        let abs = j + path.shift_steps();
        if abs < 0 {
            return Err(ShellError::Domain(format!(
                "zero-origin noise state requested at absolute index {abs} < 0"
            )));
        }
        let n = self.gamma.len();
        let mut out = ShellState::zeros(n);
        for idx in 0..n {
            if self.noise_scale[idx] == Complex64::ZERO {
                continue;
            }
            let start_abs = (abs - self.relax_steps(idx)).max(0);
            let mut z = Complex64::ZERO;
            for m_abs in start_abs..abs {
                let m_local = m_abs - path.shift_steps();
                z = self.step_shell(idx, z, path.unit_gaussian(idx + 1, m_local));
            }
            out.amplitudes_mut()[idx] = z;
        }
        Ok(out)
    }
}

/// OU state z~^alpha as a coupled state; both components are equal because
/// the driving noise W~ = (W, W) is.
#[derive(Debug, Clone)]
pub struct OuState {
    pub z: CoupledState,
    pub alpha: f64,
    pub t: f64,
}

impl OuState {
    pub fn from_component(z: ShellState, alpha: f64, t: f64) -> Self {
        Self { z: CoupledState::diagonal(z), alpha, t }
    }

    /// The shared component (u and w are identical by construction).
    pub fn component(&self) -> &ShellState {
        &self.z.u
    }
}

/// Exact one-step update of the OU process along the path; `state.t` must
/// sit on the grid and `dt` must match the path spacing.
pub fn ou_step(state: &OuState, path: &NoisePath, dt: f64, nu: f64, k0: f64) -> Result<OuState> {
    if (dt - path.dt()).abs() > 1e-12 * dt.max(path.dt()) {
        return Err(ShellError::Domain(format!(
            "ou_step dt {dt} does not match the path spacing {}",
            path.dt()
        )));
    }
    let j = path.grid_index(state.t)?;
    let kernel = OuKernel::new(state.alpha, nu, k0, path.sigma(), dt);
    let mut z = state.component().clone();
    for idx in 0..z.n_shells() {
        let xi = path.unit_gaussian(idx + 1, j);
        let amps = z.amplitudes_mut();
        amps[idx] = kernel.step_shell(idx, amps[idx], xi);
    }
    Ok(OuState::from_component(z, state.alpha, state.t + dt))
}

/// Direct draw from the exact stationary law: each shell is a complex
/// Gaussian of variance |sigma_n|^2 / (2 (nu k_n^2 + alpha)).
pub fn ou_stationary_init(
    seed: u64,
    alpha: f64,
    nu: f64,
    k0: f64,
    sigma: &[Complex64],
) -> OuState {
    let n = sigma.len();
    let mut z = ShellState::zeros(n);
    let mut k = k0;
    for idx in 0..n {
        k *= 2.0;
        let gamma = nu * k * k + alpha;
        let xi = rng::complex_normal(seed, rng::STREAM_STATIONARY, (idx + 1) as u64, 0);
        z.amplitudes_mut()[idx] = sigma[idx] * (1.0 / (2.0 * gamma).sqrt()) * xi;
    }
    OuState::from_component(z, alpha, 0.0)
}

/// Closed-form E ||z^alpha||_V^2 = sum_n k_n^2 |sigma_n|^2 / (2 (nu k_n^2 + alpha)).
pub fn expected_v_norm_sq(alpha: f64, nu: f64, k0: f64, sigma: &[Complex64]) -> f64 {
    let mut k = k0;
    let mut acc = 0.0;
    for s in sigma {
        k *= 2.0;
        acc += k * k * s.norm_sqr() / (2.0 * (nu * k * k + alpha));
    }
    acc
}

/// Smallest alpha with expected_v_norm_sq(alpha) <= k0 nu / (8 C_*), located
/// by bisection to relative tolerance 1e-6. Returns 0 when the condition
/// already holds without a shift.
pub fn alpha_star(nu: f64, k0: f64, sigma: &[Complex64], cstar: f64) -> Result<f64> {
    if !(cstar > 0.0) {
        return Err(ShellError::Domain(format!("cstar must be positive, got {cstar}")));
    }
    let target = k0 * nu / (8.0 * cstar);
    if expected_v_norm_sq(0.0, nu, k0, sigma) <= target {
        return Ok(0.0);
    }
    let mut hi = 1.0f64;
    while expected_v_norm_sq(hi, nu, k0, sigma) > target {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(ShellError::Domain(
                "alpha_* search diverged; sigma spectrum is not summable".into(),
            ));
        }
    }
    let mut lo = hi / 2.0;
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if expected_v_norm_sq(mid, nu, k0, sigma) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Production OU shift alpha_0 = 2 alpha_*.
pub fn alpha_zero(nu: f64, k0: f64, sigma: &[Complex64], cstar: f64) -> Result<f64> {
    Ok(2.0 * alpha_star(nu, k0, sigma, cstar)?)
}
