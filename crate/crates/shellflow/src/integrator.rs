//! Pathwise integration of the coupled system.
//!
//! The primary scheme splits the SDE through the OU process: v solves the
//! random ODE dv/dt + nu A~ v = -B~_lambda(v+z, v+z) + alpha z with the
//! stiff linear part integrated exactly (exponential Euler) and the
//! nonlinearity explicit, and the flow is reconstructed as u = v + z. A
//! direct Euler-Maruyama discretization of the SDE itself serves as the
//! independent oracle; both schemes consume the same per-cell noise
//! variables, so they run on a common realization of the driving path.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bilinear;
use crate::error::{Result, ShellError};
use crate::noise::{NoisePath, OuKernel};
use crate::shell_core::{CoupledState, ModelConfig, ShellState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    OuSplitting,
    EulerMaruyama,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::OuSplitting => write!(f, "ou-splitting"),
            Scheme::EulerMaruyama => write!(f, "euler-maruyama"),
        }
    }
}

/// Initialization convention for the OU component.
///
/// `Auto` picks the flow-construction convention (z = 0 at absolute time 0)
/// when the run starts at or after the path origin, and the stationary
/// pathwise value when it starts in the past (pullback runs). Both are pure
/// functions of the path, which is what makes the discrete cocycle exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuInit {
    #[default]
    Auto,
    ZeroAtOrigin,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub dt: f64,
    pub t_span: (f64, f64),
    pub store_every: usize,
    pub scheme: Scheme,
    #[serde(default)]
    pub ou_init: OuInit,
}

impl SolverSettings {
    pub fn new(dt: f64, t_span: (f64, f64), store_every: usize, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(ShellError::Config(format!("dt must be positive, got {dt}")));
        }
        if !(t_span.0 <= t_span.1) {
            return Err(ShellError::Config(format!(
                "t_span must be ordered, got [{}, {}]",
                t_span.0, t_span.1
            )));
        }
        if store_every == 0 {
            return Err(ShellError::Config("store_every must be >= 1".into()));
        }
        Ok(Self { dt, t_span, store_every, scheme, ou_init: OuInit::Auto })
    }

    pub fn with_span(&self, t0: f64, t1: f64) -> Self {
        let mut s = *self;
        s.t_span = (t0, t1);
        s
    }

    pub fn with_ou_init(&self, ou_init: OuInit) -> Self {
        let mut s = *self;
        s.ou_init = ou_init;
        s
    }

    pub fn with_store_every(&self, store_every: usize) -> Self {
        let mut s = *self;
        s.store_every = store_every;
        s
    }

    fn steps(&self) -> Result<usize> {
        let raw = (self.t_span.1 - self.t_span.0) / self.dt;
        let steps = raw.round();
        if (raw - steps).abs() > 1e-9 * raw.abs().max(1.0) {
            return Err(ShellError::Config(format!(
                "t_span length {} is not a multiple of dt = {}",
                self.t_span.1 - self.t_span.0,
                self.dt
            )));
        }
        Ok(steps as usize)
    }

    fn check_path(&self, path: &NoisePath) -> Result<i64> {
        if (self.dt - path.dt()).abs() > 1e-12 * self.dt.max(path.dt()) {
            return Err(ShellError::Config(format!(
                "solver dt {} does not match the path spacing {}",
                self.dt,
                path.dt()
            )));
        }
        path.grid_index(self.t_span.0)
    }
}

/// Samples of the flow phi^lambda along one path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CoupledState>,
    pub config: ModelConfig,
    pub seed: u64,
    pub scheme: Scheme,
}

impl Trajectory {
    pub fn final_state(&self) -> &CoupledState {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn n_shells(&self) -> usize {
        self.config.n_shells
    }

    /// CSV rows (t, shell, re, im, component), u rows then w rows per time.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,shell,re,im,component")?;
        for (t, state) in self.times.iter().zip(&self.states) {
            for (tag, comp) in [("u", &state.u), ("w", &state.w)] {
                for (i, a) in comp.amplitudes().iter().enumerate() {
                    writeln!(out, "{},{},{},{},{}", t, i + 1, a.re, a.im, tag)?;
                }
            }
        }
        Ok(())
    }

    /// Inverse of `write_csv`; `config` supplies the model the samples came
    /// from (the CSV itself carries only the data).
    pub fn read_csv<R: std::io::BufRead>(input: R, config: ModelConfig) -> Result<Self> {
        let mut times: Vec<f64> = Vec::new();
        let mut states: Vec<CoupledState> = Vec::new();
        let mut current: Option<(f64, Vec<Complex64>, Vec<Complex64>)> = None;
        let n = config.n_shells;

        let mut flush =
            |cur: &mut Option<(f64, Vec<Complex64>, Vec<Complex64>)>| -> Result<()> {
                if let Some((t, u, w)) = cur.take() {
                    if u.len() != n || w.len() != n {
                        return Err(ShellError::Domain(format!(
                            "trajectory row group at t = {t} has {}/{} shells, expected {n}",
                            u.len(),
                            w.len()
                        )));
                    }
                    times.push(t);
                    states.push(CoupledState::new(ShellState::new(u)?, ShellState::new(w)?)?);
                }
                Ok(())
            };

        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with("t,") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(ShellError::Domain(format!(
                    "line {}: expected 5 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| ShellError::Domain(format!("line {}: {e}", lineno + 1)))
            };
            let t = parse(fields[0])?;
            let shell: usize = fields[1]
                .parse()
                .map_err(|e| ShellError::Domain(format!("line {}: {e}", lineno + 1)))?;
            let re = parse(fields[2])?;
            let im = parse(fields[3])?;
            let tag = fields[4];

            let start_new = match &current {
                None => true,
                Some((tc, _, _)) => *tc != t,
            };
            if start_new {
                flush(&mut current)?;
                current = Some((t, Vec::with_capacity(n), Vec::with_capacity(n)));
            }
            let (_, u, w) = current.as_mut().expect("current group exists");
            let slot = match tag {
                "u" => u,
                "w" => w,
                other => {
                    return Err(ShellError::Domain(format!(
                        "line {}: unknown component tag {other:?}",
                        lineno + 1
                    )))
               }
            };
            if shell != slot.len() + 1 {
                return Err(ShellError::Domain(format!(
                    "line {}: shells out of order (got {shell})",
                    lineno + 1
                )));
            }
            slot.push(Complex64::new(re, im));
        }
        flush(&mut current)?;
        if times.is_empty() {
            return Err(ShellError::Domain("trajectory file holds no samples".into()));
        }
        Ok(Self { times, states, config, seed: 0, scheme: Scheme::OuSplitting })
    }
}

/// Exponential-Euler tables: exact decay of the stiff linear part and the
/// phi_1 weight of the explicit remainder.
struct ExpEulerTables {
    decay: Vec<f64>,
    w1: Vec<f64>,
}

impl ExpEulerTables {
    fn new(cfg: &ModelConfig, dt: f64) -> Self {
        let mut decay = Vec::with_capacity(cfg.n_shells);
        let mut w1 = Vec::with_capacity(cfg.n_shells);
        let mut k = cfg.k0;
        for _ in 0..cfg.n_shells {
            k *= 2.0;
            let x = cfg.nu * k * k * dt;
            decay.push((-x).exp());
            // dt * phi_1(-x) = (1 - e^{-x}) / (nu k^2), with the x -> 0 limit dt
            w1.push(if x > 1e-12 { -(-x).exp_m1() / (cfg.nu * k * k) } else { dt });
        }
        Self { decay, w1 }
    }

    /// v <- decay v + w1 (alpha z - b), the shared per-component update.
    #[inline]
    fn advance(&self, v: &mut ShellState, b: &ShellState, z: &ShellState, alpha: f64) {
        let b = b.amplitudes();
        let z = z.amplitudes();
        for (idx, a) in v.amplitudes_mut().iter_mut().enumerate() {
            let nl = alpha * z[idx] - b[idx];
            *a = self.decay[idx] * *a + self.w1[idx] * nl;
        }
    }
}

struct FlowStepper {
    tables: ExpEulerTables,
    vpz: CoupledState,
    b: CoupledState,
    scratch: ShellState,
}

impl FlowStepper {
    fn new(cfg: &ModelConfig, dt: f64) -> Self {
        let n = cfg.n_shells;
        Self {
            tables: ExpEulerTables::new(cfg, dt),
            vpz: CoupledState::zeros(n),
            b: CoupledState::zeros(n),
            scratch: ShellState::zeros(n),
        }
    }

    fn advance(
        &mut self,
        cfg: &ModelConfig,
        v: &mut CoupledState,
        z_u: &ShellState,
        z_w: &ShellState,
    ) {
        sum_into(&v.u, z_u, &mut self.vpz.u);
        sum_into(&v.w, z_w, &mut self.vpz.w);
        bilinear::coupled_b_lambda_into(
            &self.vpz,
            &self.vpz,
            cfg.lambda,
            cfg.model,
            cfg.delta,
            cfg.k0,
            &mut self.b,
            &mut self.scratch,
        );
        self.tables.advance(&mut v.u, &self.b.u, z_u, cfg.alpha);
        self.tables.advance(&mut v.w, &self.b.w, z_w, cfg.alpha);
    }
}

#[inline]
fn sum_into(a: &ShellState, b: &ShellState, out: &mut ShellState) {
    for (o, (x, y)) in out
        .amplitudes_mut()
        .iter_mut()
        .zip(a.amplitudes().iter().zip(b.amplitudes()))
    {
        *o = x + y;
    }
}

/// One exponential-Euler step of the random v-equation with the OU state
/// frozen at the step start; `t_now` only labels a blow-up diagnostic.
pub fn step_v(
    v: &CoupledState,
    z: &CoupledState,
    dt: f64,
    cfg: &ModelConfig,
    t_now: f64,
) -> Result<CoupledState> {
    if v.n_shells() != cfg.n_shells || z.n_shells() != cfg.n_shells {
        return Err(ShellError::DimensionMismatch { left: v.n_shells(), right: cfg.n_shells });
    }
    let mut stepper = FlowStepper::new(cfg, dt);
    let mut out = v.clone();
    stepper.advance(cfg, &mut out, &z.u, &z.w);
    if !out.is_finite() {
        return Err(ShellError::BlowUp { t: t_now, v_h: v.norm_h(), z_v: z.norm_v(cfg.k0) });
    }
    Ok(out)
}

fn initial_ou_component(
    path: &NoisePath,
    kernel: &OuKernel,
    j0: i64,
    ou_init: OuInit,
) -> Result<ShellState> {
    let abs0 = j0 + path.shift_steps();
    let mode = match ou_init {
        OuInit::Auto => {
            if abs0 >= 0 {
                OuInit::ZeroAtOrigin
            } else {
                OuInit::Stationary
            }
        }
        other => other,
    };
    match mode {
        OuInit::ZeroAtOrigin => kernel.from_zero_origin_at(path, j0),
        OuInit::Stationary => Ok(kernel.stationary_at(path, j0)),
        OuInit::Auto => unreachable!(),
    }
}

/// Integrate the coupled flow phi^lambda along the path: v(t0) = u0 - z(t0),
/// z advanced by the exact OU update and v by exponential Euler in lockstep,
/// storing u = v + z every `store_every` steps.
pub fn solve_flow(
    u0: &CoupledState,
    path: &NoisePath,
    settings: &SolverSettings,
    cfg: &ModelConfig,
) -> Result<Trajectory> {
    if u0.n_shells() != cfg.n_shells {
        return Err(ShellError::DimensionMismatch { left: u0.n_shells(), right: cfg.n_shells });
    }
    if path.n_shells() != cfg.n_shells {
        return Err(ShellError::DimensionMismatch { left: path.n_shells(), right: cfg.n_shells });
    }
    let j0 = settings.check_path(path)?;
    let steps = settings.steps()?;
    let (t0, _) = settings.t_span;
    let dt = settings.dt;

    let kernel = OuKernel::new(cfg.alpha, cfg.nu, cfg.k0, path.sigma(), dt);
    let mut z = initial_ou_component(path, &kernel, j0, settings.ou_init)?;
    let mut v = CoupledState::new(u0.u.sub(&z)?, u0.w.sub(&z)?)?;
    let mut stepper = FlowStepper::new(cfg, dt);

    let mut times = Vec::with_capacity(steps / settings.store_every + 2);
    let mut states = Vec::with_capacity(steps / settings.store_every + 2);
    times.push(t0);
    states.push(u0.clone());

    for m in 0..steps {
        let t_next = t0 + (m as f64 + 1.0) * dt;
        stepper.advance(cfg, &mut v, &z, &z);
        for idx in 0..cfg.n_shells {
            let xi = path.unit_gaussian(idx + 1, j0 + m as i64);
            let amps = z.amplitudes_mut();
            amps[idx] = kernel.step_shell(idx, amps[idx], xi);
        }
        if !v.is_finite() {
            return Err(ShellError::BlowUp {
                t: t_next,
                v_h: f64::NAN,
                z_v: z.norm_v(cfg.k0),
            });
        }
        if (m + 1) % settings.store_every == 0 || m + 1 == steps {
            times.push(t_next);
            states.push(CoupledState::new(v.u.add(&z)?, v.w.add(&z)?)?);
        }
    }

    Ok(Trajectory { times, states, config: cfg.clone(), seed: path.seed(), scheme: Scheme::OuSplitting })
}

/// Decoupled single-system run of the nonlinear model (the u-equation
/// alone). At lambda = 0 the u-component of `solve_flow` reproduces this
/// bit-for-bit: both paths execute the same kernel on the same inputs.
pub fn solve_flow_single(
    u0: &ShellState,
    path: &NoisePath,
    settings: &SolverSettings,
    cfg: &ModelConfig,
) -> Result<Vec<(f64, ShellState)>> {
    if u0.n_shells() != cfg.n_shells {
        return Err(ShellError::DimensionMismatch { left: u0.n_shells(), right: cfg.n_shells });
    }
    let j0 = settings.check_path(path)?;
    let steps = settings.steps()?;
    let (t0, _) = settings.t_span;
    let dt = settings.dt;

    let kernel = OuKernel::new(cfg.alpha, cfg.nu, cfg.k0, path.sigma(), dt);
    let mut z = initial_ou_component(path, &kernel, j0, settings.ou_init)?;
    let mut v = u0.sub(&z)?;
    let tables = ExpEulerTables::new(cfg, dt);
    let mut vpz = ShellState::zeros(cfg.n_shells);
    let mut b = ShellState::zeros(cfg.n_shells);

    let mut out = Vec::with_capacity(steps / settings.store_every + 2);
    out.push((t0, u0.clone()));
    for m in 0..steps {
        let t_next = t0 + (m as f64 + 1.0) * dt;
        sum_into(&v, &z, &mut vpz);
        bilinear::bilinear_into(cfg.model, cfg.delta, &vpz, &vpz, cfg.k0, &mut b);
        tables.advance(&mut v, &b, &z, cfg.alpha);
        for idx in 0..cfg.n_shells {
            let xi = path.unit_gaussian(idx + 1, j0 + m as i64);
            let amps = z.amplitudes_mut();
            amps[idx] = kernel.step_shell(idx, amps[idx], xi);
        }
        if !v.is_finite() {
            return Err(ShellError::BlowUp { t: t_next, v_h: f64::NAN, z_v: z.norm_v(cfg.k0) });
        }
        if (m + 1) % settings.store_every == 0 || m + 1 == steps {
            out.push((t_next, v.add(&z)?));
        }
    }
    Ok(out)
}

fn em_run(
    u0: &CoupledState,
    path: &NoisePath,
    settings: &SolverSettings,
    cfg: &ModelConfig,
    with_nonlinearity: bool,
) -> Result<Trajectory> {
    if u0.n_shells() != cfg.n_shells || path.n_shells() != cfg.n_shells {
        return Err(ShellError::DimensionMismatch { left: u0.n_shells(), right: cfg.n_shells });
    }
    let j0 = settings.check_path(path)?;
    let steps = settings.steps()?;
    let (t0, _) = settings.t_span;
    let dt = settings.dt;

    let k_top = crate::shell_core::wavenumber(cfg.n_shells, cfg.k0)?;
    let stiffness = dt * cfg.nu * k_top * k_top;
    if stiffness > 2.0 {
        return Err(ShellError::Stability(stiffness));
    }

    let visc: Vec<f64> = {
        let mut k = cfg.k0;
        (0..cfg.n_shells)
            .map(|_| {
                k *= 2.0;
                cfg.nu * k * k
            })
            .collect()
    };
    let sqrt_dt = dt.sqrt();
    let mut u = u0.clone();
    let mut b = CoupledState::zeros(cfg.n_shells);
    let mut scratch = ShellState::zeros(cfg.n_shells);

    let mut times = Vec::with_capacity(steps / settings.store_every + 2);
    let mut states = Vec::with_capacity(steps / settings.store_every + 2);
    times.push(t0);
    states.push(u0.clone());

    for m in 0..steps {
        let t_next = t0 + (m as f64 + 1.0) * dt;
        if with_nonlinearity {
            bilinear::coupled_b_lambda_into(
                &u,
                &u,
                cfg.lambda,
                cfg.model,
                cfg.delta,
                cfg.k0,
                &mut b,
                &mut scratch,
            );
        }
        for idx in 0..cfg.n_shells {
            let dw = path.sigma()[idx] * sqrt_dt * path.unit_gaussian(idx + 1, j0 + m as i64);
            let drift_u = -visc[idx] * u.u.amplitudes()[idx]
                - if with_nonlinearity { b.u.amplitudes()[idx] } else { Complex64::ZERO };
            let drift_w = -visc[idx] * u.w.amplitudes()[idx]
                - if with_nonlinearity { b.w.amplitudes()[idx] } else { Complex64::ZERO };
            u.u.amplitudes_mut()[idx] += dt * drift_u + dw;
            u.w.amplitudes_mut()[idx] += dt * drift_w + dw;
        }
        if !u.is_finite() {
            return Err(ShellError::BlowUp { t: t_next, v_h: f64::NAN, z_v: 0.0 });
        }
        if (m + 1) % settings.store_every == 0 || m + 1 == steps {
            times.push(t_next);
            states.push(u.clone());
        }
    }

    Ok(Trajectory { times, states, config: cfg.clone(), seed: path.seed(), scheme: Scheme::EulerMaruyama })
}

/// Explicit Euler-Maruyama on the SDE itself; refuses to run when the
/// explicit stiffness bound dt nu k_N^2 <= 2 is violated.
pub fn solve_sde_em(
    u0: &CoupledState,
    path: &NoisePath,
    settings: &SolverSettings,
    cfg: &ModelConfig,
) -> Result<Trajectory> {
    em_run(u0, path, settings, cfg, true)
}

/// |phi(t+s, omega) u0 - phi(t, theta_s omega) phi(s, omega) u0|_H~.
pub fn verify_cocycle(
    u0: &CoupledState,
    path: &NoisePath,
    s: f64,
    t: f64,
    settings: &SolverSettings,
    cfg: &ModelConfig,
) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return Err(ShellError::Domain("cocycle times must be nonnegative".into()));
    }
    let whole = solve_flow(u0, path, &settings.with_span(0.0, s + t), cfg)?;
    let first = solve_flow(u0, path, &settings.with_span(0.0, s), cfg)?;
    let shifted = path.shift_theta(s)?;
    let second =
        solve_flow(first.final_state(), &shifted, &settings.with_span(0.0, t), cfg)?;
    whole.final_state().distance_h(second.final_state())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::ou_stationary_init;
    use crate::shell_core::ModelKind;

    fn small_cfg(n: usize, lambda: f64, sigma_amp: f64) -> ModelConfig {
        let sigma: Vec<Complex64> = (0..4.min(n))
            .map(|i| Complex64::new(sigma_amp * 0.5f64.powi(i as i32), 0.0))
            .collect();
        ModelConfig::new(1.0, 1.0, n, ModelKind::Goy, 0.0, lambda, sigma, 0.0, 0.5).unwrap()
    }

    fn random_coupled(seed: u64, n: usize, scale: f64) -> CoupledState {
        let mk = |off: u64| {
            let amps = (0..n)
                .map(|i| {
                    let (a, b) =
                        crate::rng::normal_pair(seed + off, crate::rng::STREAM_GENERIC, 3, i as u64, 0);
                    Complex64::new(a, b) * scale
                })
                .collect();
            ShellState::new(amps).unwrap()
        };
        CoupledState::new(mk(0), mk(1)).unwrap()
    }

    #[test]
    fn step_v_pure_decay_and_equilibrium() {
        let cfg = small_cfg(8, 0.0, 0.0);
        let dt = 0.01;
        // zero nonlinearity: e_1 decays by e^{-nu k_1^2 dt} exactly
        let mut v = CoupledState::zeros(8);
        v.u.amplitudes_mut()[0] = Complex64::new(1.0, 0.0);
        let z = CoupledState::zeros(8);
        let out = step_v(&v, &z, dt, &cfg, 0.0).unwrap();
        let expected = (-4.0 * dt_f(dt)).exp();
        assert!((out.u.amplitudes()[0].re - expected).abs() < 1e-15);

        // v = 0, z = 0 stays 0
        let out = step_v(&CoupledState::zeros(8), &z, dt, &cfg, 0.0).unwrap();
        assert_eq!(out.norm_h(), 0.0);
    }

    fn dt_f(dt: f64) -> f64 {
        dt
    }

    #[test]
    fn step_v_local_order_two() {
        // error of a single step over interval h against a h/64 reference is
        // O(h^2): quartering when h halves
        let cfg = ModelConfig::new(
            0.05,
            0.25,
            8,
            ModelKind::Goy,
            0.0,
            0.4,
            vec![Complex64::new(0.1, 0.0); 4],
            0.3,
            0.5,
        )
        .unwrap();
        let v0 = random_coupled(1, 8, 0.1);
        let z = random_coupled(2, 8, 0.05);

        let err = |h: f64| -> f64 {
            let one = step_v(&v0, &z, h, &cfg, 0.0).unwrap();
            let mut fine = v0.clone();
            for _ in 0..64 {
                fine = step_v(&fine, &z, h / 64.0, &cfg, 0.0).unwrap();
            }
            one.distance_h(&fine).unwrap()
        };
        let e1 = err(0.004);
        let e2 = err(0.002);
        let e3 = err(0.001);
        let r12 = e1 / e2;
        let r23 = e2 / e3;
        assert!((3.0..5.0).contains(&r12), "ratio {r12}");
        assert!((3.0..5.0).contains(&r23), "ratio {r23}");
    }

    #[test]
    fn zero_noise_zero_data_stays_zero() {
        let cfg = small_cfg(8, 0.7, 0.0);
        let path = NoisePath::sample_path(3, 0.01, -1.0, 1.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(0.01, (0.0, 0.5), 10, Scheme::OuSplitting).unwrap();
        let traj = solve_flow(&CoupledState::zeros(8), &path, &settings, &cfg).unwrap();
        for s in &traj.states {
            assert_eq!(s.norm_h(), 0.0);
        }
    }

    #[test]
    fn diagonal_data_stays_diagonal() {
        for lambda in [-1.0, 0.3, 1.0] {
            let cfg = small_cfg(16, lambda, 0.05);
            let path = NoisePath::sample_path(11, 1.0 / 512.0, -1.0, 1.0, &cfg.sigma).unwrap();
            let settings =
                SolverSettings::new(1.0 / 512.0, (0.0, 1.0), 16, Scheme::OuSplitting).unwrap();
            let u0 = random_coupled(5, 16, 0.2);
            let diag = CoupledState::diagonal(u0.u.clone());
            let traj = solve_flow(&diag, &path, &settings, &cfg).unwrap();
            let mut max_gap = 0.0f64;
            let mut max_u = 0.0f64;
            for s in &traj.states {
                max_gap = max_gap.max(s.u.sub(&s.w).unwrap().norm_h());
                max_u = max_u.max(s.u.norm_h());
            }
            assert!(max_gap <= 1e-8 * max_u.max(1e-12), "lambda {lambda}: gap {max_gap}");
        }
    }

    #[test]
    fn lambda_zero_decouples_bitwise() {
        let cfg = small_cfg(16, 0.0, 0.05);
        let dt = 1.0 / 512.0;
        let path = NoisePath::sample_path(17, dt, -1.0, 2.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(dt, (0.0, 1.0), 8, Scheme::OuSplitting).unwrap();
        let u0 = random_coupled(23, 16, 0.3);
        let coupled = solve_flow(&u0, &path, &settings, &cfg).unwrap();
        let single = solve_flow_single(&u0.u, &path, &settings, &cfg).unwrap();
        assert_eq!(coupled.states.len(), single.len());
        for (cs, (ts, ss)) in coupled.states.iter().zip(&single) {
            assert_eq!(cs.u, *ss, "u-component differs at t = {ts}");
        }
    }

    #[test]
    fn viscous_energy_decay_without_forcing() {
        // sigma = 0, lambda = 0: |u(t)|_H is nonincreasing along the flow
        let cfg = small_cfg(8, 0.0, 0.0);
        let dt = 1e-3;
        let path = NoisePath::sample_path(0, dt, -1.0, 1.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(dt, (0.0, 0.5), 1, Scheme::OuSplitting).unwrap();
        let u0 = random_coupled(9, 8, 0.1);
        let traj = solve_flow(&u0, &path, &settings, &cfg).unwrap();
        let mut prev = f64::INFINITY;
        for s in &traj.states {
            let h = s.norm_h();
            assert!(h <= prev * (1.0 + 1e-10), "energy grew: {h} after {prev}");
            prev = h;
        }
    }

    #[test]
    fn em_linear_decay_with_nonlinearity_suppressed() {
        let cfg = ModelConfig::new(
            1e-3,
            0.25,
            8,
            ModelKind::Goy,
            0.0,
            0.0,
            vec![],
            0.0,
            0.5,
        )
        .unwrap();
        let dt = 1.0 / 128.0;
        let path = NoisePath::sample_path(2, dt, 0.0, 1.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(dt, (0.0, 1.0), 128, Scheme::EulerMaruyama).unwrap();
        let mut u0 = CoupledState::zeros(8);
        u0.u.amplitudes_mut()[2] = Complex64::new(1.0, 0.0);
        let traj = em_run(&u0, &path, &settings, &cfg, false).unwrap();
        let m = 128;
        let k3 = 0.25 * 8.0;
        let expected = (1.0 - cfg.nu * k3 * k3 * dt).powi(m);
        let got = traj.final_state().u.amplitudes()[2].re;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn em_refuses_stiff_grids() {
        let cfg = small_cfg(16, 0.0, 0.01);
        // nu k_16^2 = 2^32: dt = 1e-3 is far beyond the explicit bound
        let path = NoisePath::sample_path(1, 1e-3, 0.0, 1.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(1e-3, (0.0, 0.1), 1, Scheme::EulerMaruyama).unwrap();
        match solve_sde_em(&CoupledState::zeros(16), &path, &settings, &cfg) {
            Err(ShellError::Stability(_)) => {}
            other => panic!("expected stability refusal, got {other:?}"),
        }
    }

    #[test]
    fn em_lambda_zero_decoupling() {
        // the u-component at lambda = 0 is independent of w0
        let cfg = ModelConfig::new(
            1e-4,
            0.05,
            8,
            ModelKind::Goy,
            0.0,
            0.0,
            vec![Complex64::new(0.05, 0.0); 4],
            0.0,
            0.5,
        )
        .unwrap();
        let dt = 1.0 / 256.0;
        let path = NoisePath::sample_path(7, dt, 0.0, 1.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(dt, (0.0, 1.0), 32, Scheme::EulerMaruyama).unwrap();
        let u = random_coupled(31, 8, 0.2);
        let a = solve_sde_em(&u, &path, &settings, &cfg).unwrap();
        let mut other = u.clone();
        other.w = ShellState::zeros(8);
        let b = solve_sde_em(&other, &path, &settings, &cfg).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.u, sb.u);
        }
    }

    #[test]
    fn cocycle_residual_vanishes() {
        let cfg = small_cfg(16, 0.4, 0.05);
        let dt = 1.0 / 512.0;
        let path = NoisePath::sample_path(41, dt, -1.0, 2.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(dt, (0.0, 1.0), 1, Scheme::OuSplitting).unwrap();
        let u0 = random_coupled(43, 16, 0.3);

        // s = 0 is the identity shift: residual exactly zero
        let r0 = verify_cocycle(&u0, &path, 0.0, 0.5, &settings, &cfg).unwrap();
        assert_eq!(r0, 0.0);

        let r = verify_cocycle(&u0, &path, 0.5, 0.5, &settings, &cfg).unwrap();
        let whole = solve_flow(&u0, &path, &settings.with_span(0.0, 1.0), &cfg).unwrap();
        let scale = whole.final_state().norm_h();
        assert!(r <= 1e-10 * scale.max(1e-12), "residual {r} vs scale {scale}");

        // independent of store_every
        let r2 = verify_cocycle(&u0, &path, 0.5, 0.5, &settings.with_store_every(64), &cfg).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn stationary_init_used_for_pullback_spans() {
        // a run starting in the past picks the stationary z, and the final
        // v = u - z is finite and small for contracting data
        let cfg = small_cfg(8, 0.0, 0.02);
        let dt = 1.0 / 128.0;
        let path = NoisePath::sample_path(4, dt, -20.0, 1.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(dt, (-10.0, 0.0), 1280, Scheme::OuSplitting).unwrap();
        let u0 = random_coupled(8, 8, 1.0);
        let traj = solve_flow(&u0, &path, &settings, &cfg).unwrap();
        assert!(traj.final_state().norm_h() < 1.0);
        // reconstruction identity: first stored state is exactly u0
        assert_eq!(traj.states[0], u0);
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let cfg = small_cfg(8, 0.2, 0.05);
        let dt = 1.0 / 64.0;
        let path = NoisePath::sample_path(6, dt, 0.0, 1.0, &cfg.sigma).unwrap();
        let settings = SolverSettings::new(dt, (0.0, 0.25), 4, Scheme::OuSplitting).unwrap();
        let traj = solve_flow(&random_coupled(2, 8, 0.1), &path, &settings, &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(std::io::Cursor::new(buf), cfg).unwrap();
        assert_eq!(back.times, traj.times);
        for (a, b) in back.states.iter().zip(&traj.states) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ou_state_stays_diagonal_through_steps() {
        let cfg = small_cfg(8, 0.0, 0.3);
        let dt = 0.01;
        let path = NoisePath::sample_path(5, dt, -1.0, 1.0, &cfg.sigma).unwrap();
        let mut state = ou_stationary_init(5, cfg.alpha, cfg.nu, cfg.k0, &cfg.sigma);
        for _ in 0..100 {
            state = crate::noise::ou_step(&state, &path, dt, cfg.nu, cfg.k0).unwrap();
            assert_eq!(state.z.u, state.z.w);
        }
    }
}
