//! Turbulence statistics and the lambda-continuity experiment: structure
//! functions, scaling-exponent fits, u-vs-w comparisons, and sup-norm
//! continuity curves in lambda.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, ShellError};
use crate::integrator::{solve_flow, SolverSettings, Trajectory};
use crate::noise::NoisePath;
use crate::shell_core::{wavenumber, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    U,
    W,
    /// q = u + lambda w with lambda taken from the trajectory config.
    Q,
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::U => write!(f, "u"),
            Component::W => write!(f, "w"),
            Component::Q => write!(f, "q"),
        }
    }
}

impl std::str::FromStr for Component {
    type Err = ShellError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u" => Ok(Component::U),
            "w" => Ok(Component::W),
            "q" => Ok(Component::Q),
            other => Err(ShellError::Domain(format!("unknown component {other:?}"))),
        }
    }
}

/// S_p(k_n) per shell: the time average of |amplitude|^p.
#[derive(Debug, Clone, Serialize)]
pub struct StructureTable {
    pub p: f64,
    pub component: Component,
    pub wavenumbers: Vec<f64>,
    pub values: Vec<f64>,
    pub t_window: (f64, f64),
    pub samples: usize,
}

fn component_amplitude(traj: &Trajectory, idx: usize, shell: usize, component: Component) -> f64 {
    let state = &traj.states[idx];
    match component {
        Component::U => state.u.amplitudes()[shell].norm(),
        Component::W => state.w.amplitudes()[shell].norm(),
        Component::Q => {
            (state.u.amplitudes()[shell] + traj.config.lambda * state.w.amplitudes()[shell]).norm()
        }
    }
}

/// S_p(k_n) = (1/T) int |u_n(t)|^p dt, trapezoid over the stored samples.
pub fn structure_function(traj: &Trajectory, p: f64, component: Component) -> Result<StructureTable> {
    if !(p > 0.0) {
        return Err(ShellError::Domain(format!("moment order must be positive, got {p}")));
    }
    if traj.states.is_empty() {
        return Err(ShellError::Domain("empty trajectory".into()));
    }
    let n = traj.n_shells();
    let m = traj.states.len();
    let mut values = vec![0.0f64; n];
    if m == 1 {
        for (shell, v) in values.iter_mut().enumerate() {
            *v = component_amplitude(traj, 0, shell, component).powf(p);
        }
    } else {
        let total = traj.times[m - 1] - traj.times[0];
        if !(total > 0.0) {
            return Err(ShellError::Domain("trajectory times must increase".into()));
        }
        for shell in 0..n {
            let mut acc = 0.0;
            for i in 0..m - 1 {
                let w = traj.times[i + 1] - traj.times[i];
                let a = component_amplitude(traj, i, shell, component).powf(p);
                let b = component_amplitude(traj, i + 1, shell, component).powf(p);
                acc += 0.5 * w * (a + b);
            }
            values[shell] = acc / total;
        }
    }
    let wavenumbers =
        (1..=n).map(|i| wavenumber(i, traj.config.k0)).collect::<Result<Vec<_>>>()?;
    Ok(StructureTable {
        p,
        component,
        wavenumbers,
        values,
        t_window: (traj.times[0], traj.times[m - 1]),
        samples: m,
    })
}

/// Least-squares slope of log S_p against log k_n over shells
/// `n_lo ..= n_hi` (1-based), negated, with the RMS fit residual.
pub fn fit_zeta(table: &StructureTable, n_lo: usize, n_hi: usize) -> Result<(f64, f64)> {
    if n_lo < 1 || n_hi > table.values.len() || n_hi < n_lo + 2 {
        return Err(ShellError::Domain(format!(
            "fit range [{n_lo}, {n_hi}] needs at least 3 shells inside 1..={}",
            table.values.len()
        )));
    }
    let mut xs = Vec::with_capacity(n_hi - n_lo + 1);
    let mut ys = Vec::with_capacity(n_hi - n_lo + 1);
    for shell in n_lo..=n_hi {
        let s = table.values[shell - 1];
        if !(s > 0.0) {
            return Err(ShellError::Domain(format!(
                "S_p is not positive at shell {shell} (value {s}); log fit undefined"
            )));
        }
        xs.push(table.wavenumbers[shell - 1].ln());
        ys.push(s.ln());
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    Ok((-slope, (rss / n).sqrt()))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub sup_distance: f64,
}

/// sup over initial points and stored times of
/// |phi^lambda(t) u0 - phi^lambda0(t) u0|_H~ on the shared path, per lambda;
/// rows ordered by |lambda - lambda0|.
#[allow(clippy::too_many_arguments)]
pub fn lambda_continuity_sweep(
    seed: u64,
    lambdas: &[f64],
    lambda0: f64,
    b_radius: f64,
    ensemble: usize,
    t_final: f64,
    settings: &SolverSettings,
    cfg: &ModelConfig,
) -> Result<Vec<SweepRow>> {
    if ensemble < 1 {
        return Err(ShellError::Domain("ensemble must hold at least one point".into()));
    }
    let path = NoisePath::sample_path(seed, settings.dt, 0.0, t_final, &cfg.sigma)?;
    let run = settings.with_span(0.0, t_final);
    let points: Vec<crate::shell_core::CoupledState> = (0..ensemble)
        .map(|m| crate::attractor::ball_point(seed, m as u64, cfg.n_shells, b_radius))
        .collect();

    let base: Result<Vec<Trajectory>> = points
        .par_iter()
        .map(|x0| solve_flow(x0, &path, &run, &cfg.with_lambda(lambda0)))
        .collect();
    let base = base?;

    let mut rows: Vec<SweepRow> = lambdas
        .par_iter()
        .map(|&l| {
            let mut sup = 0.0f64;
            for (x0, base_traj) in points.iter().zip(&base) {
                let traj = solve_flow(x0, &path, &run, &cfg.with_lambda(l))?;
                for (a, b) in traj.states.iter().zip(&base_traj.states) {
                    sup = sup.max(a.distance_h(b)?);
                }
            }
            Ok(SweepRow { lambda: l, sup_distance: sup })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| (a.lambda - lambda0).abs().total_cmp(&(b.lambda - lambda0).abs()));
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct UwRow {
    pub p: f64,
    pub zeta_u: f64,
    pub zeta_w: f64,
    pub gap: f64,
    pub residual_u: f64,
    pub residual_w: f64,
}

/// Side-by-side zeta fits for the u and w components. Exploratory output:
/// nothing asserts the exponents agree.
pub fn compare_uw_exponents(
    traj: &Trajectory,
    p_list: &[f64],
    range: (usize, usize),
) -> Result<Vec<UwRow>> {
    p_list
        .iter()
        .map(|&p| {
            let (zu, ru) = fit_zeta(&structure_function(traj, p, Component::U)?, range.0, range.1)?;
            let (zw, rw) = fit_zeta(&structure_function(traj, p, Component::W)?, range.0, range.1)?;
            Ok(UwRow { p, zeta_u: zu, zeta_w: zw, gap: (zu - zw).abs(), residual_u: ru, residual_w: rw })
        })
        .collect()
}
