//! Batch front end: config parsing, run manifests, and the subcommand
//! implementations behind the `shellflow` binary.
//!
//! Exit-code contract: 0 ok, 2 usage/config, 3 numerical blow-up,
//! 4 invariant violation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attractor::{
    absorbing_radii, cloud_resolution, pullback_cloud, squeezing_constants,
    upper_semicontinuity_curve, verify_squeezing, CloudParams,
};
use crate::bilinear::{self, estimate_c_vh, estimate_cstar};
use crate::error::{Result, ShellError};
use crate::integrator::{solve_flow, solve_sde_em, Scheme, SolverSettings, Trajectory};
use crate::noise::{self, alpha_zero, NoisePath};
use crate::shell_core::{CoupledState, ModelConfig, ModelKind, ShellState};
use crate::stats::{fit_zeta, structure_function, Component};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Exit code an error maps to under the CLI contract.
pub fn exit_code(err: &ShellError) -> i32 {
    match err {
        ShellError::BlowUp { .. } => EXIT_BLOWUP,
        ShellError::InvariantViolation(_) => EXIT_INVARIANT,
        ShellError::Member { source, .. } => exit_code(source),
        _ => EXIT_CONFIG,
    }
}

/// One forcing amplitude in the config file: a real or an [re, im] pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaEntry {
    Real(f64),
    Pair([f64; 2]),
}

impl SigmaEntry {
    fn to_complex(self) -> Complex64 {
        match self {
            SigmaEntry::Real(re) => Complex64::new(re, 0.0),
            SigmaEntry::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

fn default_delta() -> f64 {
    0.5
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_store_every() -> usize {
    16
}
fn default_scheme() -> Scheme {
    Scheme::OuSplitting
}
fn default_initial_kind() -> String {
    "zero".into()
}
fn default_initial_radius() -> f64 {
    1.0
}
fn default_cstar_trials() -> usize {
    200
}
fn default_constant_seed() -> u64 {
    2024
}
fn default_t_horizon() -> f64 {
    100.0
}
fn default_ensemble() -> usize {
    16
}
fn default_t_pullback() -> f64 {
    25.0
}
fn default_lambda_grid() -> Vec<f64> {
    vec![0.0, 0.01, 0.1, 0.5]
}
fn default_k() -> f64 {
    1.0
}
fn default_n_modes() -> usize {
    6
}
fn default_t_erg() -> f64 {
    500.0
}
fn default_pairs() -> usize {
    50
}
fn default_t_verify() -> f64 {
    5.0
}
fn default_t_pullback_verify() -> f64 {
    5.0
}
fn default_c2_samples() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub nu: f64,
    pub k0: f64,
    pub n_shells: usize,
    pub kind: ModelKind,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub sigma: Vec<SigmaEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    pub dt: f64,
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "default_store_every")]
    pub store_every: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSection {
    #[serde(default = "default_initial_kind")]
    pub kind: String,
    #[serde(default = "default_initial_radius")]
    pub radius: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { kind: default_initial_kind(), radius: default_initial_radius() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorSection {
    #[serde(default = "default_cstar_trials")]
    pub cstar_trials: usize,
    #[serde(default = "default_constant_seed")]
    pub constant_seed: u64,
    #[serde(default = "default_t_horizon")]
    pub t_horizon: f64,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_t_pullback")]
    pub t_pullback: f64,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub lambda0: Option<f64>,
}

impl Default for AttractorSection {
    fn default() -> Self {
        Self {
            cstar_trials: default_cstar_trials(),
            constant_seed: default_constant_seed(),
            t_horizon: default_t_horizon(),
            ensemble: default_ensemble(),
            t_pullback: default_t_pullback(),
            lambda_grid: default_lambda_grid(),
            lambda0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSection {
    #[serde(default = "default_k")]
    pub k1: f64,
    #[serde(default = "default_k")]
    pub k2: f64,
    #[serde(default = "default_k")]
    pub k3: f64,
    #[serde(default = "default_n_modes")]
    pub n_modes: usize,
    #[serde(default = "default_t_erg")]
    pub t_erg: f64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_t_verify")]
    pub t_verify: f64,
    /// Pullback horizon of the verification cloud; kept short so proxy
    /// pairs have not collapsed to identical points.
    #[serde(default = "default_t_pullback_verify")]
    pub t_pullback_verify: f64,
    #[serde(default = "default_c2_samples")]
    pub c2_samples: usize,
}

impl Default for DimensionSection {
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            n_modes: default_n_modes(),
            t_erg: default_t_erg(),
            pairs: default_pairs(),
            t_verify: default_t_verify(),
            t_pullback_verify: default_t_pullback_verify(),
            c2_samples: default_c2_samples(),
        }
    }
}

/// The whole config file; flags override individual keys before a command
/// runs, and the resolved copy is embedded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    pub model: ModelSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub attractor: AttractorSection,
    #[serde(default)]
    pub dimension: DimensionSection,
}

impl FileConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ShellError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ShellError::Config(format!("config parse error: {e}")))
    }

    pub fn to_model_config(&self) -> Result<ModelConfig> {
        ModelConfig::new(
            self.model.nu,
            self.model.k0,
            self.model.n_shells,
            self.model.kind,
            self.model.delta,
            self.model.lambda,
            self.model.sigma.iter().map(|s| s.to_complex()).collect(),
            self.model.alpha,
            self.model.epsilon,
        )
    }

    pub fn to_solver_settings(&self) -> Result<SolverSettings> {
        SolverSettings::new(
            self.solver.dt,
            (self.solver.t0, self.solver.t1),
            self.solver.store_every,
            self.solver.scheme,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

/// Every emitted artifact references exactly one manifest; re-running a
/// manifest reproduces the outputs byte-identically. The timestamp is
/// informational: digests cover output files only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub build: String,
    pub command: String,
    pub timestamp_unix: u64,
    pub seed: u64,
    /// Complex Brownian normalization the results assume.
    pub noise_convention: String,
    pub config: FileConfig,
    pub params: serde_json::Value,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: FileConfig, params: serde_json::Value) -> Self {
        Self {
            schema_version: 1,
            tool: "shellflow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            build: option_env!("SHELLFLOW_BUILD_DESCRIBE").unwrap_or("unknown").into(),
            command: command.into(),
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed,
            noise_convention: "E|beta_n(t)|^2 = t (independent re/im of variance t/2)".into(),
            config,
            params,
            outputs: Vec::new(),
        }
    }

    pub fn emit(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| ShellError::Config(format!("manifest encode error: {e}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| ShellError::Config(format!("manifest parse error: {e}")))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let mut hex = String::with_capacity(64);
    for b in hasher.finalize() {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

fn write_output(dir: &Path, name: &str, contents: &[u8]) -> Result<OutputDigest> {
    let path = dir.join(name);
    let mut file = fs::File::create(&path)
        .map_err(|e| ShellError::Config(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(contents)?;
    drop(file);
    Ok(OutputDigest { path: name.into(), sha256: sha256_file(&path)? })
}

fn finish_manifest(dir: &Path, mut manifest: RunManifest, outputs: Vec<OutputDigest>) -> Result<()> {
    manifest.outputs = outputs;
    let text = manifest.emit()?;
    fs::write(dir.join("manifest.json"), text)?;
    println!("wrote {}", dir.join("manifest.json").display());
    Ok(())
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .map_err(|e| ShellError::Config(format!("cannot create {}: {e}", out.display())))
}

// ---------------------------------------------------------------------------
// validate

struct Check {
    name: &'static str,
    outcome: Result<()>,
}

fn run_validation_battery(cfg: &ModelConfig) -> Vec<Check> {
    let n = 16;
    let k0 = cfg.k0;
    let tol = 1e-12;
    let mut checks = Vec::new();

    let rand_state = |seed: u64, slot: u64| bilinear::random_state(seed, 9000 + slot, n);

    for (label, kind, delta) in [
        ("bilinear-energy-goy", ModelKind::Goy, 0.0),
        ("bilinear-energy-sabra", ModelKind::Sabra, cfg.delta),
    ] {
        let mut outcome = Ok(());
        for seed in 0..200u64 {
            let u = rand_state(seed, 0);
            let v = rand_state(seed, 1);
            let b = match bilinear::bilinear(kind, delta, &u, &v, k0) {
                Ok(b) => b,
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            };
            let residual = b.inner_h(&v).abs();
            let scale = u.norm_v(k0) * v.norm_h_sq();
            if residual > tol * scale.max(1e-300) {
                outcome = Err(ShellError::InvariantViolation(format!(
                    "energy annihilation failed for {label}: residual {residual:.3e} vs scale {scale:.3e}"
                )));
                break;
            }
        }
        checks.push(Check { name: label, outcome });
    }

    for (label, kind, delta) in [
        ("bilinear-skew-goy", ModelKind::Goy, 0.0),
        ("bilinear-skew-sabra", ModelKind::Sabra, cfg.delta),
    ] {
        let mut outcome = Ok(());
        for seed in 0..100u64 {
            let u = rand_state(seed, 2);
            let v = rand_state(seed, 3);
            let w = rand_state(seed, 4);
            let lhs = bilinear::bilinear(kind, delta, &u, &v, k0).map(|b| b.inner_h(&w));
            let rhs = bilinear::bilinear(kind, delta, &u, &w, k0).map(|b| -b.inner_h(&v));
            match (lhs, rhs) {
                (Ok(a), Ok(b)) => {
                    let scale = u.norm_v(k0) * v.norm_h() * w.norm_h();
                    if (a - b).abs() > tol * scale.max(1e-300) {
                        outcome = Err(ShellError::InvariantViolation(format!(
                            "skew pairing failed for {label}: {a} vs {b}"
                        )));
                        break;
                    }
                }
                (Err(e), _) | (_, Err(e)) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        checks.push(Check { name: label, outcome });
    }

    checks.push(Check {
        name: "ou-decay-exact",
        outcome: (|| {
            let sigma = vec![Complex64::ZERO; n];
            let dt = 0.05;
            let path = NoisePath::sample_path(1, dt, -1.0, 1.0, &sigma)?;
            let mut z = ShellState::zeros(n);
            z.amplitudes_mut()[0] = Complex64::new(1.0, 0.0);
            let mut state = noise::OuState::from_component(z, cfg.alpha, 0.0);
            for _ in 0..20 {
                state = noise::ou_step(&state, &path, dt, cfg.nu, k0)?;
            }
            let gamma = cfg.nu * (2.0 * k0) * (2.0 * k0) + cfg.alpha;
            let expected = (-gamma * 1.0).exp();
            let got = state.component().amplitudes()[0].re;
            if (got - expected).abs() > 1e-12 * expected.max(1e-300) {
                return Err(ShellError::InvariantViolation(format!(
                    "n-fold OU decay {got} differs from one-shot {expected}"
                )));
            }
            Ok(())
        })(),
    });

    checks.push(Check {
        name: "theta-shift-composition",
        outcome: (|| {
            let sigma: Vec<Complex64> = cfg.sigma.iter().copied().take(n).collect();
            let path = NoisePath::sample_path(7, 0.25, -2.0, 2.0, &sigma)?;
            let once = path.shift_theta(0.75)?.shift_theta(0.5)?;
            let direct = path.shift_theta(1.25)?;
            for j in -4..4 {
                for shell in 1..=sigma.len().max(1) {
                    if once.increment(shell, j) != direct.increment(shell, j) {
                        return Err(ShellError::InvariantViolation(
                            "theta shifts do not compose additively".into(),
                        ));
                    }
                }
            }
            if direct.brownian_at(1, 0.0)? != Complex64::ZERO {
                return Err(ShellError::InvariantViolation(
                    "shifted path does not re-anchor W(0) = 0".into(),
                ));
            }
            Ok(())
        })(),
    });

    checks.push(Check {
        name: "ou-stationary-moments",
        outcome: (|| {
            let mut sigma = vec![Complex64::ZERO; n];
            sigma[0] = Complex64::new(1.0, 0.0);
            let m = 4000;
            let mut acc = 0.0;
            for seed in 0..m {
                acc += noise::ou_stationary_init(seed, 0.0, 1.0, 1.0, &sigma)
                    .component()
                    .norm_v_sq(1.0);
            }
            let mean = acc / m as f64;
            let closed = noise::expected_v_norm_sq(0.0, 1.0, 1.0, &sigma);
            if (mean - closed).abs() > 0.10 * closed {
                return Err(ShellError::InvariantViolation(format!(
                    "stationary V-norm mean {mean} deviates from closed form {closed}"
                )));
            }
            Ok(())
        })(),
    });

    checks
}

/// Run the invariant battery at N = 16; prints one line per check plus any
/// spectrum warnings. Errors with the first failing invariant named.
pub fn cmd_validate(file_cfg: &FileConfig) -> Result<()> {
    let cfg = file_cfg.to_model_config()?;
    for w in cfg.spectrum_warnings() {
        println!("warning: {w}");
    }
    let checks = run_validation_battery(&cfg);
    let mut first_failure: Option<String> = None;
    for check in &checks {
        match &check.outcome {
            Ok(()) => println!("ok   {}", check.name),
            Err(e) => {
                println!("FAIL {}: {e}", check.name);
                if first_failure.is_none() {
                    first_failure = Some(check.name.to_string());
                }
            }
        }
    }
    if let Some(name) = first_failure {
        return Err(ShellError::Config(format!("invariant check failed: {name}")));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn initial_state(file_cfg: &FileConfig, cfg: &ModelConfig, seed: u64) -> Result<CoupledState> {
    match file_cfg.initial.kind.as_str() {
        "zero" => Ok(CoupledState::zeros(cfg.n_shells)),
        "ball" => Ok(crate::attractor::ball_point(seed, 0, cfg.n_shells, file_cfg.initial.radius)),
        other => Err(ShellError::Config(format!(
            "unknown initial.kind {other:?} (expected \"zero\" or \"ball\")"
        ))),
    }
}

/// Integrate one trajectory per the config's solver section; the entry point
/// shared by the CLI and the C bindings.
pub fn simulate_trajectory(file_cfg: &FileConfig, seed: u64) -> Result<Trajectory> {
    let cfg = file_cfg.to_model_config()?;
    let settings = file_cfg.to_solver_settings()?;
    let path = NoisePath::sample_path(
        seed,
        settings.dt,
        settings.t_span.0.min(0.0),
        settings.t_span.1.max(0.0),
        &cfg.sigma,
    )?;
    let u0 = initial_state(file_cfg, &cfg, seed)?;
    match settings.scheme {
        Scheme::OuSplitting => solve_flow(&u0, &path, &settings, &cfg),
        Scheme::EulerMaruyama => solve_sde_em(&u0, &path, &settings, &cfg),
    }
}

/// Integrate one trajectory and write trajectory.csv plus manifest.json.
pub fn cmd_simulate(file_cfg: &FileConfig, seed: u64, out: &Path) -> Result<()> {
    let cfg = file_cfg.to_model_config()?;
    for w in cfg.spectrum_warnings() {
        println!("warning: {w}");
    }
    ensure_out_dir(out)?;
    let traj = simulate_trajectory(file_cfg, seed)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let digest = write_output(out, "trajectory.csv", &csv)?;
    println!(
        "wrote {} ({} samples, scheme {})",
        out.join("trajectory.csv").display(),
        traj.times.len(),
        traj.scheme
    );
    let manifest = RunManifest::new(
        "simulate",
        seed,
        file_cfg.clone(),
        serde_json::json!({
            "scheme": traj.scheme.to_string(),
            "samples": traj.times.len(),
            "initial": file_cfg.initial.kind,
        }),
    );
    finish_manifest(out, manifest, vec![digest])
}

// ---------------------------------------------------------------------------
// attractor

fn cloud_csv(points: &[CoupledState]) -> String {
    let mut text = String::new();
    for p in points {
        text.push_str(&p.to_csv_rows());
        text.push('\n');
    }
    text
}

/// Pullback clouds over the lambda grid plus the semicontinuity table.
pub fn cmd_attractor(file_cfg: &FileConfig, seed: u64, out: &Path) -> Result<()> {
    let base_cfg = file_cfg.to_model_config()?;
    let settings = file_cfg.to_solver_settings()?;
    let att = &file_cfg.attractor;
    ensure_out_dir(out)?;

    let cstar = estimate_cstar(
        base_cfg.model,
        base_cfg.delta,
        base_cfg.k0,
        base_cfg.n_shells,
        att.cstar_trials,
        att.constant_seed,
    )?;
    let alpha0 = alpha_zero(base_cfg.nu, base_cfg.k0, &base_cfg.sigma, cstar)?;
    let cfg = base_cfg.with_alpha(alpha0);

    let lambda0 = att.lambda0.unwrap_or_else(|| {
        if att.lambda_grid.contains(&0.0) {
            0.0
        } else {
            att.lambda_grid[0]
        }
    });
    let params = CloudParams {
        ensemble: att.ensemble,
        t_pullback: att.t_pullback,
        t_horizon: att.t_horizon,
    };
    let (rows, clouds) = upper_semicontinuity_curve(
        seed,
        &att.lambda_grid,
        lambda0,
        &cfg,
        cstar,
        &params,
        &settings,
    )?;

    // radii are lambda-independent: one quadrature serves every cloud
    let radii_path =
        NoisePath::sample_path(seed, settings.dt, -att.t_pullback - att.t_horizon, 0.0, &cfg.sigma)?;
    let radii = absorbing_radii(&radii_path, &cfg, cstar, att.t_horizon)?;

    let mut outputs = Vec::new();
    let mut table = String::from("lambda,d_forward,d_backward,cloud_resolution\n");
    for row in &rows {
        table.push_str(&format!(
            "{},{},{},{}\n",
            row.lambda, row.d_forward, row.d_backward, row.cloud_resolution
        ));
    }
    outputs.push(write_output(out, "semicontinuity.csv", table.as_bytes())?);

    for (idx, (lambda, cloud)) in clouds.iter().enumerate() {
        let name = format!("cloud_{idx:02}.csv");
        outputs.push(write_output(out, &name, cloud_csv(&cloud.points).as_bytes())?);
        let meta = serde_json::json!({
            "lambda": lambda,
            "t_pullback": cloud.t_pullback,
            "ensemble": cloud.ensemble,
            "seed": cloud.seed,
            "r3_bound": radii.r3,
            "resolution": cloud_resolution(cloud),
            "alpha0": alpha0,
            "cstar": cstar,
        });
        let meta_name = format!("cloud_{idx:02}.json");
        outputs.push(write_output(out, &meta_name, meta.to_string().as_bytes())?);
    }
    println!("wrote {} clouds and semicontinuity.csv under {}", clouds.len(), out.display());

    let manifest = RunManifest::new(
        "attractor",
        seed,
        file_cfg.clone(),
        serde_json::json!({
            "lambda_grid": att.lambda_grid,
            "lambda0": lambda0,
            "ensemble": att.ensemble,
            "t_pullback": att.t_pullback,
            "alpha0": alpha0,
            "cstar": cstar,
            "r1_at_zero": radii.r1_at_zero(),
            "r2": radii.r2,
            "r3": radii.r3,
        }),
    );
    finish_manifest(out, manifest, outputs)
}

// ---------------------------------------------------------------------------
// dimension

/// Squeezing constants, the dimension bound, and the pairwise verification.
pub fn cmd_dimension(file_cfg: &FileConfig, seed: u64, out: &Path) -> Result<()> {
    let base_cfg = file_cfg.to_model_config()?;
    let settings = file_cfg.to_solver_settings()?;
    let att = &file_cfg.attractor;
    let dim = &file_cfg.dimension;
    ensure_out_dir(out)?;

    let cstar = estimate_cstar(
        base_cfg.model,
        base_cfg.delta,
        base_cfg.k0,
        base_cfg.n_shells,
        att.cstar_trials,
        att.constant_seed,
    )?;
    let c_vh = estimate_c_vh(
        base_cfg.model,
        base_cfg.delta,
        base_cfg.k0,
        base_cfg.n_shells,
        att.cstar_trials,
        att.constant_seed,
    )?;
    let alpha_star = noise::alpha_star(base_cfg.nu, base_cfg.k0, &base_cfg.sigma, cstar)?;
    let alpha0 = 2.0 * alpha_star;
    let cfg = base_cfg.with_alpha(alpha0);

    let path = NoisePath::sample_path(
        seed,
        settings.dt,
        -att.t_horizon,
        dim.t_erg.max(dim.t_verify),
        &cfg.sigma,
    )?;
    let report = squeezing_constants(
        &path,
        &cfg,
        cstar,
        c_vh,
        dim.t_erg,
        dim.n_modes,
        att.t_horizon,
        (dim.k1, dim.k2, dim.k3),
        dim.c2_samples,
    )?;

    let params = CloudParams {
        ensemble: att.ensemble.max(2),
        t_pullback: dim.t_pullback_verify,
        t_horizon: att.t_horizon,
    };
    let cloud = pullback_cloud(seed, cfg.lambda, &cfg, cstar, &params, &settings)?;
    let check = verify_squeezing(
        &cloud,
        &cfg,
        cstar,
        c_vh,
        dim.n_modes,
        dim.pairs,
        dim.t_verify,
        att.t_horizon,
        &settings,
    )?;

    let payload = serde_json::json!({
        "report": report,
        "verification": {
            "max_ratio_projected": check.max_ratio_projected,
            "max_ratio_complement": check.max_ratio_complement,
            "pairs": check.pairs,
        },
        "alpha_star": alpha_star,
        "alpha0": alpha0,
    });
    let outputs = vec![write_output(
        out,
        "squeezing_report.json",
        serde_json::to_string_pretty(&payload)
            .map_err(|e| ShellError::Config(format!("report encode error: {e}")))?
            .as_bytes(),
    )?];
    println!(
        "E(C_H) = {:.6}, dimension bound {:.3} at n = {} (projector rank {})",
        report.e_c_h, report.dim_bound, report.dim_modes, report.n_modes
    );

    let tol = 1.0 + 1e-6;
    if check.max_ratio_projected > tol || check.max_ratio_complement > tol {
        let manifest = RunManifest::new(
            "dimension",
            seed,
            file_cfg.clone(),
            serde_json::json!({"verification_failed": true}),
        );
        finish_manifest(out, manifest, outputs)?;
        return Err(ShellError::InvariantViolation(format!(
            "squeezing ratios exceed 1: projected {}, complement {}",
            check.max_ratio_projected, check.max_ratio_complement
        )));
    }

    let manifest = RunManifest::new(
        "dimension",
        seed,
        file_cfg.clone(),
        serde_json::json!({
            "k1": dim.k1, "k2": dim.k2, "k3": dim.k3,
            "n_modes": dim.n_modes,
            "t_erg": dim.t_erg,
            "pairs": dim.pairs,
            "alpha_star": alpha_star,
            "alpha0": alpha0,
            "cstar": cstar,
            "c": c_vh,
        }),
    );
    finish_manifest(out, manifest, outputs)
}

// ---------------------------------------------------------------------------
// structure

/// Default inertial range: the longest run of consecutive shells whose
/// local log2 slope of S_2 varies by less than 10%.
pub fn default_fit_range(s2: &[f64]) -> Option<(usize, usize)> {
    let n = s2.len();
    if n < 4 {
        return None;
    }
    let slopes: Vec<Option<f64>> = (0..n - 1)
        .map(|i| {
            if s2[i] > 0.0 && s2[i + 1] > 0.0 {
                Some((s2[i + 1] / s2[i]).log2())
            } else {
                None
            }
        })
        .collect();
    let mut best: Option<(usize, usize)> = None;
    let mut start = 0usize;
    let mut prev: Option<f64> = None;
    for (i, s) in slopes.iter().enumerate() {
        let extend = match (prev, s) {
            (Some(p), Some(c)) => (c - p).abs() <= 0.10 * p.abs().max(1e-12),
            _ => false,
        };
        if !extend {
            start = i;
        }
        if s.is_some() {
            let len = i - start + 1;
            let cur = (start + 1, i + 2); // shells are 1-based; slope i covers shells i+1, i+2
            if best.map_or(true, |(lo, hi)| len > hi - lo) && len >= 2 {
                best = Some(cur);
            }
        }
        prev = *s;
    }
    best.filter(|(lo, hi)| hi - lo >= 2)
}

/// Structure functions and zeta fits over a stored trajectory file.
#[allow(clippy::too_many_arguments)]
pub fn cmd_structure(
    file_cfg: &FileConfig,
    trajectory_file: &Path,
    p_list: &[f64],
    range: Option<(usize, usize)>,
    component: Component,
    check_homogeneity: bool,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let cfg = file_cfg.to_model_config()?;
    let file = fs::File::open(trajectory_file).map_err(|e| {
        ShellError::Config(format!("cannot open {}: {e}", trajectory_file.display()))
    })?;
    let traj = Trajectory::read_csv(std::io::BufReader::new(file), cfg)?;
    ensure_out_dir(out)?;

    let range = match range {
        Some(r) => r,
        None => {
            let s2 = structure_function(&traj, 2.0, component)?;
            default_fit_range(&s2.values).unwrap_or((2, traj.n_shells().saturating_sub(2).max(4)))
        }
    };

    let mut structure = String::from("p,shell,k_n,s_p\n");
    let mut zeta = String::from("p,zeta,residual,n_lo,n_hi\n");
    for &p in p_list {
        let table = structure_function(&traj, p, component)?;
        for (i, (k, v)) in table.wavenumbers.iter().zip(&table.values).enumerate() {
            structure.push_str(&format!("{},{},{},{}\n", p, i + 1, k, v));
        }
        let (z, residual) = fit_zeta(&table, range.0, range.1)?;
        zeta.push_str(&format!("{},{},{},{},{}\n", p, z, residual, range.0, range.1));
        println!("p = {p}: zeta_p = {z:.6} (residual {residual:.3e})");

        if check_homogeneity {
            let mut scaled = traj.clone();
            for s in &mut scaled.states {
                s.u = s.u.scaled(2.0);
                s.w = s.w.scaled(2.0);
            }
            let scaled_table = structure_function(&scaled, p, component)?;
            let factor = 2f64.powf(p);
            for (a, b) in scaled_table.values.iter().zip(&table.values) {
                if (a - factor * b).abs() > 1e-12 * (factor * b).abs().max(1e-300) {
                    return Err(ShellError::InvariantViolation(format!(
                        "structure-function homogeneity failed at p = {p}"
                    )));
                }
            }
            println!("p = {p}: homogeneity S_p(2w) = 2^p S_p(w) verified");
        }
    }

    let outputs = vec![
        write_output(out, "structure.csv", structure.as_bytes())?,
        write_output(out, "zeta.csv", zeta.as_bytes())?,
    ];
    let manifest = RunManifest::new(
        "structure",
        seed,
        file_cfg.clone(),
        serde_json::json!({
            "trajectory": trajectory_file.display().to_string(),
            "p_list": p_list,
            "range": [range.0, range.1],
            "component": component.to_string(),
        }),
    );
    finish_manifest(out, manifest, outputs)
}

/// Resolve the output directory, defaulting next to the config file.
pub fn resolve_out_dir(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("shellflow-out"))
}
