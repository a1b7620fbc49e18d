use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shellflow::cli::{self, FileConfig};
use shellflow::integrator::Scheme;
use shellflow::stats::Component;

#[derive(Parser)]
#[command(
    name = "shellflow",
    version,
    about = "Stochastic GOY/Sabra shell models: pathwise integration, pullback attractors, \
             dimension bounds, turbulence statistics",
    after_help = "Exit codes: 0 ok, 2 usage/config, 3 numerical blow-up, 4 invariant violation.\n\
                  SHELLFLOW_THREADS caps the worker count.\n\n\
                  CSV formats:\n  \
                  trajectory.csv      t,shell,re,im,component   (component: u | w)\n  \
                  semicontinuity.csv  lambda,d_forward,d_backward,cloud_resolution\n  \
                  cloud_NN.csv        tag,re_1,im_1,...,re_N,im_N  (two rows per member, tags u/w)\n  \
                  structure.csv       p,shell,k_n,s_p\n  \
                  zeta.csv            p,zeta,residual,n_lo,n_hi"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file (key = value with sections)
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; every run is a deterministic function of (config, seed, flags)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the bilinear/noise invariant suites at N = 16
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Integrate one trajectory and write trajectory.csv + manifest.json
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Override the integration scheme from the config
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        /// Override the final time t1
        #[arg(long)]
        t1: Option<f64>,
        /// Override the coupling lambda
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Pullback clouds over a lambda grid and the semicontinuity table
    Attractor {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lambda grid override
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        /// Ensemble size override
        #[arg(long)]
        ensemble: Option<usize>,
        /// Pullback horizon override
        #[arg(long)]
        t_pullback: Option<f64>,
    },
    /// Squeezing constants, Hausdorff-dimension bound, pairwise verification
    Dimension {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        k2: Option<f64>,
        #[arg(long)]
        k3: Option<f64>,
        /// Ergodic averaging window override
        #[arg(long)]
        t_erg: Option<f64>,
        /// Projector rank override
        #[arg(long)]
        n_modes: Option<usize>,
    },
    /// Structure functions and scaling-exponent fits over a trajectory file
    Structure {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV produced by `simulate`
        #[arg(long)]
        trajectory: PathBuf,
        /// Moment orders to evaluate
        #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 4.0])]
        p: Vec<f64>,
        /// Fit range as two 1-based shell indices, e.g. --range 3,12
        #[arg(long, value_delimiter = ',')]
        range: Option<Vec<usize>>,
        /// Component to analyze: u, w, or q
        #[arg(long, default_value = "u")]
        component: Component,
        /// Re-verify the S_p(c w) = c^p S_p(w) identity on the loaded data
        #[arg(long)]
        check_homogeneity: bool,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum SchemeArg {
    #[value(name = "ou-splitting")]
    OuSplitting,
    #[value(name = "em")]
    EulerMaruyama,
}

fn load_config(common: &Common) -> shellflow::Result<FileConfig> {
    FileConfig::from_path(&common.config)
}

fn run() -> Result<(), (i32, String)> {
    if let Ok(threads) = std::env::var("SHELLFLOW_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }

    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Validate { common } => {
            load_config(common).and_then(|cfg| cli::cmd_validate(&cfg))
        }
        Command::Simulate { common, scheme, t1, lambda } => {
            load_config(common).and_then(|mut cfg| {
                if let Some(s) = scheme {
                    cfg.solver.scheme = match s {
                        SchemeArg::OuSplitting => Scheme::OuSplitting,
                        SchemeArg::EulerMaruyama => Scheme::EulerMaruyama,
                    };
                }
                if let Some(t1) = t1 {
                    cfg.solver.t1 = *t1;
                }
                if let Some(lambda) = lambda {
                    cfg.model.lambda = *lambda;
                }
                cli::cmd_simulate(&cfg, common.seed, &cli::resolve_out_dir(common.out.clone()))
            })
        }
        Command::Attractor { common, lambda_grid, ensemble, t_pullback } => {
            load_config(common).and_then(|mut cfg| {
                if let Some(grid) = lambda_grid {
                    cfg.attractor.lambda_grid = grid.clone();
                }
                if let Some(m) = ensemble {
                    cfg.attractor.ensemble = *m;
                }
                if let Some(t) = t_pullback {
                    cfg.attractor.t_pullback = *t;
                }
                cli::cmd_attractor(&cfg, common.seed, &cli::resolve_out_dir(common.out.clone()))
            })
        }
        Command::Dimension { common, k1, k2, k3, t_erg, n_modes } => {
            load_config(common).and_then(|mut cfg| {
                if let Some(k) = k1 {
                    cfg.dimension.k1 = *k;
                }
                if let Some(k) = k2 {
                    cfg.dimension.k2 = *k;
                }
                if let Some(k) = k3 {
                    cfg.dimension.k3 = *k;
                }
                if let Some(t) = t_erg {
                    cfg.dimension.t_erg = *t;
                }
                if let Some(n) = n_modes {
                    cfg.dimension.n_modes = *n;
                }
                cli::cmd_dimension(&cfg, common.seed, &cli::resolve_out_dir(common.out.clone()))
            })
        }
        Command::Structure {
            common,
            trajectory,
            p,
            range,
            component,
            check_homogeneity,
        } => load_config(common).and_then(|cfg| {
            let range = match range {
                Some(r) if r.len() == 2 => Some((r[0], r[1])),
                Some(_) => {
                    return Err(shellflow::ShellError::Config(
                        "--range takes exactly two shell indices, e.g. --range 3,12".into(),
                    ))
                }
                None => None,
            };
            cli::cmd_structure(
                &cfg,
                trajectory,
                p,
                range,
                *component,
                *check_homogeneity,
                common.seed,
                &cli::resolve_out_dir(common.out.clone()),
            )
        }),
    };

    outcome.map_err(|e| (cli::exit_code(&e), e.to_string()))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
