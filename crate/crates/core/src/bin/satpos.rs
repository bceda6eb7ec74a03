use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use satpos::harness::{
    self, run_contour, run_covariance_check, run_error_cdf, run_fisher_check, ErrorMetric, Experiment,
    ExperimentConfig, Format, Grid, Table,
};
use satpos::{Error, NoiseModel};

#[derive(Parser)]
#[command(name = "satpos", version, about = "Monte Carlo experiments for large-constellation positioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean and spread of √S·DOP over random geometries.
    Dop(Common),
    /// Density of the combined carrier-phase noise.
    NoisePdf(Common),
    /// Information retention h_M over a ratio sweep.
    Hcurve(Common),
    /// Log-likelihood over the first two coordinates of one instance.
    Contour(Common),
    /// Error distributions of pseudo-range, rounding and Bayesian positioning.
    ErrorCdf(Common),
    /// Probability that rounding resolves every ambiguity.
    Pcorr(Common),
    /// Score-variance against expected-curvature Fisher factors.
    FisherCheck(Common),
    /// Empirical against predicted limit covariances.
    CovCheck(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Pos3d,
    Posclock,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Satellite counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    sats: Option<Vec<usize>>,
    /// Pseudo-range noise std (m).
    #[arg(long)]
    sigma: Option<f64>,
    /// Carrier wavelength (m).
    #[arg(long)]
    lambda: Option<f64>,
    /// λ/σ̃; a comma separated sweep for noise-pdf, hcurve and pcorr.
    #[arg(long, value_delimiter = ',', conflicts_with = "sigma_cp")]
    ratio: Option<Vec<f64>>,
    /// Carrier-phase noise std (m).
    #[arg(long)]
    sigma_cp: Option<f64>,
    /// Ambiguity bound M.
    #[arg(long)]
    big_m: Option<u32>,
    /// Monte Carlo trials per satellite count
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    threads: Option<usize>,
    /// Multi-start count for the Bayesian estimator.
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long, value_enum, default_value = "pos3d")]
    error_metric: MetricArg,
    /// Monte Carlo samples for hcurve, fisher-check and cov-check.
    #[arg(long)]
    samples: Option<usize>,
    /// Grid half width (m) for contour and noise-pdf.
    #[arg(long)]
    half_width: Option<f64>,
    /// Grid points per axis for contour and noise-pdf.
    #[arg(long)]
    points: Option<usize>,
    /// Per-trial records with timings (error-cdf, cov-check).
    #[arg(long)]
    records: Option<PathBuf>,
}

fn single_ratio(ratios: &[f64]) -> Result<f64, Error> {
    match ratios {
        [r] => Ok(*r),
        _ => Err(Error::InvalidInput("this experiment takes a single --ratio".into())),
    }
}

fn build_config(experiment: Experiment, a: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::defaults(experiment);
    let sweep = matches!(experiment, Experiment::NoisePdf | Experiment::HCurve | Experiment::Pcorr);
    let mut nm = cfg.nm;
    if let Some(s) = a.sigma {
        nm.sigma = s;
    }
    if let Some(m) = a.big_m {
        nm.ambiguity_bound = m;
    }
    let old_ratio = nm.ratio();
    if let Some(l) = a.lambda {
        nm.wavelength = l;
        if l > 0.0 && a.sigma_cp.is_none() {
            nm.sigma_cp = l / old_ratio;
        }
    }
    if let Some(s) = a.sigma_cp {
        nm.sigma_cp = s;
    }
    if let Some(r) = &a.ratio {
        if sweep {
            cfg.ratios = r.clone();
        } else {
            nm = NoiseModel::from_ratio(nm.sigma, nm.wavelength, single_ratio(r)?, nm.ambiguity_bound)?;
        }
    }
    cfg.nm = nm;
    if let Some(s) = &a.sats {
        cfg.sat_counts = s.clone();
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.starts {
        cfg.solver.n_starts = n;
    }
    if let Some(n) = a.samples {
        cfg.samples = n;
    }
    if a.half_width.is_some() || a.points.is_some() {
        let base = cfg.grid.unwrap_or(Grid { center: [0.0, 0.0], half_width: 2.0 * nm.wavelength, points: 161 });
        cfg.grid = Some(Grid {
            center: base.center,
            half_width: a.half_width.unwrap_or(base.half_width),
            points: a.points.unwrap_or(base.points),
        });
    }
    cfg.threads = a.threads;
    cfg.output_path = a.out.as_ref().map(|p| p.display().to_string());
    cfg.format = match a.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    };
    cfg.error_metric = match a.error_metric {
        MetricArg::Pos3d => ErrorMetric::Pos3D,
        MetricArg::Posclock => ErrorMetric::PosClock4D,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_table(table: &Table, format: Format, path: Option<&PathBuf>) -> Result<(), Error> {
    match path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            table.write(format, &mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = io::stdout();
            table.write(format, stdout.lock())?;
        }
    }
    Ok(())
}

fn execute(experiment: Experiment, a: &Common) -> Result<(), Error> {
    let cfg = build_config(experiment, a)?;
    let format = cfg.format;
    let out = a.out.as_ref();
    satpos::parallel::with_threads(cfg.threads, || match experiment {
        Experiment::ErrorCdf => {
            let r = run_error_cdf(&cfg)?;
            for c in &r.cdfs {
                eprintln!("{}: median error {:.4} m", c.method, c.median());
            }
            eprintln!("standard resolution worse than pseudo-range in {:.1}% of trials", 100.0 * r.resolution_worse_fraction);
            if let Some(p) = &a.records {
                write_table(&r.records_table(), format, Some(p))?;
            }
            write_table(&r.cdf_table(), format, out)
        }
        Experiment::CovarianceCheck => {
            let r = run_covariance_check(&cfg)?;
            eprintln!("h = {:.6} ± {:.1e}", r.h_value, r.h_std_err);
            for row in &r.rows {
                eprintln!(
                    "{}: Frobenius deviation {:.2}%, nonconverged {}{}",
                    row.method,
                    100.0 * row.frobenius_rel_dev,
                    row.nonconverged,
                    if row.flagged { " (flagged)" } else { "" }
                );
            }
            if let Some(p) = &a.records {
                write_table(&r.records_table(), format, Some(p))?;
            }
            write_table(&r.table(), format, out)
        }
        Experiment::Contour => {
            let r = run_contour(&cfg)?;
            eprintln!(
                "{} strict local maxima; polished maximum at ({:.4}, {:.4}), gradient norm {:.1e}",
                r.local_maxima, r.polished[0], r.polished[1], r.polished_gradient_norm
            );
            write_table(&r.table(), format, out)
        }
        Experiment::FisherCheck => {
            let r = run_fisher_check(&cfg)?;
            eprintln!("I = {:.6}, J = {:.6}, |I - J| = {:.2} pooled std-err", r.i_factor.mean, r.j_factor.mean, r.pooled_z());
            write_table(&r.table(), format, out)
        }
        _ => write_table(&harness::run(&cfg)?, format, out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Dop(a) => (Experiment::Dop, a),
        Command::NoisePdf(a) => (Experiment::NoisePdf, a),
        Command::Hcurve(a) => (Experiment::HCurve, a),
        Command::Contour(a) => (Experiment::Contour, a),
        Command::ErrorCdf(a) => (Experiment::ErrorCdf, a),
        Command::Pcorr(a) => (Experiment::Pcorr, a),
        Command::FisherCheck(a) => (Experiment::FisherCheck, a),
        Command::CovCheck(a) => (Experiment::CovarianceCheck, a),
    };
    match execute(experiment, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidInput(_) | Error::WavelengthZero | Error::MissingH | Error::NoPrediction(_) => 2,
                Error::ResampleExhausted { .. } | Error::SingularGeometry { .. } => 3,
                Error::Io(_) => 1,
            })
        }
    }
}
