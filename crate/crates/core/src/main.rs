use clap::{Args, Parser, Subcommand};
use nvmr::completion::{svt_complete, SvtConfig};
use nvmr::config::{preset, validate_config, Resolved};
use nvmr::pipeline::{compare, cost_estimate, execute};
use nvmr::signal_io::SignalMatrix;
use nvmr::spectra::{find_peaks, Spectrum2D};
use nvmr::{NvmrError, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "nvmr", version, about = "NV-center 2D NMR simulator and reconstructor")]
struct Cli {
    /// Cap the rayon thread pool (also: NVMR_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Path to a TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Name of a built-in preset.
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn resolve(&self) -> Result<Resolved> {
        match (&self.config, &self.preset) {
            (Some(path), None) => validate_config(path),
            (None, Some(name)) => preset(name),
            _ => Err(NvmrError::config(
                "cli",
                "exactly one of --config or --preset is required",
            )),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a configuration, printing the resolved summary.
    Validate {
        #[command(flatten)]
        source: Source,
    },
    /// Execute a full run: simulate, optionally complete, write spectra.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory override (also: NVMR_OUTPUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Allow presets marked as large.
        #[arg(long)]
        large: bool,
    },
    /// Complete a sub-sampled signal matrix by singular value thresholding.
    Complete {
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        rank_cap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the 2D magnitude spectrum and peak table of a signal matrix.
    Spectrum {
        input: PathBuf,
        /// Grid time step in milliseconds.
        #[arg(long)]
        dt_ms: f64,
        /// Output directory for spectrum.tsv / .pgm / peaks.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare a candidate signal matrix against a reference.
    Compare {
        candidate: PathBuf,
        reference: PathBuf,
        #[arg(long)]
        dt_ms: f64,
        /// Halo radius (bins) around reference peaks in the weighted metric.
        #[arg(long, default_value_t = 1)]
        halo: usize,
    },
}

fn describe(r: &Resolved) -> String {
    let mut s = format!(
        "run `{}`\nconfig hash: {}\nnuclei: {}\nfield: {:.1} G\ngrid: {} x {} at dt = {:.6e} ms\n",
        r.name,
        r.config_hash(),
        r.system
            .nuclei
            .iter()
            .map(|n| n.species.clone())
            .collect::<Vec<_>>()
            .join(", "),
        r.field.magnitude_gauss,
        r.grid.n,
        r.grid.n,
        r.grid.dt_ms
    );
    s += &format!("estimated cost: {}\n", cost_estimate(r));
    if let Some((rate, seed)) = r.sampling {
        s += &format!("sampling: {:.1}% of entries, seed {}\n", rate * 100.0, seed);
    }
    s
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("NVMR_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| NvmrError::config("threads", e.to_string()))?;
    }

    match cli.command {
        Command::Validate { source } => {
            let r = source.resolve()?;
            print!("{}", describe(&r));
            println!("configuration is valid");
        }
        Command::Run { source, out, large } => {
            let mut r = source.resolve()?;
            if let Some(dir) = out {
                r.output_dir = dir;
            } else if let Ok(dir) = std::env::var("NVMR_OUTPUT_DIR") {
                r.output_dir = PathBuf::from(dir);
            }
            print!("{}", describe(&r));
            let manifest = execute(&r, large)?;
            println!(
                "run complete in {} ms; {} artifacts in {}",
                manifest.wall_clock_ms,
                manifest.outputs.len(),
                r.output_dir.display()
            );
            for (stage, ms) in &manifest.stages {
                println!("  {stage}: {ms} ms");
            }
        }
        Command::Complete {
            input,
            output,
            tau,
            delta,
            tol,
            max_iters,
            rank_cap,
            seed,
        } => {
            let observed = SignalMatrix::read_binary(&input)?;
            let mut cfg = SvtConfig::default();
            cfg.tau = tau;
            if let Some(d) = delta {
                cfg.delta = d;
            }
            if let Some(t) = tol {
                cfg.tol = t;
            }
            if let Some(m) = max_iters {
                cfg.max_iters = m;
            }
            cfg.rank_cap = rank_cap;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let (completed, report) = svt_complete(&observed, &cfg)?;
            completed.write_binary(&output)?;
            print!("{}", report.to_text());
            if !report.converged {
                return Err(NvmrError::NonConvergence(format!(
                    "residual {:.3e} after {} iterations",
                    report.residual, report.iterations
                )));
            }
        }
        Command::Spectrum { input, dt_ms, out } => {
            let signal = SignalMatrix::read_binary(&input)?;
            std::fs::create_dir_all(&out)?;
            let spectrum = Spectrum2D::from_signal(&signal, dt_ms)?;
            let n = spectrum.n;
            let mut text = String::new();
            for i in 0..n {
                let row: Vec<String> = (0..n)
                    .map(|j| format!("{:.6e}", spectrum.magnitude[i * n + j]))
                    .collect();
                text += &row.join("\t");
                text.push('\n');
            }
            std::fs::write(out.join("spectrum.tsv"), text)?;
            nvmr::render::write_pgm(&out.join("spectrum.pgm"), &spectrum.magnitude, n, true)?;
            let peaks = find_peaks(&spectrum, 0.2, 2);
            println!("{} peaks above threshold", peaks.len());
            for p in &peaks {
                println!(
                    "  ({:.3}, {:.3}) kHz  magnitude {:.3e}  {:?}",
                    spectrum.freq_khz(p.i),
                    spectrum.freq_khz(p.j),
                    p.magnitude,
                    p.kind
                );
            }
        }
        Command::Compare {
            candidate,
            reference,
            dt_ms,
            halo,
        } => {
            let c = SignalMatrix::read_binary(&candidate)?;
            let r = SignalMatrix::read_binary(&reference)?;
            let report = compare(&c, &r, dt_ms, halo)?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
