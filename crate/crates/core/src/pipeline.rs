//! End-to-end runs: execute a resolved configuration, write all artifacts,
//! and record a manifest with content digests; compare two signal matrices.

use crate::completion::{make_peak_weight, svt_complete, weighted_frobenius_error};
use crate::config::{ProtocolKind, Resolved};
use crate::protocols::{run_angle_sweep, run_cosy, run_strong_coupling};
use crate::render::{write_pgm, write_ppm};
use crate::signal_io::SignalMatrix;
use crate::spectra::{find_peaks, Peak, PeakKind, Spectrum2D};
use crate::{NvmrError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub preset: String,
    pub config_hash: String,
    pub tool_version: String,
    pub wall_clock_ms: u128,
    /// Stage name and elapsed milliseconds, in execution order.
    pub stages: Vec<(String, u128)>,
    pub outputs: Vec<OutputFile>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex::encode(h.finalize()))
}

struct Recorder {
    dir: PathBuf,
    outputs: Vec<OutputFile>,
}

impl Recorder {
    fn record(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: file_digest(&path)?,
        });
        Ok(path)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn write_peaks(path: &Path, spectrum: &Spectrum2D, peaks: &[Peak]) -> Result<()> {
    let mut text = String::from("i\tj\tf1_khz\tf2_khz\tmagnitude\tkind\n");
    for p in peaks {
        text += &format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6e}\t{}\n",
            p.i,
            p.j,
            spectrum.freq_khz(p.i),
            spectrum.freq_khz(p.j),
            p.magnitude,
            match p.kind {
                PeakKind::Diagonal => "diagonal",
                PeakKind::Cross => "cross",
            }
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn emit_spectrum(rec: &mut Recorder, stem: &str, signal: &SignalMatrix, dt_ms: f64) -> Result<()> {
    let spectrum = Spectrum2D::from_signal(signal, dt_ms)?;
    let n = spectrum.n;
    let mut text = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n)
            .map(|j| format!("{:.6e}", spectrum.magnitude[i * n + j]))
            .collect();
        text += &row.join("\t");
        text.push('\n');
    }
    std::fs::write(rec.path(&format!("{stem}.tsv")), text)?;
    rec.record(&format!("{stem}.tsv"))?;
    write_pgm(&rec.path(&format!("{stem}.pgm")), &spectrum.magnitude, n, true)?;
    rec.record(&format!("{stem}.pgm"))?;
    write_ppm(&rec.path(&format!("{stem}.ppm")), &spectrum.magnitude, n, true)?;
    rec.record(&format!("{stem}.ppm"))?;
    let peaks = find_peaks(&spectrum, 0.2, 2);
    write_peaks(&rec.path(&format!("{stem}_peaks.tsv")), &spectrum, &peaks)?;
    rec.record(&format!("{stem}_peaks.tsv"))?;
    Ok(())
}

/// Rough cost estimate printed before heavy runs: grid points times the
/// squared nuclear Hilbert-space dimension.
pub fn cost_estimate(resolved: &Resolved) -> String {
    let dim: usize = 1 << resolved.system.n_nuclei();
    let n = resolved.grid.n;
    let units = n as u128 * n as u128 * (dim as u128) * (dim as u128);
    format!(
        "{} x {} grid over a {dim}-dimensional nuclear space: ~{units} phase-sum units",
        n, n
    )
}

/// Execute a resolved run, writing all artifacts into `resolved.output_dir`.
pub fn execute(resolved: &Resolved, allow_large: bool) -> Result<RunManifest> {
    if resolved.requires_large && !allow_large {
        return Err(NvmrError::config(
            "preset",
            format!(
                "`{}` is a large run ({}); pass --large to proceed",
                resolved.name,
                cost_estimate(resolved)
            ),
        ));
    }
    std::fs::create_dir_all(&resolved.output_dir)?;
    let mut rec = Recorder {
        dir: resolved.output_dir.clone(),
        outputs: Vec::new(),
    };
    let started = Instant::now();
    let mut stages: Vec<(String, u128)> = Vec::new();
    let hash = resolved.config_hash();

    match &resolved.protocol {
        ProtocolKind::Cosy(settings) => {
            let grid = resolved.grid_with_mask()?;
            let t = Instant::now();
            let (mut signal, _stats) = run_cosy(&resolved.system, &resolved.field, &grid, settings)?;
            signal.provenance.config_hash = hash.clone();
            stages.push(("simulate".into(), t.elapsed().as_millis()));
            signal.write_binary(&rec.path("signal.nvsm"))?;
            rec.record("signal.nvsm")?;
            signal.write_tsv(&rec.path("signal.tsv"))?;
            rec.record("signal.tsv")?;
            let spectrum_source = if signal.is_complete() {
                signal
            } else {
                let t = Instant::now();
                let cfg = resolved.svt.clone().unwrap_or_default();
                let (completed, report) = svt_complete(&signal, &cfg)?;
                stages.push(("complete".into(), t.elapsed().as_millis()));
                completed.write_binary(&rec.path("completed.nvsm"))?;
                rec.record("completed.nvsm")?;
                std::fs::write(rec.path("completion_report.txt"), report.to_text())?;
                rec.record("completion_report.txt")?;
                if !report.converged {
                    return Err(NvmrError::NonConvergence(format!(
                        "matrix completion stopped at residual {:.3e} after {} iterations",
                        report.residual, report.iterations
                    )));
                }
                completed
            };
            let t = Instant::now();
            emit_spectrum(&mut rec, "spectrum", &spectrum_source, grid.dt_ms)?;
            stages.push(("spectrum".into(), t.elapsed().as_millis()));
        }
        ProtocolKind::Strong(settings) => {
            let grid = resolved.grid_with_mask()?;
            let t = Instant::now();
            let (mut signal, report) =
                run_strong_coupling(&resolved.system, &resolved.field, &grid, settings)?;
            signal.provenance.config_hash = hash.clone();
            stages.push(("simulate".into(), t.elapsed().as_millis()));
            signal.write_binary(&rec.path("signal.nvsm"))?;
            rec.record("signal.nvsm")?;
            std::fs::write(
                rec.path("strong_report.txt"),
                format!(
                    "tau_ms\t{:.6e}\nmax_nuclear_polarization\t{:.6e}\npoints_computed\t{}\n",
                    report.tau_ms, report.max_nuclear_polarization, report.stats.points_computed
                ),
            )?;
            rec.record("strong_report.txt")?;
            let spectrum_source = if signal.is_complete() {
                signal
            } else {
                let cfg = resolved.svt.clone().unwrap_or_default();
                let t = Instant::now();
                let (completed, svt_report) = svt_complete(&signal, &cfg)?;
                stages.push(("complete".into(), t.elapsed().as_millis()));
                completed.write_binary(&rec.path("completed.nvsm"))?;
                rec.record("completed.nvsm")?;
                std::fs::write(rec.path("completion_report.txt"), svt_report.to_text())?;
                rec.record("completion_report.txt")?;
                completed
            };
            let t = Instant::now();
            emit_spectrum(&mut rec, "spectrum", &spectrum_source, grid.dt_ms)?;
            stages.push(("spectrum".into(), t.elapsed().as_millis()));
        }
        ProtocolKind::AngleSweep { directions } => {
            let settings = match &resolved.system.nuclei.first() {
                Some(n) => crate::protocols::CosySettings::default_for(&resolved.system, &n.species),
                None => return Err(NvmrError::InvalidInput("empty system".into())),
            };
            let t = Instant::now();
            let points = run_angle_sweep(
                &resolved.system,
                &resolved.field,
                directions,
                resolved.grid.n,
                resolved.grid.dt_ms,
                &settings,
            )?;
            stages.push(("sweep".into(), t.elapsed().as_millis()));
            let mut text = String::from(
                "bx\tby\tbz\tsplitting_khz\tuncertainty_khz\tresolved\texpected_khz\n",
            );
            for p in &points {
                text += &format!(
                    "{:.9}\t{:.9}\t{:.9}\t{:.6}\t{:.6}\t{}\t{:.6}\n",
                    p.direction.x,
                    p.direction.y,
                    p.direction.z,
                    p.splitting_khz,
                    p.uncertainty_khz,
                    p.resolved,
                    p.expected_khz
                );
            }
            std::fs::write(rec.path("sweep.tsv"), text)?;
            rec.record("sweep.tsv")?;
        }
    }

    let manifest = RunManifest {
        preset: resolved.name.clone(),
        config_hash: hash,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_ms: started.elapsed().as_millis(),
        stages,
        outputs: rec.outputs,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| NvmrError::Parse(e.to_string()))?;
    std::fs::write(resolved.output_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

#[derive(Debug)]
pub struct ComparisonReport {
    pub unweighted_error: f64,
    pub weighted_error: f64,
    pub alpha: f64,
    /// Peaks of the reference spectrum with the offset (in bins, Chebyshev)
    /// to the nearest peak of the candidate spectrum.
    pub peak_offsets: Vec<(Peak, usize)>,
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "unweighted_error\t{:.6e}\nweighted_error\t{:.6e}\nalpha\t{:.6e}\n",
            self.unweighted_error, self.weighted_error, self.alpha
        );
        s += "reference_peak_i\treference_peak_j\toffset_bins\n";
        for (p, d) in &self.peak_offsets {
            s += &format!("{}\t{}\t{}\n", p.i, p.j, d);
        }
        s
    }
}

/// Compare a candidate signal matrix against a reference: spectral error
/// metrics (amplitude-calibrated, unweighted and peak-weighted) and peak
/// position offsets.
pub fn compare(candidate: &SignalMatrix, reference: &SignalMatrix, dt_ms: f64, halo: usize) -> Result<ComparisonReport> {
    if candidate.n() != reference.n() {
        return Err(NvmrError::DimensionMismatch(format!(
            "candidate is {0}x{0}, reference is {1}x{1}",
            candidate.n(),
            reference.n()
        )));
    }
    if !candidate.is_complete() || !reference.is_complete() {
        return Err(NvmrError::MaskedInput(
            "comparison requires complete matrices".into(),
        ));
    }
    let spec_c = Spectrum2D::from_signal(candidate, dt_ms)?;
    let spec_r = Spectrum2D::from_signal(reference, dt_ms)?;
    let n = spec_r.n;
    let uniform = vec![1.0; n * n];
    let (unweighted_error, _) =
        weighted_frobenius_error(&spec_c.magnitude, &spec_r.magnitude, &uniform, None)?;
    let ref_peaks = find_peaks(&spec_r, 0.2, 2);
    let (weighted_error, alpha) = if ref_peaks.is_empty() {
        (unweighted_error, 1.0)
    } else {
        let coords: Vec<(usize, usize)> = ref_peaks.iter().map(|p| (p.i, p.j)).collect();
        let w = make_peak_weight(n, &coords, halo)?;
        weighted_frobenius_error(&spec_c.magnitude, &spec_r.magnitude, &w, None)?
    };
    let cand_peaks = find_peaks(&spec_c, 0.2, 2);
    let peak_offsets = ref_peaks
        .into_iter()
        .map(|p| {
            let d = cand_peaks
                .iter()
                .map(|q| p.i.abs_diff(q.i).max(p.j.abs_diff(q.j)))
                .min()
                .unwrap_or(usize::MAX);
            (p, d)
        })
        .collect();
    Ok(ComparisonReport {
        unweighted_error,
        weighted_error,
        alpha,
        peak_offsets,
    })
}
