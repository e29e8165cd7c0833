//! Inversion of measured dipolar splittings to internuclear geometry:
//! distance r and the orientation of the internuclear axis.
//!
//! The splitting at field direction b̂ is D·(3(b̂·û)² − 1) with
//! D = (μ₀/4π)ℏγ_aγ_b/r³. The fit scans the unit sphere for û (coarse
//! Fibonacci lattice plus shrinking local refinement); D then follows by
//! linear least squares, and r from |D|.

use crate::constants::{ANGSTROM, HBAR, MU0_OVER_4PI};
use crate::{NvmrError, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GeometryMeasurement {
    /// Unit field direction.
    pub direction: Vector3<f64>,
    /// Doublet splitting, kHz. Signed if the sign is known, magnitude
    /// otherwise (see `signed` on the fit call).
    pub splitting_khz: f64,
    /// One-sigma uncertainty, typically one DFT bin, kHz.
    pub uncertainty_khz: f64,
}

#[derive(Debug, Clone)]
pub struct GeometryFit {
    pub r_angstrom: f64,
    /// Representative of the ±û degeneracy class (û and −û are equivalent).
    pub axis: Vector3<f64>,
    /// RMS residual of the splittings, kHz.
    pub residual_khz: f64,
    /// 95% Monte-Carlo interval of r over uncertainty-sized perturbations, Å.
    pub r_uncertainty: f64,
    /// 95% Monte-Carlo interval of the axis orientation, radians.
    pub axis_uncertainty_rad: f64,
    /// False when the fitted coupling sign contradicts sign(γ_a·γ_b).
    pub sign_consistent: bool,
}

fn dipolar_prefactor(gamma_a: f64, gamma_b: f64) -> f64 {
    // kHz·Å³ when r is in Å
    MU0_OVER_4PI * HBAR * std::f64::consts::TAU * 1e9 * gamma_a * gamma_b / ANGSTROM.powi(3)
}

/// Coefficient 3(b̂·û)² − 1 per measurement.
fn coeffs(dirs: &[Vector3<f64>], u: &Vector3<f64>) -> Vec<f64> {
    dirs.iter()
        .map(|b| {
            let c = b.dot(u);
            3.0 * c * c - 1.0
        })
        .collect()
}

/// Best D and squared residual for a candidate axis. `sign` restricts D to
/// the physical sign of the gyromagnetic-ratio product; the unsigned model
/// compares against |D|·|3cos²θ−1|.
fn solve_d(s: &[f64], c: &[f64], unsigned: bool, sign: Option<f64>) -> (f64, f64) {
    let (num, den) = s.iter().zip(c.iter()).fold((0.0, 0.0), |(n, d), (&si, &ci)| {
        let ci = if unsigned { ci.abs() } else { ci };
        (n + si * ci, d + ci * ci)
    });
    let mut d_fit = if den > 0.0 { num / den } else { 0.0 };
    if let Some(sg) = sign {
        if d_fit * sg < 0.0 {
            d_fit = 0.0;
        }
    }
    let res: f64 = s
        .iter()
        .zip(c.iter())
        .map(|(&si, &ci)| {
            let ci = if unsigned { ci.abs() } else { ci };
            (si - d_fit * ci).powi(2)
        })
        .sum();
    (d_fit, res)
}

fn fibonacci_sphere(k: usize) -> Vec<Vector3<f64>> {
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    (0..k)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
            let phi = std::f64::consts::TAU * (i as f64 / golden).fract();
            let s = (1.0 - z * z).sqrt();
            Vector3::new(s * phi.cos(), s * phi.sin(), z)
        })
        .collect()
}

/// Scan + refine the axis; returns (û, D, squared residual).
///
/// Multi-start: the best few coarse lattice candidates are each refined by
/// a shrinking random search, so isolated local minima do not trap the fit.
fn best_axis(
    dirs: &[Vector3<f64>],
    s: &[f64],
    unsigned: bool,
    sign: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> (Vector3<f64>, f64, f64) {
    let mut coarse: Vec<(Vector3<f64>, f64, f64)> = fibonacci_sphere(2000)
        .into_iter()
        .map(|u| {
            let (d, res) = solve_d(s, &coeffs(dirs, &u), unsigned, sign);
            (u, d, res)
        })
        .collect();
    coarse.sort_by(|a, b| a.2.total_cmp(&b.2));
    // Keep well-separated starting points only.
    let mut starts: Vec<(Vector3<f64>, f64, f64)> = Vec::new();
    for c in coarse {
        if starts.len() >= 6 {
            break;
        }
        if starts.iter().all(|st| st.0.dot(&c.0).abs() < 0.95) || starts.is_empty() {
            starts.push(c);
        }
    }
    let mut best = (Vector3::z(), 0.0, f64::INFINITY);
    for start in starts {
        let mut local = start;
        let mut radius = 0.12_f64;
        for _ in 0..20 {
            for _ in 0..150 {
                let jitter = Vector3::new(
                    rng.gen_range(-radius..radius),
                    rng.gen_range(-radius..radius),
                    rng.gen_range(-radius..radius),
                );
                let u = (local.0 + jitter).normalize();
                let (d, res) = solve_d(s, &coeffs(dirs, &u), unsigned, sign);
                if res < local.2 {
                    local = (u, d, res);
                }
            }
            radius *= 0.5;
        }
        if local.2 < best.2 {
            best = local;
        }
    }
    best
}

/// Least-squares inversion of the dipolar splittings.
///
/// `signed` declares whether the measured splittings carry their sign; with
/// magnitude-only data the model compares against |D·(3cos²θ−1)|. At least
/// two non-collinear field directions with a nonzero splitting are needed.
pub fn fit_geometry(
    measurements: &[GeometryMeasurement],
    gamma_a: f64,
    gamma_b: f64,
    signed: bool,
    seed: u64,
) -> Result<GeometryFit> {
    if measurements.len() < 2 {
        return Err(NvmrError::InvalidInput(
            "need at least two field directions".into(),
        ));
    }
    let dirs: Vec<Vector3<f64>> = measurements
        .iter()
        .map(|m| m.direction.normalize())
        .collect();
    let collinear = dirs
        .iter()
        .skip(1)
        .all(|d| (d.dot(&dirs[0]).abs() - 1.0).abs() < 1e-9);
    if collinear {
        return Err(NvmrError::RankDeficient(
            "field directions are collinear; the axis is unconstrained".into(),
        ));
    }
    // A mutually orthogonal triple is a degenerate configuration: the three
    // splittings then sum to zero identically and read only the diagonal of
    // the coupling tensor, leaving a one-parameter family of exact (D, û)
    // solutions. Refuse instead of returning an arbitrary family member.
    if dirs.len() == 3
        && dirs[0].dot(&dirs[1]).abs() < 1e-9
        && dirs[0].dot(&dirs[2]).abs() < 1e-9
        && dirs[1].dot(&dirs[2]).abs() < 1e-9
    {
        return Err(NvmrError::RankDeficient(
            "three mutually orthogonal field directions underdetermine the \
             coupling strength; tilt at least one direction"
                .into(),
        ));
    }
    let s: Vec<f64> = measurements.iter().map(|m| m.splitting_khz).collect();
    if s.iter().all(|&x| x == 0.0) {
        return Err(NvmrError::InvalidInput(
            "all splittings are zero; a pair cannot sit at the magic angle \
             for every direction of a non-collinear set"
                .into(),
        ));
    }

    let unsigned = !signed;
    let pref = dipolar_prefactor(gamma_a, gamma_b);
    let sign = if unsigned { None } else { Some(pref.signum()) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (axis, d_fit, res2) = best_axis(&dirs, &s, unsigned, sign, &mut rng);
    if d_fit == 0.0 {
        return Err(NvmrError::RankDeficient(
            "dipolar coupling not identifiable from the data".into(),
        ));
    }

    let r = (pref.abs() / d_fit.abs()).cbrt();
    // A clearly better fit with the unphysical coupling sign means the
    // measured signs contradict the species pair.
    let sign_consistent = if unsigned {
        true
    } else {
        let scale: f64 = s.iter().map(|x| x * x).sum();
        if res2 <= 1e-12 * scale {
            // The physical sign already explains the data exactly.
            true
        } else {
            let (_, d_free, res_free) = best_axis(&dirs, &s, unsigned, None, &mut rng);
            !(res_free < 0.5 * res2 && d_free.signum() != pref.signum())
        }
    };

    // Error propagation: refit under uncertainty-sized perturbations.
    let mc = 64;
    let mut rs = Vec::with_capacity(mc);
    let mut angles = Vec::with_capacity(mc);
    for _ in 0..mc {
        let sp: Vec<f64> = measurements
            .iter()
            .map(|m| m.splitting_khz + rng.gen_range(-1.0..1.0) * m.uncertainty_khz)
            .collect();
        if sp.iter().all(|&x| x == 0.0) {
            continue;
        }
        let (ax, dp, _) = best_axis(&dirs, &sp, unsigned, sign, &mut rng);
        if dp != 0.0 {
            rs.push((pref.abs() / dp.abs()).cbrt());
            angles.push(ax.dot(&axis).abs().clamp(0.0, 1.0).acos());
        }
    }
    // Report a covering interval (95th percentile of the Monte-Carlo
    // deviations), not an RMS: callers compare |r_true − r| against it.
    let spread = |v: &[f64], center: f64| -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let mut dev: Vec<f64> = v.iter().map(|x| (x - center).abs()).collect();
        dev.sort_by(f64::total_cmp);
        dev[((dev.len() as f64 * 0.95) as usize).min(dev.len() - 1)]
    };

    Ok(GeometryFit {
        r_angstrom: r,
        axis,
        residual_khz: (res2 / measurements.len() as f64).sqrt(),
        r_uncertainty: spread(&rs, r),
        axis_uncertainty_rad: spread(&angles, 0.0),
        sign_consistent,
    })
}
