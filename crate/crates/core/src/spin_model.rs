//! Physical system definition: nuclei, NV sensor, magnetic field, and the
//! coupling constants derived from geometry.

use crate::constants::{gamma_for_species, larmor_khz, ANGSTROM, GAMMA_ELECTRON, HBAR, MU0_OVER_4PI};
use crate::{NvmrError, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Minimum internuclear distance, Å. Guards the 1/r³ singularity.
pub const MIN_INTERNUCLEAR_DISTANCE: f64 = 0.1;
/// Minimum NV–nucleus distance, Å.
pub const MIN_NV_DISTANCE: f64 = 1.0;

/// A spin-1/2 nucleus at a fixed position.
#[derive(Debug, Clone, PartialEq)]
pub struct Nucleus {
    pub species: String,
    /// Position in Ångström.
    pub position: Vector3<f64>,
    /// Gyromagnetic ratio γ/2π, MHz/T, signed.
    pub gamma: f64,
}

impl Nucleus {
    pub fn new(species: &str, position: Vector3<f64>) -> Result<Self> {
        let gamma = gamma_for_species(species).ok_or_else(|| {
            NvmrError::InvalidInput(format!(
                "unknown species `{species}` (supply an explicit gamma)"
            ))
        })?;
        Self::with_gamma(species, position, gamma)
    }

    pub fn with_gamma(species: &str, position: Vector3<f64>, gamma: f64) -> Result<Self> {
        if gamma == 0.0 {
            return Err(NvmrError::InvalidInput("gamma must be nonzero".into()));
        }
        if !position.iter().all(|x| x.is_finite()) {
            return Err(NvmrError::InvalidInput("non-finite nucleus position".into()));
        }
        Ok(Nucleus {
            species: species.to_string(),
            position,
            gamma,
        })
    }

    /// Larmor frequency in kHz at the given field magnitude (Gauss), signed.
    pub fn larmor_khz(&self, field_gauss: f64) -> f64 {
        larmor_khz(self.gamma, field_gauss)
    }
}

/// The NV sensor: position, quantization axis, and microwave Rabi frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct NvSensor {
    /// Position in Ångström (typically tens of Å below the molecule plane).
    pub position: Vector3<f64>,
    /// Unit vector along the NV symmetry axis.
    pub axis: Vector3<f64>,
    /// Effective microwave Rabi frequency Ω_nv, kHz.
    pub rabi_khz: f64,
}

impl NvSensor {
    pub fn new(position: Vector3<f64>, axis: Vector3<f64>, rabi_khz: f64) -> Result<Self> {
        if (axis.norm() - 1.0).abs() > 1e-12 {
            return Err(NvmrError::InvalidInput(format!(
                "NV axis must be a unit vector, |axis| = {}",
                axis.norm()
            )));
        }
        if rabi_khz < 0.0 {
            return Err(NvmrError::InvalidInput("NV Rabi frequency must be >= 0".into()));
        }
        Ok(NvSensor {
            position,
            axis,
            rabi_khz,
        })
    }
}

/// Static field plus the RF decoupling drive parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    /// Field magnitude, Gauss.
    pub magnitude_gauss: f64,
    /// Unit direction of the field.
    pub direction: Vector3<f64>,
    /// RF detuning Δ_p from the target Larmor frequency, kHz.
    pub rf_detuning_khz: f64,
    /// RF field strength Ω_p, kHz.
    pub rf_strength_khz: f64,
}

impl FieldConfig {
    pub fn new(
        magnitude_gauss: f64,
        direction: Vector3<f64>,
        rf_detuning_khz: f64,
        rf_strength_khz: f64,
    ) -> Result<Self> {
        if magnitude_gauss <= 0.0 {
            return Err(NvmrError::InvalidInput("field magnitude must be > 0".into()));
        }
        if (direction.norm() - 1.0).abs() > 1e-12 {
            return Err(NvmrError::InvalidInput(format!(
                "field direction must be a unit vector, |dir| = {}",
                direction.norm()
            )));
        }
        Ok(FieldConfig {
            magnitude_gauss,
            direction,
            rf_detuning_khz,
            rf_strength_khz,
        })
    }

    /// Effective nuclear energy scale ω_f = sqrt(Δ_p² + Ω_p²), kHz.
    pub fn omega_f_khz(&self) -> f64 {
        (self.rf_detuning_khz.powi(2) + self.rf_strength_khz.powi(2)).sqrt()
    }

    /// Checks the spin-spin decoupling condition Ω_p = √2·Δ_p (1e-9 relative).
    pub fn decoupling_condition_holds(&self) -> bool {
        let want = std::f64::consts::SQRT_2 * self.rf_detuning_khz;
        if want == 0.0 {
            return self.rf_strength_khz == 0.0;
        }
        ((self.rf_strength_khz - want) / want).abs() < 1e-9
    }
}

/// Which NV operator multiplies the g_parallel hyperfine term.
///
/// The effective Hamiltonian writes that term without an explicit NV
/// operator; all three readings are supported, default `SigmaX`
/// (eigenbasis of the drive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GParOperator {
    Identity,
    #[default]
    SigmaX,
    SigmaZ,
}

/// All coupling constants of a concrete geometry, in kHz.
#[derive(Debug, Clone)]
pub struct CouplingSet {
    /// Per-nucleus secular NV hyperfine component, kHz (signed).
    pub g_par: Vec<f64>,
    /// Per-nucleus transverse NV hyperfine magnitude, kHz (nonnegative).
    pub g_perp: Vec<f64>,
    /// Symmetric internuclear coupling matrix, kHz; `g_ij[i][j]`, zero diagonal.
    pub g_ij: Vec<Vec<f64>>,
    /// Unit vectors between nucleus pairs, `r_hat[i][j]` points from i to j.
    pub r_hat: Vec<Vec<Vector3<f64>>>,
}

/// The full physical system: nuclei plus NV sensor.
#[derive(Debug, Clone)]
pub struct SpinSystem {
    pub nuclei: Vec<Nucleus>,
    pub nv: NvSensor,
}

impl SpinSystem {
    pub fn new(nuclei: Vec<Nucleus>, nv: NvSensor) -> Result<Self> {
        if nuclei.is_empty() {
            return Err(NvmrError::InvalidInput("need at least one nucleus".into()));
        }
        for (i, a) in nuclei.iter().enumerate() {
            for b in nuclei.iter().skip(i + 1) {
                if (a.position - b.position).norm() <= MIN_INTERNUCLEAR_DISTANCE {
                    return Err(NvmrError::DegenerateGeometry(format!(
                        "nuclei {} and {} closer than {} Å",
                        a.species, b.species, MIN_INTERNUCLEAR_DISTANCE
                    )));
                }
            }
            if (a.position - nv.position).norm() <= MIN_NV_DISTANCE {
                return Err(NvmrError::DegenerateGeometry(format!(
                    "nucleus {i} within {MIN_NV_DISTANCE} Å of the NV"
                )));
            }
        }
        Ok(SpinSystem { nuclei, nv })
    }

    pub fn n_nuclei(&self) -> usize {
        self.nuclei.len()
    }

    /// Joint Hilbert-space dimension 2^(1+N).
    pub fn dim(&self) -> usize {
        1 << (1 + self.nuclei.len())
    }

    /// Indices of the nuclei matching a species label.
    pub fn species_indices(&self, species: &str) -> Vec<usize> {
        self.nuclei
            .iter()
            .enumerate()
            .filter(|(_, n)| n.species == species)
            .map(|(i, _)| i)
            .collect()
    }

    /// All coupling constants for this geometry under the given field.
    pub fn couplings(&self, field: &FieldConfig) -> Result<CouplingSet> {
        let n = self.nuclei.len();
        let mut g_par = Vec::with_capacity(n);
        let mut g_perp = Vec::with_capacity(n);
        for nuc in &self.nuclei {
            let (par, perp) = nv_hyperfine(&self.nv, nuc, &field.direction)?;
            g_par.push(par);
            g_perp.push(perp);
        }
        let mut g_ij = vec![vec![0.0; n]; n];
        let mut r_hat = vec![vec![Vector3::zeros(); n]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // Coupling normalized so that the observed doublet splitting
                // of a like-spin pair reproduces the (3cos²θ−1) prefactor:
                // the pair term appears twice in the i≠j sum and the secular
                // line splitting carries a 3/2, hence the 1/3 here.
                g_ij[i][j] = dipolar_constant(&self.nuclei[i], &self.nuclei[j])? / 3.0;
                r_hat[i][j] = (self.nuclei[j].position - self.nuclei[i].position).normalize();
            }
        }
        Ok(CouplingSet {
            g_par,
            g_perp,
            g_ij,
            r_hat,
        })
    }
}

/// Dipolar coupling prefactor (μ₀/4π)·ℏγ_aγ_b/r³ in kHz (signed).
pub fn dipolar_constant(a: &Nucleus, b: &Nucleus) -> Result<f64> {
    let r = (a.position - b.position).norm();
    if r <= MIN_INTERNUCLEAR_DISTANCE {
        return Err(NvmrError::DegenerateGeometry(format!(
            "internuclear distance {r} Å below the {MIN_INTERNUCLEAR_DISTANCE} Å exclusion radius"
        )));
    }
    let r_m = r * ANGSTROM;
    // gamma in MHz/T: nu[kHz] = mu0/4pi * hbar * 2pi * 1e9 * ga*gb / r³
    Ok(MU0_OVER_4PI * HBAR * std::f64::consts::TAU * 1e9 * a.gamma * b.gamma / r_m.powi(3))
}

/// Dipolar splitting prefactor·(3cos²θ−1), with cosθ = b̂·r̂, in kHz.
pub fn dipolar_splitting(a: &Nucleus, b: &Nucleus, field_dir: &Vector3<f64>) -> Result<f64> {
    if (field_dir.norm() - 1.0).abs() > 1e-12 {
        return Err(NvmrError::InvalidInput("field_dir must be a unit vector".into()));
    }
    let d = dipolar_constant(a, b)?;
    let r_hat = (b.position - a.position).normalize();
    let cos_theta = field_dir.dot(&r_hat);
    Ok(d * (3.0 * cos_theta * cos_theta - 1.0))
}

/// Secular decomposition of the NV electron–nuclear dipolar tensor.
///
/// The electron moment is taken along the NV axis; the returned pair is the
/// component of the resulting hyperfine field along the nuclear quantization
/// axis (g_par, signed) and the magnitude of the spin-flip component
/// (g_perp, nonnegative), both in kHz.
pub fn nv_hyperfine(nv: &NvSensor, n: &Nucleus, field_dir: &Vector3<f64>) -> Result<(f64, f64)> {
    let rel = n.position - nv.position;
    let r = rel.norm();
    if r <= MIN_NV_DISTANCE {
        return Err(NvmrError::DegenerateGeometry(format!(
            "NV–nucleus distance {r} Å below the {MIN_NV_DISTANCE} Å exclusion radius"
        )));
    }
    let r_m = r * ANGSTROM;
    let d = MU0_OVER_4PI * HBAR * std::f64::consts::TAU * 1e9 * GAMMA_ELECTRON * n.gamma
        / r_m.powi(3);
    let n_hat = rel / r;
    // a = d (3 n̂ (n̂·axis) − axis): hyperfine field from the electron spin
    // projected on the NV axis.
    let a = d * (3.0 * n_hat * n_hat.dot(&nv.axis) - nv.axis);
    let g_par = a.dot(field_dir);
    let g_perp = (a - g_par * field_dir).norm();
    Ok((g_par, g_perp))
}

/// Refined Hartmann–Hahn condition: Ω_nv = (γB − Δ_p) + ω_f, kHz, signed.
///
/// A negative value means the drive carries a π phase offset (the dressed
/// NV splitting still matches ω_f in the common interaction frame); the
/// physical drive amplitude is the magnitude.
pub fn hartmann_hahn_rabi(field: &FieldConfig, gamma_mhz_per_t: f64) -> f64 {
    larmor_khz(gamma_mhz_per_t, field.magnitude_gauss) - field.rf_detuning_khz
        + field.omega_f_khz()
}

/// Parse a molecule geometry file: one `species x y z` per line, Å, `#` comments.
pub fn parse_molecule(text: &str) -> Result<Vec<Nucleus>> {
    let mut nuclei = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(NvmrError::Parse(format!(
                "line {}: expected `species x y z`, got `{line}`",
                lineno + 1
            )));
        }
        let coord = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| NvmrError::Parse(format!("line {}: bad coordinate `{s}`", lineno + 1)))
        };
        nuclei.push(Nucleus::new(
            parts[0],
            Vector3::new(coord(parts[1])?, coord(parts[2])?, coord(parts[3])?),
        )?);
    }
    Ok(nuclei)
}
