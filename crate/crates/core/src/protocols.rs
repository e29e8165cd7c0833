//! Measurement protocol runners: the polarized 2D correlation experiment,
//! the strong-coupling interaction sequence, and the field-angle sweep.
//!
//! All runners evolve only the nuclear register between pulses. The NV
//! enters through precomputed objects (polarization Kraus channel, readout
//! observable) so that a whole (t₁,t₂) grid reuses one eigendecomposition
//! of the free Hamiltonian; each grid point then costs O(dim²).

use crate::dynamics::{
    dp_observable, polarize_channel, pulse_unitary, transverse_mapping_pulse, Propagator,
    PulseAxis, PulseSpec,
};
use crate::operators::{
    build_free_h, build_free_h_nuclear, build_interaction_h, embed, plus_state, s_z, CMat,
};
use crate::signal_io::{Provenance, SignalMatrix};
use crate::spin_model::{hartmann_hahn_rabi, CouplingSet, FieldConfig, GParOperator, SpinSystem};
use crate::state::State;
use crate::{NvmrError, Result};
use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;

/// Sampling grid for a 2D time-domain run.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub n: usize,
    /// Dwell time per axis, ms.
    pub dt_ms: f64,
    /// Optional sampling mask (row-major, `true` = measure this point).
    pub mask: Option<Vec<bool>>,
}

impl GridSpec {
    pub fn new(n: usize, dt_ms: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(NvmrError::InvalidInput(format!(
                "grid size {n} must be a power of two >= 8"
            )));
        }
        if !(dt_ms > 0.0) {
            return Err(NvmrError::InvalidInput("dwell time must be > 0".into()));
        }
        Ok(GridSpec {
            n,
            dt_ms,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.n * self.n {
            return Err(NvmrError::DimensionMismatch("mask size".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn f_sample_khz(&self) -> f64 {
        1.0 / self.dt_ms
    }
}

/// Instrumentation: how much work a run actually did.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunStats {
    /// Grid points evaluated; equals |Ω| for masked runs, n² otherwise.
    pub points_computed: usize,
}

#[derive(Debug, Clone)]
pub struct CosySettings {
    pub readout_species: String,
    /// Species polarized before the pulse sequence, in order.
    pub polarize_species: Vec<String>,
    /// Hartmann–Hahn transfer repetitions per species.
    pub cycles: usize,
    /// Transfer window per cycle, ms; default is the half flip-flop time of
    /// the strongest-coupled nucleus of the species.
    pub tau_p_ms: Option<f64>,
    /// Readout interaction window, ms; default sits inside the perturbative
    /// validity region.
    pub tau_readout_ms: Option<f64>,
    pub gpar_operator: GParOperator,
    /// Transverse component mapped onto the readout (x or y).
    pub measure_axis: PulseAxis,
}

impl CosySettings {
    /// Readout on `readout_species`, every species in the system polarized.
    pub fn default_for(system: &SpinSystem, readout_species: &str) -> Self {
        let mut species: Vec<String> = Vec::new();
        for n in &system.nuclei {
            if !species.contains(&n.species) {
                species.push(n.species.clone());
            }
        }
        CosySettings {
            readout_species: readout_species.to_string(),
            polarize_species: species,
            cycles: 12,
            tau_p_ms: None,
            tau_readout_ms: None,
            gpar_operator: GParOperator::default(),
            measure_axis: PulseAxis::Y,
        }
    }
}

fn species_gamma(system: &SpinSystem, species: &str) -> Result<f64> {
    system
        .nuclei
        .iter()
        .find(|n| n.species == species)
        .map(|n| n.gamma)
        .ok_or_else(|| {
            NvmrError::config(
                "species",
                format!("species `{species}` not present in the system"),
            )
        })
}

/// Resolve the Hartmann–Hahn drive for a species; an unreachable resonance
/// is a configuration error, caught before any propagation.
fn hh_system(system: &SpinSystem, field: &FieldConfig, gamma: f64) -> Result<SpinSystem> {
    let rabi = hartmann_hahn_rabi(field, gamma);
    if rabi == 0.0 {
        return Err(NvmrError::config(
            "field",
            "Hartmann–Hahn condition needs zero Rabi frequency, not drivable",
        ));
    }
    let mut sys = system.clone();
    sys.nv.rabi_khz = rabi;
    Ok(sys)
}

/// Largest transverse NV coupling among the given nuclei, kHz.
fn max_g_perp(g_perp: &[f64], indices: &[usize]) -> f64 {
    indices
        .iter()
        .map(|&i| g_perp[i])
        .fold(0.0_f64, f64::max)
}

/// Apply one Kraus channel `cycles` times to a nuclear density matrix.
fn apply_cycles(rho: &CMat, kraus: &[CMat; 2], cycles: usize) -> CMat {
    let mut r = rho.clone();
    for _ in 0..cycles {
        r = &kraus[0] * &r * kraus[0].adjoint() + &kraus[1] * &r * kraus[1].adjoint();
    }
    r
}

/// Conjugate by the diagonal phase vector: (Λ M Λ†)[a,b] = p[a] M[a,b] p̄[b].
fn phase_sandwich(m: &CMat, phases: &nalgebra::DVector<Complex64>) -> CMat {
    let dim = m.nrows();
    CMat::from_fn(dim, dim, |a, b| phases[a] * m[(a, b)] * phases[b].conj())
}

/// Polarize the nuclear register species by species.
fn polarized_nuclear_state(
    system: &SpinSystem,
    field: &FieldConfig,
    settings: &CosySettings,
    couplings: &CouplingSet,
) -> Result<CMat> {
    let dim = 1 << system.n_nuclei();
    let mut rho = CMat::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0);
    for sp in &settings.polarize_species {
        let gamma = species_gamma(system, sp)?;
        let idx = system.species_indices(sp);
        let g_max = max_g_perp(&couplings.g_perp, &idx);
        if g_max <= 0.0 {
            return Err(NvmrError::config(
                "geometry",
                format!("species `{sp}` has no transverse NV coupling, cannot polarize"),
            ));
        }
        let tau_p = settings.tau_p_ms.unwrap_or(1.0 / (2.0 * g_max));
        let sys = hh_system(system, field, gamma)?;
        // The transfer drive addresses one species; during its window the
        // NV is decoupled from every other nucleus, so the channel does not
        // build spurious cross-species correlations through the sensor.
        let mut cpl_sp = couplings.clone();
        for (i, n) in system.nuclei.iter().enumerate() {
            if n.species != *sp {
                cpl_sp.g_par[i] = 0.0;
                cpl_sp.g_perp[i] = 0.0;
            }
        }
        let h_int =
            build_interaction_h(&sys, &cpl_sp, field, gamma, settings.gpar_operator)?;
        let prop = Propagator::new(&h_int);
        let kraus = polarize_channel(&prop, tau_p);
        rho = apply_cycles(&rho, &kraus, settings.cycles);
    }
    Ok(rho)
}

/// Readout observable on the nuclear space for the configured species and
/// measurement axis. Returns the observable and the τ actually used.
fn readout_observable(
    system: &SpinSystem,
    field: &FieldConfig,
    settings: &CosySettings,
    couplings: &CouplingSet,
) -> Result<(CMat, f64)> {
    let gamma = species_gamma(system, &settings.readout_species)?;
    let idx = system.species_indices(&settings.readout_species);
    let sum_g2: f64 = idx
        .iter()
        .map(|&i| (std::f64::consts::PI * couplings.g_perp[i]).powi(2))
        .sum();
    if sum_g2 <= 0.0 {
        return Err(NvmrError::config(
            "geometry",
            "readout species has no transverse NV coupling",
        ));
    }
    // 2τ²Σ(πg⊥)² = 0.5 keeps the readout inside its validity window.
    let tau = settings.tau_readout_ms.unwrap_or((0.25 / sum_g2).sqrt());
    let sys = hh_system(system, field, gamma)?;
    // Readout rides the same species-selective drive as the transfer: the
    // NV is decoupled from everything but the readout species, so residual
    // off-resonant sensitivity cannot leak other species into the signal.
    let mut cpl_sp = couplings.clone();
    for (i, n) in system.nuclei.iter().enumerate() {
        if n.species != settings.readout_species {
            cpl_sp.g_par[i] = 0.0;
            cpl_sp.g_perp[i] = 0.0;
        }
    }
    let h_int = build_interaction_h(&sys, &cpl_sp, field, gamma, settings.gpar_operator)?;
    let prop = Propagator::new(&h_int);
    let m = dp_observable(&prop, tau);
    let r = pulse_unitary(
        &transverse_mapping_pulse(settings.measure_axis)?,
        system,
        false,
    )?;
    Ok((r.adjoint() * m * r, tau))
}

/// Polarized two-dimensional correlation run.
///
/// Sequence per grid point: polarize, hard π/2, free evolution t₁, hard
/// π/2, free evolution t₂, transverse NV readout of the configured species.
/// The output entry is the population difference ΔP(t₁, t₂).
pub fn run_cosy(
    system: &SpinSystem,
    field: &FieldConfig,
    grid: &GridSpec,
    settings: &CosySettings,
) -> Result<(SignalMatrix, RunStats)> {
    let couplings = system.couplings(field)?;
    run_cosy_with(system, field, grid, settings, &couplings)
}

/// [`run_cosy`] with an explicit coupling set, e.g. to switch off the
/// internuclear couplings as a control.
pub fn run_cosy_with(
    system: &SpinSystem,
    field: &FieldConfig,
    grid: &GridSpec,
    settings: &CosySettings,
    couplings: &CouplingSet,
) -> Result<(SignalMatrix, RunStats)> {
    let n_nuc = system.n_nuclei();
    let dim = 1 << n_nuc;

    let rho0 = polarized_nuclear_state(system, field, settings, couplings)?;
    let (m_read, _tau) = readout_observable(system, field, settings, couplings)?;

    let pulse = PulseSpec::new(None, PulseAxis::X, std::f64::consts::FRAC_PI_2)?;
    let p = pulse_unitary(&pulse, system, false)?;

    let h_free = build_free_h_nuclear(system, couplings, field)?;
    let prop = Propagator::new(&h_free);
    let v = &prop.eigvecs;
    let vh = v.adjoint();

    // Everything in the eigenbasis of the free Hamiltonian.
    let rho1_t = &vh * &p * &rho0 * p.adjoint() * v;
    let p_t = &vh * &p * v;
    let m_t = &vh * &m_read * v;

    let n = grid.n;
    let mut values = vec![f64::NAN; n * n];
    let stats = RunStats {
        points_computed: grid
            .mask
            .as_ref()
            .map_or(n * n, |m| m.iter().filter(|&&b| b).count()),
    };

    values
        .par_chunks_mut(n)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let row_mask = grid.mask.as_ref().map(|m| &m[i * n..(i + 1) * n]);
            if row_mask.is_some_and(|rm| rm.iter().all(|&b| !b)) {
                return Ok(());
            }
            let t1 = i as f64 * grid.dt_ms;
            let rho_t1 = phase_sandwich(&rho1_t, &prop.phases(t1));
            let a = &p_t * rho_t1 * p_t.adjoint();
            // C[a,b] = M[a,b]·A[b,a]; ΔP(t₂) = Σ C[a,b] e^{i(λ_a−λ_b)t₂}.
            let cmat = CMat::from_fn(dim, dim, |x, y| m_t[(x, y)] * a[(y, x)]);
            for (j, out) in row.iter_mut().enumerate() {
                if row_mask.is_some_and(|rm| !rm[j]) {
                    continue;
                }
                let t2 = j as f64 * grid.dt_ms;
                let ph = prop.phases(t2);
                // e^{iλt} is the conjugate of the propagator phase.
                let mut s = Complex64::new(0.0, 0.0);
                for x in 0..dim {
                    let px = ph[x].conj();
                    for y in 0..dim {
                        s += cmat[(x, y)] * px * ph[y];
                    }
                }
                *out = s.re;
            }
            Ok(())
        })?;

    let prov = Provenance {
        protocol: "cosy".into(),
        config_hash: String::new(),
    };
    let sig = match &grid.mask {
        None => SignalMatrix::new_full(n, values, prov)?,
        Some(m) => SignalMatrix::new_masked(n, values, m.clone(), prov)?,
    };
    Ok((sig, stats))
}

#[derive(Debug, Clone)]
pub struct StrongCouplingSettings {
    /// Species the drive is tuned to.
    pub target_species: String,
    /// Interaction window, ms; default half flip-flop of the
    /// strongest-coupled nucleus.
    pub tau_ms: Option<f64>,
    pub gpar_operator: GParOperator,
}

#[derive(Debug, Clone)]
pub struct StrongCouplingReport {
    pub stats: RunStats,
    /// max over grid and nuclei of |⟨s_i^z⟩| after the full sequence; small
    /// values confirm the sequence does not build up nuclear polarization.
    pub max_nuclear_polarization: f64,
    pub tau_ms: f64,
}

/// Strong-coupling sequence for unpolarized heteronuclear clusters.
///
/// The NV starts in |+⟩ and interacts for τ, the register evolves freely for
/// t₁, interacts for τ, evolves for t₂, interacts for τ; the signal is the
/// probability of finding the NV back in |+⟩.
pub fn run_strong_coupling(
    system: &SpinSystem,
    field: &FieldConfig,
    grid: &GridSpec,
    settings: &StrongCouplingSettings,
) -> Result<(SignalMatrix, StrongCouplingReport)> {
    let n_nuc = system.n_nuclei();
    let n_sites = n_nuc + 1;
    let dim = 1 << n_sites;
    let couplings = system.couplings(field)?;
    let gamma = species_gamma(system, &settings.target_species)?;

    let g_max = couplings.g_perp.iter().cloned().fold(0.0_f64, f64::max);
    if g_max <= 0.0 {
        return Err(NvmrError::config(
            "geometry",
            "no transverse NV coupling in the system",
        ));
    }
    let tau = settings.tau_ms.unwrap_or(1.0 / (2.0 * g_max));

    let sys = hh_system(system, field, gamma)?;
    let h_int = build_interaction_h(&sys, &couplings, field, gamma, settings.gpar_operator)?;
    let u_tau = Propagator::new(&h_int).unitary(tau);

    let h_free = build_free_h(system, &couplings, field)?;
    let prop = Propagator::new(&h_free);
    let v = &prop.eigvecs;
    let vh = v.adjoint();

    // NV in |+⟩, nuclei maximally mixed; first interaction applied up front.
    let rho0 = State::maximally_mixed(n_sites)
        .reset_first(&plus_state())
        .to_density();
    let rho1 = &u_tau * rho0 * u_tau.adjoint();

    // NV |+⟩⟨+| ⊗ 1 projector.
    let half = dim / 2;
    let plus = plus_state();
    let mut proj = CMat::zeros(dim, dim);
    for e in 0..2 {
        for f in 0..2 {
            let w = plus[e] * plus[f].conj();
            for a in 0..half {
                proj[(e * half + a, f * half + a)] = w;
            }
        }
    }

    // Observables pulled back through the final interaction window, then
    // into the eigenbasis.
    let o_sig = &vh * u_tau.adjoint() * &proj * &u_tau * v;
    let mut o_pol: Vec<CMat> = Vec::with_capacity(n_nuc);
    for i in 0..n_nuc {
        let sz = embed(&s_z(), i + 1, n_sites)?;
        o_pol.push(&vh * u_tau.adjoint() * sz * &u_tau * v);
    }

    let rho1_t = &vh * rho1 * v;
    let u_t = &vh * &u_tau * v;

    let n = grid.n;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let row_mask = grid.mask.as_ref().map(|m| &m[i * n..(i + 1) * n]);
            let mut row = vec![f64::NAN; n];
            let mut max_pol = 0.0_f64;
            if row_mask.is_some_and(|rm| rm.iter().all(|&b| !b)) {
                return (row, max_pol);
            }
            let t1 = i as f64 * grid.dt_ms;
            let rho_t1 = phase_sandwich(&rho1_t, &prop.phases(t1));
            let rho2 = &u_t * rho_t1 * u_t.adjoint();
            for (j, out) in row.iter_mut().enumerate() {
                if row_mask.is_some_and(|rm| !rm[j]) {
                    continue;
                }
                let t2 = j as f64 * grid.dt_ms;
                let ph = prop.phases(t2);
                // Tr[O ρ(t₂)] with ρ(t₂) = Λρ₂Λ†.
                let tr = |o: &CMat| -> f64 {
                    let mut s = Complex64::new(0.0, 0.0);
                    for x in 0..dim {
                        for y in 0..dim {
                            s += o[(x, y)] * ph[y] * rho2[(y, x)] * ph[x].conj();
                        }
                    }
                    s.re
                };
                *out = tr(&o_sig);
                for o in &o_pol {
                    max_pol = max_pol.max(tr(o).abs());
                }
            }
            (row, max_pol)
        })
        .collect_into_vec(&mut rows);

    let mut values = Vec::with_capacity(n * n);
    let mut max_pol = 0.0_f64;
    for (row, mp) in rows {
        values.extend(row);
        max_pol = max_pol.max(mp);
    }
    let stats = RunStats {
        points_computed: grid
            .mask
            .as_ref()
            .map_or(n * n, |m| m.iter().filter(|&&b| b).count()),
    };
    let prov = Provenance {
        protocol: "strong-coupling".into(),
        config_hash: String::new(),
    };
    let sig = match &grid.mask {
        None => SignalMatrix::new_full(n, values, prov)?,
        Some(m) => SignalMatrix::new_masked(n, values, m.clone(), prov)?,
    };
    Ok((
        sig,
        StrongCouplingReport {
            stats,
            max_nuclear_polarization: max_pol,
            tau_ms: tau,
        },
    ))
}

/// One orientation of the field-angle sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub direction: Vector3<f64>,
    pub splitting_khz: f64,
    /// One frequency bin of the finite record, 1/(n·dt).
    pub uncertainty_khz: f64,
    pub resolved: bool,
    /// Analytic splitting for this orientation, kHz (signed).
    pub expected_khz: f64,
}

/// One-dimensional free-evolution signal after polarization and a π/2 pulse.
pub fn run_fid(
    system: &SpinSystem,
    field: &FieldConfig,
    n: usize,
    dt_ms: f64,
    settings: &CosySettings,
) -> Result<Vec<f64>> {
    let dim = 1 << system.n_nuclei();
    let couplings = system.couplings(field)?;
    let rho0 = polarized_nuclear_state(system, field, settings, &couplings)?;
    let (m_read, _) = readout_observable(system, field, settings, &couplings)?;
    let pulse = PulseSpec::new(None, PulseAxis::X, std::f64::consts::FRAC_PI_2)?;
    let p = pulse_unitary(&pulse, system, false)?;
    let h_free = build_free_h_nuclear(system, &couplings, field)?;
    let prop = Propagator::new(&h_free);
    let v = &prop.eigvecs;
    let vh = v.adjoint();
    let a = &vh * &p * rho0 * p.adjoint() * v;
    let m_t = &vh * &m_read * v;
    let cmat = CMat::from_fn(dim, dim, |x, y| m_t[(x, y)] * a[(y, x)]);
    let sig: Vec<f64> = (0..n)
        .map(|k| {
            let ph = prop.phases(k as f64 * dt_ms);
            let mut s = Complex64::new(0.0, 0.0);
            for x in 0..dim {
                for y in 0..dim {
                    s += cmat[(x, y)] * ph[x].conj() * ph[y];
                }
            }
            s.re
        })
        .collect();
    Ok(sig)
}

/// Sweep the field direction and extract the dipolar doublet splitting of a
/// two-nucleus system from the spectrum at each orientation.
pub fn run_angle_sweep(
    system: &SpinSystem,
    field_template: &FieldConfig,
    directions: &[Vector3<f64>],
    n: usize,
    dt_ms: f64,
    settings: &CosySettings,
) -> Result<Vec<SweepPoint>> {
    if system.n_nuclei() != 2 {
        return Err(NvmrError::InvalidInput(
            "angle sweep requires exactly two nuclei".into(),
        ));
    }
    let mut out = Vec::with_capacity(directions.len());
    for dir in directions {
        let d = dir.normalize();
        let field = FieldConfig::new(
            field_template.magnitude_gauss,
            d,
            field_template.rf_detuning_khz,
            field_template.rf_strength_khz,
        )?;
        let sig = run_fid(system, &field, n, dt_ms, settings)?;
        let mag: Vec<f64> = crate::spectra::dft1(&sig).iter().map(|z| z.norm()).collect();
        let est = crate::spectra::splitting_from_magnitude(&mag, 1.0 / dt_ms, 0.25);
        let expected =
            crate::spin_model::dipolar_splitting(&system.nuclei[0], &system.nuclei[1], &d)?;
        out.push(SweepPoint {
            direction: d,
            splitting_khz: est.splitting_khz,
            uncertainty_khz: est.uncertainty_khz,
            resolved: est.resolved,
            expected_khz: expected,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::make_mask;
    use crate::spin_model::{Nucleus, NvSensor};
    use nalgebra::Vector3;

    fn two_proton_system() -> (SpinSystem, FieldConfig) {
        let nuclei = vec![
            Nucleus::new("1H", Vector3::new(0.0, 0.0, 0.0)).unwrap(),
            Nucleus::new("1H", Vector3::new(1.6, 0.0, 1.2)).unwrap(),
        ];
        let nv = NvSensor::new(Vector3::new(0.0, 0.0, -30.0), Vector3::z(), 100.0).unwrap();
        let sys = SpinSystem::new(nuclei, nv).unwrap();
        let dp = 115.47;
        let field =
            FieldConfig::new(50.0, Vector3::z(), dp, std::f64::consts::SQRT_2 * dp).unwrap();
        (sys, field)
    }

    fn hetero_system() -> (SpinSystem, FieldConfig) {
        let nuclei = vec![
            Nucleus::new("1H", Vector3::new(0.0, 0.0, 0.0)).unwrap(),
            Nucleus::new("15N", Vector3::new(1.4, 0.0, 0.8)).unwrap(),
        ];
        let nv = NvSensor::new(Vector3::new(0.0, 0.0, -25.0), Vector3::z(), 100.0).unwrap();
        let sys = SpinSystem::new(nuclei, nv).unwrap();
        let dp = 115.47;
        let field =
            FieldConfig::new(100.0, Vector3::z(), dp, std::f64::consts::SQRT_2 * dp).unwrap();
        (sys, field)
    }

    #[test]
    fn grid_spec_rejects_bad_sizes() {
        assert!(GridSpec::new(7, 0.1).is_err());
        assert!(GridSpec::new(12, 0.1).is_err());
        assert!(GridSpec::new(16, 0.0).is_err());
        assert!(GridSpec::new(16, 0.1).is_ok());
    }

    #[test]
    fn cosy_unknown_species_is_config_error() {
        let (sys, field) = two_proton_system();
        let grid = GridSpec::new(8, 0.01).unwrap();
        let mut s = CosySettings::default_for(&sys, "13C");
        s.cycles = 1;
        let err = run_cosy(&sys, &field, &grid, &s).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cosy_full_grid_values_bounded_and_finite() {
        let (sys, field) = two_proton_system();
        let grid = GridSpec::new(16, 0.005).unwrap();
        let mut s = CosySettings::default_for(&sys, "1H");
        s.cycles = 6;
        let (sig, stats) = run_cosy(&sys, &field, &grid, &s).unwrap();
        assert_eq!(stats.points_computed, 256);
        assert!(sig.values().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        // The polarized register produces a nonzero signal somewhere.
        assert!(sig.values().iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn cosy_masked_run_computes_only_observed_points() {
        let (sys, field) = two_proton_system();
        let mask = make_mask(16, 0.3, 5).unwrap();
        let grid = GridSpec::new(16, 0.005).unwrap().with_mask(mask.clone()).unwrap();
        let mut s = CosySettings::default_for(&sys, "1H");
        s.cycles = 4;
        let (sig, stats) = run_cosy(&sys, &field, &grid, &s).unwrap();
        let k = mask.iter().filter(|&&b| b).count();
        assert_eq!(stats.points_computed, k);
        assert_eq!(sig.observed_count(), k);
        for (i, &m) in mask.iter().enumerate() {
            assert_eq!(sig.values()[i].is_nan(), !m);
        }
        // Observed entries agree with the full run exactly.
        let full_grid = GridSpec::new(16, 0.005).unwrap();
        let (full, _) = run_cosy(&sys, &field, &full_grid, &s).unwrap();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                assert!((sig.values()[i] - full.values()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosy_spectrum_shows_larmor_diagonal_line() {
        // Single proton at 50 G: Larmor 212.9 kHz, in-band with dt = 1/512 ms.
        let nuclei = vec![Nucleus::new("1H", Vector3::new(3.0, 0.0, 0.0)).unwrap()];
        let nv = NvSensor::new(Vector3::new(0.0, 0.0, -25.0), Vector3::z(), 100.0).unwrap();
        let sys = SpinSystem::new(nuclei, nv).unwrap();
        let dp = 115.47;
        let field =
            FieldConfig::new(50.0, Vector3::z(), dp, std::f64::consts::SQRT_2 * dp).unwrap();
        let n = 64;
        let dt = 1.0 / 512.0;
        let grid = GridSpec::new(n, dt).unwrap();
        let mut s = CosySettings::default_for(&sys, "1H");
        s.cycles = 8;
        let (sig, _) = run_cosy(&sys, &field, &grid, &s).unwrap();
        let spec = crate::spectra::Spectrum2D::from_signal(&sig, dt).unwrap();
        let peaks = crate::spectra::find_peaks(&spec, 0.5, 2);
        assert!(!peaks.is_empty());
        let larmor = sys.nuclei[0].larmor_khz(50.0);
        let p = &peaks[0];
        assert!(p.kind == crate::spectra::PeakKind::Diagonal);
        assert!((p.f1_khz - larmor).abs() <= spec.bin_khz());
        assert!((p.f2_khz - larmor).abs() <= spec.bin_khz());
    }

    #[test]
    fn strong_coupling_signal_is_probability() {
        let (sys, field) = hetero_system();
        let grid = GridSpec::new(8, 0.02).unwrap();
        let settings = StrongCouplingSettings {
            target_species: "15N".into(),
            tau_ms: None,
            gpar_operator: GParOperator::default(),
        };
        let (sig, report) = run_strong_coupling(&sys, &field, &grid, &settings).unwrap();
        assert!(sig
            .values()
            .iter()
            .all(|v| (-1e-10..=1.0 + 1e-10).contains(v)));
        assert!(report.tau_ms > 0.0);
        assert!(report.max_nuclear_polarization <= 0.5 + 1e-12);
    }

    #[test]
    fn angle_sweep_tracks_analytic_splitting() {
        // Two protons 1.6 Å apart along z, field at several polar angles.
        let nuclei = vec![
            Nucleus::new("1H", Vector3::new(8.0, 0.0, 0.0)).unwrap(),
            Nucleus::new("1H", Vector3::new(8.0, 0.0, 1.6)).unwrap(),
        ];
        let nv = NvSensor::new(Vector3::new(0.0, 0.0, -30.0), Vector3::z(), 100.0).unwrap();
        let sys = SpinSystem::new(nuclei, nv).unwrap();
        let dp = 115.47;
        let field =
            FieldConfig::new(1000.0, Vector3::z(), dp, std::f64::consts::SQRT_2 * dp).unwrap();
        let dirs = [Vector3::z(), Vector3::new(0.6, 0.0, 0.8)];
        let n = 2048;
        let dt = 1.0 / 2000.0; // 2 MHz sampling, 1.024 ms record
        let mut settings = CosySettings::default_for(&sys, "1H");
        settings.cycles = 8;
        let pts = run_angle_sweep(&sys, &field, &dirs, n, dt, &settings).unwrap();
        for p in &pts {
            assert!(p.resolved, "unresolved at {:?}", p.direction);
            assert!(
                (p.splitting_khz - p.expected_khz.abs()).abs() <= 2.0 * p.uncertainty_khz,
                "got {} want {} ± {}",
                p.splitting_khz,
                p.expected_khz,
                p.uncertainty_khz
            );
        }
    }
}
