//! Propagation under piecewise-constant Hamiltonians, hard RF pulses,
//! polarization transfer, and the NV population-difference readout.

use crate::operators::{
    embed, minus_state, plus_state, spin_along, CMat, OperatorMatrix, C2,
};
use crate::spin_model::SpinSystem;
use crate::state::{CVec, State};
use crate::{NvmrError, Result};
use nalgebra::{DVector, Vector3};
use num_complex::Complex64;

/// Eigendecomposition of a Hamiltonian, cached so an entire (t₁,t₂) grid
/// reuses one decomposition; each propagator is then two diagonal rescalings.
#[derive(Debug, Clone)]
pub struct Propagator {
    /// Unitary of eigenvectors, columns are eigenstates.
    pub eigvecs: CMat,
    /// Eigenvalues in rad/ms.
    pub eigvals: DVector<f64>,
}

impl Propagator {
    pub fn new(h: &OperatorMatrix) -> Self {
        let eig = h.mat.clone().symmetric_eigen();
        Propagator {
            eigvecs: eig.eigenvectors,
            eigvals: eig.eigenvalues,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    /// Phase factors e^{−iλt} for time t in ms.
    pub fn phases(&self, t_ms: f64) -> CVec {
        CVec::from_iterator(
            self.dim(),
            self.eigvals
                .iter()
                .map(|&l| Complex64::from_polar(1.0, -l * t_ms)),
        )
    }

    /// Full unitary U = exp(−iHt).
    pub fn unitary(&self, t_ms: f64) -> CMat {
        let ph = self.phases(t_ms);
        // column j scaled by e^{−iλ_j t}
        let mut scaled = self.eigvecs.clone();
        for j in 0..self.dim() {
            let p = ph[j];
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= p);
        }
        &scaled * self.eigvecs.adjoint()
    }

    /// Maximum deviation of U†U from the identity.
    pub fn unitarity_defect(&self, t_ms: f64) -> f64 {
        let u = self.unitary(t_ms);
        let p = u.adjoint() * &u;
        let mut worst = 0.0f64;
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p[(i, j)] - Complex64::new(want, 0.0)).norm());
            }
        }
        worst
    }
}

/// Evolve a state under H for t milliseconds.
pub fn evolve(state: &State, prop: &Propagator, t_ms: f64) -> Result<State> {
    if t_ms < 0.0 {
        return Err(NvmrError::InvalidInput("evolution time must be >= 0".into()));
    }
    if state.dim() != prop.dim() {
        return Err(NvmrError::DimensionMismatch(format!(
            "state dim {} vs propagator dim {}",
            state.dim(),
            prop.dim()
        )));
    }
    let u = prop.unitary(t_ms);
    Ok(match state {
        State::Pure(v) => State::Pure(&u * v),
        State::Mixed(m) => State::Mixed(&u * m * u.adjoint()),
    })
}

/// A hard (zero-duration) RF rotation on a set of nuclei.
#[derive(Debug, Clone)]
pub struct PulseSpec {
    /// Species filter; `None` rotates every nucleus.
    pub target_species: Option<String>,
    pub axis: PulseAxis,
    /// Rotation angle in radians, within (−2π, 2π].
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseAxis {
    X,
    Y,
    Z,
}

impl PulseAxis {
    pub fn direction(&self) -> Vector3<f64> {
        match self {
            PulseAxis::X => Vector3::x(),
            PulseAxis::Y => Vector3::y(),
            PulseAxis::Z => Vector3::z(),
        }
    }
}

impl PulseSpec {
    pub fn new(target_species: Option<&str>, axis: PulseAxis, angle: f64) -> Result<Self> {
        if !(angle > -std::f64::consts::TAU && angle <= std::f64::consts::TAU) {
            return Err(NvmrError::InvalidInput(format!(
                "pulse angle {angle} outside (−2π, 2π]"
            )));
        }
        Ok(PulseSpec {
            target_species: target_species.map(str::to_string),
            axis,
            angle,
        })
    }
}

/// Single-site rotation exp(−i·angle·s_axis).
pub fn site_rotation(axis: PulseAxis, angle: f64) -> C2 {
    let s = spin_along(&axis.direction());
    // exp(−iθ s) = cos(θ/2) I − 2i sin(θ/2) s  for spin-1/2
    let half = angle / 2.0;
    C2::identity() * Complex64::new(half.cos(), 0.0)
        + s * Complex64::new(0.0, -2.0 * half.sin())
}

/// Full-register rotation for a pulse; `nv_present` shifts nuclear sites by one.
pub fn pulse_unitary(
    pulse: &PulseSpec,
    system: &SpinSystem,
    nv_present: bool,
) -> Result<CMat> {
    let targets: Vec<usize> = match &pulse.target_species {
        Some(sp) => system.species_indices(sp),
        None => (0..system.n_nuclei()).collect(),
    };
    let offset = usize::from(nv_present);
    let n_sites = system.n_nuclei() + offset;
    let mut u = CMat::identity(1 << n_sites, 1 << n_sites);
    let rot = site_rotation(pulse.axis, pulse.angle);
    for i in &targets {
        u = embed(&rot, i + offset, n_sites)? * u;
    }
    Ok(u)
}

/// Apply a hard RF pulse. Empty target set is a warned no-op.
pub fn apply_pulse(state: &State, pulse: &PulseSpec, system: &SpinSystem, nv_present: bool) -> Result<State> {
    let targets: Vec<usize> = match &pulse.target_species {
        Some(sp) => system.species_indices(sp),
        None => (0..system.n_nuclei()).collect(),
    };
    if targets.is_empty() {
        eprintln!(
            "warning: pulse targets no nuclei (species filter {:?}); state unchanged",
            pulse.target_species
        );
        return Ok(state.clone());
    }
    let u = pulse_unitary(pulse, system, nv_present)?;
    Ok(match state {
        State::Pure(v) => State::Pure(&u * v),
        State::Mixed(m) => State::Mixed(&u * m * u.adjoint()),
    })
}

/// Repeated Hartmann–Hahn polarization-transfer cycles: (reset NV to |+⟩,
/// evolve τ_p under the interaction Hamiltonian) × cycles.
///
/// The joint state is expected on the full NV⊗nuclei space; the NV reset is
/// an ideal projective re-initialization.
pub fn polarize(state: &State, prop_int: &Propagator, tau_p_ms: f64, cycles: usize) -> Result<State> {
    let mut st = state.clone();
    for _ in 0..cycles {
        st = st.reset_first(&plus_state());
        st = evolve(&st, prop_int, tau_p_ms)?;
    }
    Ok(st)
}

/// Result of the NV population-difference readout.
#[derive(Debug, Clone, Copy)]
pub struct DpResult {
    pub dp: f64,
    /// Set when 2τ²Σ(π g⊥)² > 1, outside the perturbative validity window.
    pub validity_warning: bool,
}

fn nv_projector(amps: &[Complex64; 2], half: usize) -> CMat {
    let mut p = CMat::zeros(2 * half, 2 * half);
    for e in 0..2 {
        for f in 0..2 {
            let w = amps[e] * amps[f].conj();
            for a in 0..half {
                p[(e * half + a, f * half + a)] = w;
            }
        }
    }
    p
}

/// Exact NV readout ΔP = P⁺₋ − P⁻₊ from two propagations: the NV is reset
/// to |−⟩ (resp. |+⟩), evolved for τ under the interaction Hamiltonian, and
/// the population of the opposite σ_x eigenstate is read out.
pub fn measure_dp(
    state_pre: &State,
    prop_int: &Propagator,
    tau_ms: f64,
    g_perp_khz: &[f64],
) -> Result<DpResult> {
    let half = state_pre.dim() / 2;
    let from_minus = evolve(&state_pre.reset_first(&minus_state()), prop_int, tau_ms)?;
    let p_plus = from_minus.expectation(&nv_projector(&plus_state(), half));
    let from_plus = evolve(&state_pre.reset_first(&plus_state()), prop_int, tau_ms)?;
    let p_minus = from_plus.expectation(&nv_projector(&minus_state(), half));
    Ok(DpResult {
        dp: p_plus - p_minus,
        validity_warning: !dp_validity(tau_ms, g_perp_khz),
    })
}

/// Perturbative validity check 2τ²Σ(π g⊥)² ≤ 1 (π·g⊥ is the flip-flop
/// matrix element in angular units).
pub fn dp_validity(tau_ms: f64, g_perp_khz: &[f64]) -> bool {
    let sum: f64 = g_perp_khz
        .iter()
        .map(|g| (std::f64::consts::PI * g).powi(2))
        .sum();
    2.0 * tau_ms * tau_ms * sum <= 1.0
}

/// Perturbative readout formula ΔP ≈ 2τ² Σ_i (π g_i^⊥)² ⟨s_i^z⟩, the
/// couplings entering as the angular flip-flop matrix element.
pub fn measure_dp_approx(state_pre: &State, g_perp_khz: &[f64], tau_ms: f64) -> Result<f64> {
    let n = g_perp_khz.len();
    let n_sites = n + 1;
    if state_pre.dim() != 1 << n_sites {
        return Err(NvmrError::DimensionMismatch(
            "state does not match coupling count".into(),
        ));
    }
    let mut acc = 0.0;
    for (i, g) in g_perp_khz.iter().enumerate() {
        let sz = embed(&crate::operators::s_z(), i + 1, n_sites)?;
        acc += (std::f64::consts::PI * g).powi(2) * state_pre.expectation(&sz);
    }
    Ok(2.0 * tau_ms * tau_ms * acc)
}

/// Transverse readout: rotate the nuclear spins so the requested axis lands
/// on z, then perform the ΔP measurement.
pub fn measure_transverse(
    state: &State,
    axis: PulseAxis,
    system: &SpinSystem,
    prop_int: &Propagator,
    tau_ms: f64,
    g_perp_khz: &[f64],
) -> Result<DpResult> {
    let pulse = transverse_mapping_pulse(axis)?;
    let rotated = apply_pulse(state, &pulse, system, true)?;
    measure_dp(&rotated, prop_int, tau_ms, g_perp_khz)
}

/// The π/2 pulse that maps the requested transverse axis onto z.
pub fn transverse_mapping_pulse(axis: PulseAxis) -> Result<PulseSpec> {
    match axis {
        // exp(−iθ s_y): x ↦ z at θ = −π/2; exp(−iθ s_x): y ↦ z at θ = +π/2.
        PulseAxis::X => PulseSpec::new(None, PulseAxis::Y, -std::f64::consts::FRAC_PI_2),
        PulseAxis::Y => PulseSpec::new(None, PulseAxis::X, std::f64::consts::FRAC_PI_2),
        PulseAxis::Z => Err(NvmrError::InvalidInput(
            "transverse axis must be x or y".into(),
        )),
    }
}

/// Nuclear-space ΔP observable: M such that ΔP = Tr[M ρ_nuc] for an NV that
/// is re-initialized right before the readout. Built once per interaction
/// Hamiltonian and reused across a whole grid.
pub fn dp_observable(prop_int: &Propagator, tau_ms: f64) -> CMat {
    let u = prop_int.unitary(tau_ms);
    let half = prop_int.dim() / 2;
    let block = |bra: &[Complex64; 2], ket: &[Complex64; 2]| -> CMat {
        let mut k = CMat::zeros(half, half);
        for a in 0..half {
            for b in 0..half {
                let mut z = Complex64::new(0.0, 0.0);
                for e in 0..2 {
                    for f in 0..2 {
                        z += bra[e].conj() * u[(e * half + a, f * half + b)] * ket[f];
                    }
                }
                k[(a, b)] = z;
            }
        }
        k
    };
    let k = block(&plus_state(), &minus_state());
    let l = block(&minus_state(), &plus_state());
    k.adjoint() * k - l.adjoint() * l
}

/// Kraus operators of one polarization cycle on the nuclear space:
/// ρ ↦ Σ_e E_e ρ E_e† with E_e = ⟨e|U(τ_p)|+⟩ (NV z-basis blocks).
pub fn polarize_channel(prop_int: &Propagator, tau_p_ms: f64) -> [CMat; 2] {
    let u = prop_int.unitary(tau_p_ms);
    let half = prop_int.dim() / 2;
    let plus = plus_state();
    let mut out = [CMat::zeros(half, half), CMat::zeros(half, half)];
    for e in 0..2 {
        for a in 0..half {
            for b in 0..half {
                let mut z = Complex64::new(0.0, 0.0);
                for f in 0..2 {
                    z += u[(e * half + a, f * half + b)] * plus[f];
                }
                out[e][(a, b)] = z;
            }
        }
    }
    out
}
