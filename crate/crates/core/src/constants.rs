//! Physical constants and the nuclear species table.
//!
//! Unit conventions used throughout the crate:
//! frequencies in kHz (linear, not angular), times in ms, positions in
//! Ångström, magnetic fields in Gauss, gyromagnetic ratios in MHz/T.
//! Hamiltonian matrix entries carry angular units (rad/ms = 2π·kHz), the
//! factor of 2π is applied at Hamiltonian assembly.

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// mu_0 / 4π, T·m/A.
pub const MU0_OVER_4PI: f64 = 1e-7;
/// Ångström in meters.
pub const ANGSTROM: f64 = 1e-10;
/// Gauss in Tesla.
pub const GAUSS: f64 = 1e-4;

/// Electron gyromagnetic ratio γ/2π, MHz/T (signed).
pub const GAMMA_ELECTRON: f64 = -28_024.951_424_2;

/// Gyromagnetic ratio γ/2π in MHz/T for a nuclear species label.
///
/// The table ships the species used in the simulated molecules; anything
/// else can be supplied through the config with an explicit gamma.
pub fn gamma_for_species(species: &str) -> Option<f64> {
    match species {
        "1H" | "H" => Some(42.577_478_518),
        "13C" => Some(10.708_4),
        "15N" | "N" => Some(-4.315_6),
        "31P" | "P" => Some(17.235),
        _ => None,
    }
}

/// Larmor frequency in kHz for gamma in MHz/T and field in Gauss.
pub fn larmor_khz(gamma_mhz_per_t: f64, field_gauss: f64) -> f64 {
    gamma_mhz_per_t * field_gauss * GAUSS * 1e3
}
