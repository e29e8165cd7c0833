//! Experiment configuration: TOML schema, validation, presets, and the
//! resolved run description consumed by the pipeline.

use crate::dynamics::PulseAxis;
use crate::protocols::{CosySettings, GridSpec, StrongCouplingSettings};
use crate::signal_io::make_mask;
use crate::spin_model::{parse_molecule, FieldConfig, GParOperator, NvSensor, SpinSystem};
use crate::{NvmrError, Result};
use nalgebra::Vector3;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Named preset; mutually exclusive with an explicit molecule file.
    pub preset: Option<String>,
    pub molecule: Option<PathBuf>,
    pub nv: Option<NvBlock>,
    pub field: Option<FieldBlock>,
    pub protocol: Option<ProtocolBlock>,
    pub grid: Option<GridBlock>,
    pub sampling: Option<SamplingBlock>,
    pub completion: Option<CompletionBlock>,
    pub output: Option<OutputBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvBlock {
    pub position: [f64; 3],
    pub axis: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldBlock {
    pub magnitude_gauss: f64,
    pub direction: [f64; 3],
    pub rf_detuning_khz: f64,
    pub rf_strength_khz: f64,
    /// When set (the default) the spin-spin decoupling relation
    /// Ω_p = √2·Δ_p is enforced at validation time.
    #[serde(default = "default_true")]
    pub decouple: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBlock {
    pub kind: String,
    pub readout_species: Option<String>,
    pub polarize_species: Option<Vec<String>>,
    pub cycles: Option<usize>,
    pub tau_p_ms: Option<f64>,
    pub tau_readout_ms: Option<f64>,
    pub gpar_operator: Option<GParOperator>,
    pub measure_axis: Option<String>,
    pub target_species: Option<String>,
    pub tau_ms: Option<f64>,
    pub directions: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub n: usize,
    pub dt_ms: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionBlock {
    pub tau: Option<f64>,
    pub delta: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub rank_cap: Option<usize>,
    pub seed: Option<u64>,
}

impl CompletionBlock {
    pub fn to_svt(&self) -> crate::completion::SvtConfig {
        let mut cfg = crate::completion::SvtConfig::default();
        cfg.tau = self.tau;
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        cfg.rank_cap = self.rank_cap;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

/// The protocol a resolved run will execute.
#[derive(Debug, Clone)]
pub enum ProtocolKind {
    Cosy(CosySettings),
    Strong(StrongCouplingSettings),
    AngleSweep { directions: Vec<Vector3<f64>> },
}

/// Fully resolved, validated run description.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub name: String,
    pub system: SpinSystem,
    pub field: FieldConfig,
    pub grid: GridSpec,
    pub protocol: ProtocolKind,
    pub sampling: Option<(f64, u64)>,
    pub svt: Option<crate::completion::SvtConfig>,
    pub output_dir: PathBuf,
    /// Heavy presets refuse to run without an explicit opt-in flag.
    pub requires_large: bool,
}

impl Resolved {
    /// Canonical parameter string; its SHA-256 is the config hash recorded
    /// in every output.
    pub fn canonical_string(&self) -> String {
        let mut s = format!("name={}\n", self.name);
        for n in &self.system.nuclei {
            s += &format!(
                "nucleus={} {:.9} {:.9} {:.9} gamma={:.9}\n",
                n.species, n.position.x, n.position.y, n.position.z, n.gamma
            );
        }
        let nv = &self.system.nv;
        s += &format!(
            "nv={:.9} {:.9} {:.9} axis={:.9} {:.9} {:.9} rabi={:.9}\n",
            nv.position.x, nv.position.y, nv.position.z, nv.axis.x, nv.axis.y, nv.axis.z,
            nv.rabi_khz
        );
        s += &format!(
            "field={:.9}G dir={:.9} {:.9} {:.9} dp={:.9} op={:.9}\n",
            self.field.magnitude_gauss,
            self.field.direction.x,
            self.field.direction.y,
            self.field.direction.z,
            self.field.rf_detuning_khz,
            self.field.rf_strength_khz
        );
        s += &format!("grid={} dt={:.12e}\n", self.grid.n, self.grid.dt_ms);
        if let Some((rate, seed)) = self.sampling {
            s += &format!("sampling={rate:.9} seed={seed}\n");
        }
        s += &format!("protocol={:?}\n", self.protocol);
        s
    }

    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_string().as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    /// Attach the sampling mask to the grid, if sampling is configured.
    pub fn grid_with_mask(&self) -> Result<GridSpec> {
        match self.sampling {
            None => Ok(self.grid.clone()),
            Some((rate, seed)) => {
                let mask = make_mask(self.grid.n, rate, seed)?;
                self.grid.clone().with_mask(mask)
            }
        }
    }
}

fn unit(v: [f64; 3], what: &str) -> Result<Vector3<f64>> {
    let v = Vector3::new(v[0], v[1], v[2]);
    let n = v.norm();
    if n == 0.0 {
        return Err(NvmrError::config(what, "zero vector"));
    }
    Ok(v / n)
}

fn parse_axis(s: &str) -> Result<PulseAxis> {
    match s {
        "x" => Ok(PulseAxis::X),
        "y" => Ok(PulseAxis::Y),
        _ => Err(NvmrError::config(
            "protocol.measure_axis",
            format!("`{s}` is not a transverse axis (use x or y)"),
        )),
    }
}

/// Load, validate, and resolve a configuration file.
pub fn validate_config(path: &Path) -> Result<Resolved> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| NvmrError::config("config", format!("{e}")))?;
    resolve(cfg, path.parent().unwrap_or(Path::new(".")))
}

pub fn resolve(cfg: ExperimentConfig, base: &Path) -> Result<Resolved> {
    if let Some(name) = &cfg.preset {
        if cfg.molecule.is_some() {
            return Err(NvmrError::config(
                "preset",
                "preset and molecule are mutually exclusive",
            ));
        }
        let mut r = preset(name)?;
        if let Some(g) = &cfg.grid {
            r.grid = GridSpec::new(g.n, g.dt_ms)?;
        }
        if let Some(s) = &cfg.sampling {
            check_rate(s.rate)?;
            r.sampling = Some((s.rate, s.seed));
        }
        if let Some(c) = &cfg.completion {
            let svt = c.to_svt();
            svt.validate()?;
            r.svt = Some(svt);
        }
        if let Some(o) = &cfg.output {
            r.output_dir = o.dir.clone();
        }
        return Ok(r);
    }

    let molecule = cfg
        .molecule
        .as_ref()
        .ok_or_else(|| NvmrError::config("molecule", "missing (and no preset named)"))?;
    let mol_path = if molecule.is_absolute() {
        molecule.clone()
    } else {
        base.join(molecule)
    };
    let nuclei = parse_molecule(&std::fs::read_to_string(&mol_path)?)?;

    let nvb = cfg
        .nv
        .as_ref()
        .ok_or_else(|| NvmrError::config("nv", "missing block"))?;
    let fb = cfg
        .field
        .as_ref()
        .ok_or_else(|| NvmrError::config("field", "missing block"))?;
    let gb = cfg
        .grid
        .as_ref()
        .ok_or_else(|| NvmrError::config("grid", "missing block"))?;
    let pb = cfg
        .protocol
        .as_ref()
        .ok_or_else(|| NvmrError::config("protocol", "missing block"))?;

    if fb.decouple {
        let want = std::f64::consts::SQRT_2 * fb.rf_detuning_khz;
        let err = (fb.rf_strength_khz - want).abs();
        if err > 1e-6 * want.abs().max(1.0) {
            return Err(NvmrError::config(
                "field.rf_strength_khz",
                format!(
                    "decoupling requires rf_strength = sqrt(2)*rf_detuning = {want:.6} kHz, \
                     got {:.6} kHz",
                    fb.rf_strength_khz
                ),
            ));
        }
    }

    let field = FieldConfig::new(
        fb.magnitude_gauss,
        unit(fb.direction, "field.direction")?,
        fb.rf_detuning_khz,
        fb.rf_strength_khz,
    )?;
    // The Rabi frequency is rederived per species at run time; the stored
    // value is a placeholder until Hartmann-Hahn matching fixes it.
    let nv = NvSensor::new(
        Vector3::new(nvb.position[0], nvb.position[1], nvb.position[2]),
        unit(nvb.axis, "nv.axis")?,
        1.0,
    )?;
    let system = SpinSystem::new(nuclei, nv)?;
    let grid = GridSpec::new(gb.n, gb.dt_ms)?;

    let protocol = match pb.kind.as_str() {
        "cosy" => {
            let readout = pb.readout_species.as_deref().ok_or_else(|| {
                NvmrError::config("protocol.readout_species", "required for cosy")
            })?;
            let mut s = CosySettings::default_for(&system, readout);
            if let Some(p) = &pb.polarize_species {
                s.polarize_species = p.clone();
            }
            if let Some(c) = pb.cycles {
                s.cycles = c;
            }
            s.tau_p_ms = pb.tau_p_ms;
            s.tau_readout_ms = pb.tau_readout_ms;
            if let Some(g) = pb.gpar_operator {
                s.gpar_operator = g;
            }
            if let Some(a) = &pb.measure_axis {
                s.measure_axis = parse_axis(a)?;
            }
            ProtocolKind::Cosy(s)
        }
        "strong" => {
            let target = pb.target_species.as_deref().ok_or_else(|| {
                NvmrError::config("protocol.target_species", "required for strong")
            })?;
            ProtocolKind::Strong(StrongCouplingSettings {
                target_species: target.to_string(),
                tau_ms: pb.tau_ms,
                gpar_operator: pb.gpar_operator.unwrap_or_default(),
            })
        }
        "anglesweep" => {
            let dirs = pb.directions.as_ref().ok_or_else(|| {
                NvmrError::config("protocol.directions", "required for anglesweep")
            })?;
            let mut out = Vec::with_capacity(dirs.len());
            for d in dirs {
                out.push(unit(*d, "protocol.directions")?);
            }
            ProtocolKind::AngleSweep { directions: out }
        }
        other => {
            return Err(NvmrError::config(
                "protocol.kind",
                format!("unknown protocol `{other}` (cosy | strong | anglesweep)"),
            ))
        }
    };

    let sampling = match &cfg.sampling {
        None => None,
        Some(s) => {
            check_rate(s.rate)?;
            Some((s.rate, s.seed))
        }
    };
    let svt = match &cfg.completion {
        None => None,
        Some(c) => {
            let svt = c.to_svt();
            svt.validate()?;
            Some(svt)
        }
    };

    Ok(Resolved {
        name: "custom".into(),
        system,
        field,
        grid,
        protocol,
        sampling,
        svt,
        output_dir: cfg
            .output
            .map(|o| o.dir)
            .unwrap_or_else(|| PathBuf::from("out")),
        requires_large: false,
    })
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(NvmrError::config(
            "sampling.rate",
            format!("{rate} outside (0, 1]"),
        ));
    }
    Ok(())
}

/// Standard decoupled drive block: Δ_p = 115.47 kHz, Ω_p = √2·Δ_p.
fn standard_drive(magnitude_gauss: f64, direction: Vector3<f64>) -> FieldConfig {
    let dp = 115.47;
    FieldConfig::new(magnitude_gauss, direction, dp, std::f64::consts::SQRT_2 * dp)
        .expect("static drive parameters")
}

fn nv_below(z: f64) -> NvSensor {
    NvSensor::new(Vector3::new(0.0, 0.0, z), Vector3::z(), 1.0).expect("static sensor")
}

/// Alanine: 7 hydrogens and one nitrogen over roughly 4.5 Å.
pub const ALANINE_MOLECULE: &str = "\
# Alanine protons and amine nitrogen, positions in Angstrom
15N  -0.66  1.33  0.00
1H   -0.31  2.27  0.33   # amine H
1H   -1.67  1.35 -0.06   # amine H
1H    0.36 -0.47 -0.93   # alpha H
1H   -1.62 -0.77  1.20   # methyl H
1H   -0.20 -1.80  1.25   # methyl H
1H   -0.20 -0.30  2.15   # methyl H
1H    3.05  1.05  0.05   # carboxyl H
";

/// The amine group plus the alpha hydrogen: the desk-scale fragment. One
/// amine proton is pushed out along its N–H bond so the two N–H cross
/// peaks have clearly different weights and the dominant one is unambiguous.
pub const ALANINE_FRAGMENT: &str = "\
15N  -0.66  1.33  0.00
1H   -0.31  2.27  0.33
1H   -1.96  1.36 -0.08
1H    0.36 -0.47 -0.93
";

/// Hydrogen and phosphorus roughly 2 Å apart.
pub const HP_MOLECULE: &str = "\
1H   1.00  0.00  0.00
31P  1.00  0.00  2.00
";

/// Two hydrogens 1.5 Å apart, off the NV axis.
pub const HH_SWEEP_MOLECULE: &str = "\
1H   8.00  0.00  0.00
1H   8.00  0.00  1.50
";

fn system_from(molecule: &str, nv: NvSensor) -> SpinSystem {
    let nuclei = parse_molecule(molecule).expect("static molecule text");
    SpinSystem::new(nuclei, nv).expect("static system")
}

/// Resolve a named preset.
pub fn preset(name: &str) -> Result<Resolved> {
    let r = match name {
        // Two-species correlation run at 1000 G; the 1H line is out of band
        // and folds to 1000 kHz at this sampling rate.
        "hp-cosy" => Resolved {
            name: name.into(),
            system: system_from(HP_MOLECULE, nv_below(-25.0)),
            field: standard_drive(1000.0, Vector3::z()),
            grid: GridSpec::new(256, 1.0 / 3257.7)?,
            protocol: ProtocolKind::Cosy(CosySettings {
                readout_species: "1H".into(),
                polarize_species: vec!["1H".into(), "31P".into()],
                cycles: 12,
                tau_p_ms: None,
                tau_readout_ms: None,
                gpar_operator: GParOperator::default(),
                measure_axis: PulseAxis::Y,
            }),
            sampling: None,
            svt: None,
            output_dir: PathBuf::from("out"),
            requires_large: false,
        },
        // Amine fragment of alanine at 100 G; both Larmor lines in band.
        "alanine-fragment" => Resolved {
            name: name.into(),
            system: system_from(ALANINE_FRAGMENT, nv_below(-20.0)),
            field: standard_drive(100.0, Vector3::z()),
            // dt puts the 15N line on a bin center (bin 6) instead of a bin
            // boundary, so its peak index is insensitive to reconstruction.
            grid: GridSpec::new(128, 0.001086176)?,
            protocol: ProtocolKind::Cosy(CosySettings {
                readout_species: "1H".into(),
                polarize_species: vec!["1H".into(), "15N".into()],
                cycles: 12,
                tau_p_ms: None,
                tau_readout_ms: None,
                gpar_operator: GParOperator::default(),
                measure_axis: PulseAxis::Y,
            }),
            sampling: None,
            svt: None,
            output_dir: PathBuf::from("out"),
            requires_large: false,
        },
        // Same fragment driven in the strong-coupling sequence.
        "strong-fragment" => Resolved {
            name: name.into(),
            system: system_from(ALANINE_FRAGMENT, nv_below(-20.0)),
            field: standard_drive(100.0, Vector3::z()),
            grid: GridSpec::new(128, 0.001)?,
            // A short interaction window keeps the sequence in the regime
            // where it reads correlations without polarizing the register.
            protocol: ProtocolKind::Strong(StrongCouplingSettings {
                target_species: "1H".into(),
                tau_ms: Some(0.01),
                gpar_operator: GParOperator::default(),
            }),
            sampling: None,
            svt: None,
            output_dir: PathBuf::from("out"),
            requires_large: false,
        },
        // Field-angle sweep of a proton pair, 37 orientations in a plane
        // containing the internuclear axis.
        "anglesweep" => Resolved {
            name: name.into(),
            system: system_from(HH_SWEEP_MOLECULE, nv_below(-30.0)),
            field: standard_drive(1000.0, Vector3::z()),
            grid: GridSpec::new(4096, 1.0 / 2000.0)?,
            protocol: ProtocolKind::AngleSweep {
                directions: sweep_directions(37),
            },
            sampling: None,
            svt: None,
            output_dir: PathBuf::from("out"),
            requires_large: false,
        },
        // The full eight-spin molecule on a 1024x1024 grid. Far beyond
        // desk scale; gated behind --large.
        "alanine-full" => Resolved {
            name: name.into(),
            system: system_from(ALANINE_MOLECULE, nv_below(-20.0)),
            field: standard_drive(100.0, Vector3::z()),
            grid: GridSpec::new(1024, 0.001)?,
            protocol: ProtocolKind::Cosy(CosySettings {
                readout_species: "1H".into(),
                polarize_species: vec!["1H".into(), "15N".into()],
                cycles: 12,
                tau_p_ms: None,
                tau_readout_ms: None,
                gpar_operator: GParOperator::default(),
                measure_axis: PulseAxis::Y,
            }),
            sampling: Some((0.05, 42)),
            svt: Some(crate::completion::SvtConfig::default()),
            output_dir: PathBuf::from("out"),
            requires_large: true,
        },
        other => {
            return Err(NvmrError::config(
                "preset",
                format!(
                    "unknown preset `{other}` (hp-cosy | alanine-fragment | strong-fragment \
                     | anglesweep | alanine-full)"
                ),
            ))
        }
    };
    Ok(r)
}

/// Evenly spaced polar angles from 0 to π/2 in the xz-plane.
pub fn sweep_directions(k: usize) -> Vec<Vector3<f64>> {
    (0..k)
        .map(|i| {
            let theta = std::f64::consts::FRAC_PI_2 * i as f64 / (k - 1) as f64;
            Vector3::new(theta.sin(), 0.0, theta.cos())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mol.txt"), "1H 3.0 0.0 0.0\n").unwrap();
        let cfg = r#"
molecule = "mol.txt"
[nv]
position = [0.0, 0.0, -25.0]
axis = [0.0, 0.0, 1.0]
[field]
magnitude_gauss = 100.0
direction = [0.0, 0.0, 1.0]
rf_detuning_khz = 115.47
rf_strength_khz = 163.29929171593896
[grid]
n = 64
dt_ms = 0.001
[protocol]
kind = "cosy"
readout_species = "1H"
"#;
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, cfg).unwrap();
        let r = validate_config(&p).unwrap();
        match &r.protocol {
            ProtocolKind::Cosy(s) => {
                assert_eq!(s.readout_species, "1H");
                assert_eq!(s.cycles, 12);
                assert_eq!(s.measure_axis, PulseAxis::Y);
            }
            _ => panic!("expected cosy"),
        }
        assert_eq!(r.output_dir, PathBuf::from("out"));
        assert!(r.svt.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let (_d, p) = write_temp("preset = \"hp-cosy\"\ntypo_key = 3\n");
        let err = validate_config(&p).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn decoupling_mismatch_diagnosed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mol.txt"), "1H 3.0 0.0 0.0\n").unwrap();
        let cfg = r#"
molecule = "mol.txt"
[nv]
position = [0.0, 0.0, -25.0]
axis = [0.0, 0.0, 1.0]
[field]
magnitude_gauss = 100.0
direction = [0.0, 0.0, 1.0]
rf_detuning_khz = 115.47
rf_strength_khz = 100.0
[grid]
n = 64
dt_ms = 0.001
[protocol]
kind = "cosy"
readout_species = "1H"
"#;
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, cfg).unwrap();
        let err = validate_config(&p).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("sqrt(2)"), "{msg}");
    }

    #[test]
    fn presets_resolve() {
        for name in [
            "hp-cosy",
            "alanine-fragment",
            "strong-fragment",
            "anglesweep",
            "alanine-full",
        ] {
            let r = preset(name).unwrap();
            assert_eq!(r.name, name);
            assert!(!r.config_hash().is_empty());
        }
        assert!(preset("nope").is_err());
        assert!(preset("alanine-full").unwrap().requires_large);
        assert_eq!(preset("alanine-fragment").unwrap().system.n_nuclei(), 4);
        assert_eq!(preset("alanine-full").unwrap().system.n_nuclei(), 8);
    }

    #[test]
    fn preset_with_sampling_override() {
        let (_d, p) = write_temp(
            "preset = \"alanine-fragment\"\n[sampling]\nrate = 0.2\nseed = 9\n",
        );
        let r = validate_config(&p).unwrap();
        assert_eq!(r.sampling, Some((0.2, 9)));
        let grid = r.grid_with_mask().unwrap();
        let k = grid.mask.unwrap().iter().filter(|&&b| b).count();
        assert_eq!(k, (0.2_f64 * 128.0 * 128.0).round() as usize);
    }

    #[test]
    fn config_hash_is_deterministic_and_distinguishes() {
        let a = preset("hp-cosy").unwrap();
        let b = preset("hp-cosy").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = preset("alanine-fragment").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn sweep_directions_span_the_quadrant() {
        let d = sweep_directions(37);
        assert_eq!(d.len(), 37);
        assert!((d[0] - Vector3::z()).norm() < 1e-12);
        assert!((d[36] - Vector3::x()).norm() < 1e-12);
    }
}
