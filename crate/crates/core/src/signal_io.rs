//! Time-domain signal matrices and their on-disk formats.
//!
//! Binary layout: 16-byte header `magic(4) n(4) flags(4) reserved(4)`
//! little-endian, then n² float64 row-major values, then n² mask bytes when
//! the mask flag is set. Round-trips are bit-exact.

use crate::{NvmrError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const SIGNAL_MAGIC: [u8; 4] = *b"NVSM";
const FLAG_MASK: u32 = 1;

/// Real n×n time-domain measurement grid, optionally sub-sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    n: usize,
    /// Row-major values; masked-out entries hold NaN, never a silent zero.
    values: Vec<f64>,
    /// `true` = observed. `None` means fully observed.
    mask: Option<Vec<bool>>,
    /// Protocol id and config hash recorded at creation.
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub protocol: String,
    pub config_hash: String,
}

impl SignalMatrix {
    pub fn new_full(n: usize, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != n * n {
            return Err(NvmrError::DimensionMismatch(format!(
                "{} values for an {n}×{n} grid",
                values.len()
            )));
        }
        Ok(SignalMatrix {
            n,
            values,
            mask: None,
            provenance,
        })
    }

    pub fn new_masked(
        n: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
        provenance: Provenance,
    ) -> Result<Self> {
        if values.len() != n * n || mask.len() != n * n {
            return Err(NvmrError::DimensionMismatch("mask/value size mismatch".into()));
        }
        for (i, (&v, &m)) in values.iter().zip(mask.iter()).enumerate() {
            if !m && !v.is_nan() {
                return Err(NvmrError::InvalidInput(format!(
                    "masked-out entry {i} carries a value; masked entries must be NaN"
                )));
            }
        }
        Ok(SignalMatrix {
            n,
            values,
            mask: Some(mask),
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.is_none()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.values[i * self.n + j];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    /// Number of observed entries.
    pub fn observed_count(&self) -> usize {
        match &self.mask {
            None => self.n * self.n,
            Some(m) => m.iter().filter(|&&b| b).count(),
        }
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let flags: u32 = if self.mask.is_some() { FLAG_MASK } else { 0 };
        f.write_all(&SIGNAL_MAGIC)?;
        f.write_all(&(self.n as u32).to_le_bytes())?;
        f.write_all(&flags.to_le_bytes())?;
        f.write_all(&0u32.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
        if let Some(mask) = &self.mask {
            let bytes: Vec<u8> = mask.iter().map(|&b| u8::from(b)).collect();
            f.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut header = [0u8; 16];
        f.read_exact(&mut header)?;
        if header[0..4] != SIGNAL_MAGIC {
            return Err(NvmrError::Parse("bad signal file magic".into()));
        }
        let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let flags = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let mut raw = vec![0u8; n * n * 8];
        f.read_exact(&mut raw)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mask = if flags & FLAG_MASK != 0 {
            let mut mraw = vec![0u8; n * n];
            f.read_exact(&mut mraw)?;
            Some(mraw.iter().map(|&b| b != 0).collect())
        } else {
            None
        };
        Ok(SignalMatrix {
            n,
            values,
            mask,
            provenance: Provenance::default(),
        })
    }

    /// Plain-text TSV; masked entries are written as `nan`.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|j| format!("{:.17e}", self.values[i * self.n + j]))
                .collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Uniformly random boolean sampling mask with |Ω| = round(rate·n²),
/// reproducible from the seed.
pub fn make_mask(n: usize, rate: f64, seed: u64) -> Result<Vec<bool>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(NvmrError::InvalidInput(format!(
            "sampling rate {rate} outside (0, 1]"
        )));
    }
    let total = n * n;
    let k = (rate * total as f64).round() as usize;
    let mut idx: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut mask = vec![false; total];
    for &i in idx.iter().take(k) {
        mask[i] = true;
    }
    Ok(mask)
}
