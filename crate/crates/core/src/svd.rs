//! Singular value decompositions of real matrices: exact dense for small
//! sizes, randomized subspace iteration for the top-k of large ones.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RMat = DMatrix<f64>;

/// Below this dimension the dense decomposition is always used.
pub const DENSE_SVD_LIMIT: usize = 256;

/// A ≈ U·diag(sigma)·Vᵀ with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: RMat,
    pub sigma: Vec<f64>,
    pub v: RMat,
}

impl Svd {
    pub fn reconstruct(&self) -> RMat {
        let k = self.sigma.len();
        let mut us = self.u.columns(0, k).into_owned();
        for (j, &s) in self.sigma.iter().enumerate() {
            us.column_mut(j).iter_mut().for_each(|x| *x *= s);
        }
        us * self.v.columns(0, k).transpose()
    }
}

/// Exact decomposition, singular values sorted descending.
pub fn svd_dense(a: &RMat) -> Svd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = RMat::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_sorted = RMat::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)]);
    Svd {
        u: u_sorted,
        sigma,
        v: v_sorted,
    }
}

/// Top-k singular triplets via randomized subspace iteration with a small
/// oversampling margin and power iterations for spectral separation.
pub fn svd_top_k(a: &RMat, k: usize, seed: u64) -> Svd {
    let (m, n) = (a.nrows(), a.ncols());
    let k = k.min(m.min(n));
    let sample = (k + 8).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Gaussian test matrix via Box-Muller.
    let mut gauss = || {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (-2.0 * u1.ln()).sqrt() * u2.cos()
    };
    let g = RMat::from_fn(n, sample, |_, _| gauss());
    let mut q = orthonormalize(&(a * g));
    for _ in 0..4 {
        q = orthonormalize(&(a.transpose() * &q));
        q = orthonormalize(&(a * &q));
    }
    let b = q.transpose() * a; // sample×n
    let inner = svd_dense(&b);
    let u = &q * inner.u.columns(0, k).into_owned();
    Svd {
        u,
        sigma: inner.sigma[..k].to_vec(),
        v: inner.v.columns(0, k).into_owned(),
    }
}

fn orthonormalize(m: &RMat) -> RMat {
    m.clone().qr().q()
}

/// All singular triplets with σ ≥ floor, capped at `rank_cap`. Uses the
/// dense path for small matrices and grows k on demand otherwise.
pub fn svd_above(a: &RMat, floor: f64, rank_cap: Option<usize>, seed: u64) -> Svd {
    let n = a.nrows().min(a.ncols());
    let cap = rank_cap.unwrap_or(n).min(n);
    let full = if n < DENSE_SVD_LIMIT {
        svd_dense(a)
    } else {
        let mut k = 16.min(cap);
        loop {
            let s = svd_top_k(a, k, seed);
            let resolved = s.sigma.last().is_some_and(|&last| last < floor);
            if resolved || k >= cap {
                break s;
            }
            k = (k * 2).min(cap);
        }
    };
    let kept = full
        .sigma
        .iter()
        .take(cap)
        .take_while(|&&s| s >= floor)
        .count();
    Svd {
        u: full.u.columns(0, kept).into_owned(),
        sigma: full.sigma[..kept].to_vec(),
        v: full.v.columns(0, kept).into_owned(),
    }
}
