//! Pure and mixed quantum states over a register of two-level sites.

use crate::operators::CMat;
use crate::{NvmrError, Result};
use nalgebra::DVector;
use num_complex::Complex64;

pub type CVec = DVector<Complex64>;

/// A quantum state: pure state vector fast path, density matrix when the
/// protocol requires mixtures.
#[derive(Debug, Clone)]
pub enum State {
    Pure(CVec),
    Mixed(CMat),
}

impl State {
    /// Basis product state |b_0 b_1 …⟩ with `bits[k]` selecting the level of
    /// site k (0 = up).
    pub fn basis(bits: &[u8]) -> State {
        let dim = 1 << bits.len();
        let mut idx = 0usize;
        for &b in bits {
            idx = (idx << 1) | (b as usize & 1);
        }
        let mut v = CVec::zeros(dim);
        v[idx] = Complex64::new(1.0, 0.0);
        State::Pure(v)
    }

    /// All sites spin-up.
    pub fn all_up(n_sites: usize) -> State {
        State::basis(&vec![0; n_sites])
    }

    /// Maximally mixed state on n_sites.
    pub fn maximally_mixed(n_sites: usize) -> State {
        let dim = 1 << n_sites;
        State::Mixed(CMat::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0))
    }

    pub fn dim(&self) -> usize {
        match self {
            State::Pure(v) => v.len(),
            State::Mixed(m) => m.nrows(),
        }
    }

    pub fn to_density(&self) -> CMat {
        match self {
            State::Pure(v) => v * v.adjoint(),
            State::Mixed(m) => m.clone(),
        }
    }

    /// ⟨ψ|ψ⟩ or Tr ρ.
    pub fn norm_trace(&self) -> f64 {
        match self {
            State::Pure(v) => v.norm_squared(),
            State::Mixed(m) => m.diagonal().iter().map(|z| z.re).sum(),
        }
    }

    /// Validates normalization (1e-10), Hermiticity and positivity for
    /// density matrices (eigenvalues ≥ −1e-10).
    pub fn validate(&self) -> Result<()> {
        if (self.norm_trace() - 1.0).abs() > 1e-10 {
            return Err(NvmrError::InvalidInput(format!(
                "state norm/trace {} drifted from 1",
                self.norm_trace()
            )));
        }
        if let State::Mixed(m) = self {
            let defect = crate::operators::hermiticity_defect(m);
            if defect > 1e-10 {
                return Err(NvmrError::InvalidInput(format!(
                    "density matrix not Hermitian (defect {defect:.3e})"
                )));
            }
            let eig = m.clone().symmetric_eigen().eigenvalues;
            if eig.iter().any(|&l| l < -1e-10) {
                return Err(NvmrError::InvalidInput(
                    "density matrix not positive semidefinite".into(),
                ));
            }
        }
        Ok(())
    }

    /// Expectation value ⟨A⟩ (real part; A is assumed Hermitian).
    pub fn expectation(&self, op: &CMat) -> f64 {
        match self {
            State::Pure(v) => (v.adjoint() * op * v)[(0, 0)].re,
            State::Mixed(m) => (op * m).diagonal().iter().map(|z| z.re).sum(),
        }
    }

    /// Partial trace over site 0 (the first tensor factor).
    pub fn trace_out_first(&self) -> CMat {
        let rho = self.to_density();
        let half = rho.nrows() / 2;
        let mut out = CMat::zeros(half, half);
        for a in 0..half {
            for b in 0..half {
                out[(a, b)] = rho[(a, b)] + rho[(half + a, half + b)];
            }
        }
        out
    }

    /// Replaces the first tensor factor with the pure state `amps`
    /// (projective re-initialization of the NV sensor).
    pub fn reset_first(&self, amps: &[Complex64; 2]) -> State {
        let nuc = self.trace_out_first();
        let half = nuc.nrows();
        let mut out = CMat::zeros(2 * half, 2 * half);
        for e in 0..2 {
            for f in 0..2 {
                let w = amps[e] * amps[f].conj();
                for a in 0..half {
                    for b in 0..half {
                        out[(e * half + a, f * half + b)] = w * nuc[(a, b)];
                    }
                }
            }
        }
        State::Mixed(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{embed, minus_state, plus_state, s_z};
    use approx::assert_relative_eq;

    #[test]
    fn basis_state_expectations() {
        let st = State::basis(&[0, 1]);
        let sz0 = embed(&s_z(), 0, 2).unwrap();
        let sz1 = embed(&s_z(), 1, 2).unwrap();
        assert_relative_eq!(st.expectation(&sz0), 0.5);
        assert_relative_eq!(st.expectation(&sz1), -0.5);
        st.validate().unwrap();
    }

    #[test]
    fn maximally_mixed_is_valid_and_unpolarized() {
        let st = State::maximally_mixed(3);
        st.validate().unwrap();
        for site in 0..3 {
            let sz = embed(&s_z(), site, 3).unwrap();
            assert!(st.expectation(&sz).abs() < 1e-14);
        }
    }

    #[test]
    fn reset_first_installs_the_target_state() {
        let st = State::basis(&[1, 0]);
        let reset = st.reset_first(&plus_state());
        let sx_nv = embed(&crate::operators::s_x(), 0, 2).unwrap();
        assert_relative_eq!(reset.expectation(&sx_nv), 0.5, epsilon = 1e-12);
        let reset_minus = st.reset_first(&minus_state());
        assert_relative_eq!(reset_minus.expectation(&sx_nv), -0.5, epsilon = 1e-12);
        // nuclear factor untouched
        let sz1 = embed(&s_z(), 1, 2).unwrap();
        assert_relative_eq!(reset.expectation(&sz1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn trace_out_first_of_product_state() {
        let st = State::basis(&[0, 1]);
        let nuc = st.trace_out_first();
        assert_relative_eq!(nuc[(1, 1)].re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(nuc[(0, 0)].re, 0.0, epsilon = 1e-14);
    }
}
