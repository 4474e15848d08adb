//! Orthonormal pattern bases, positional encodings and the testing noise model.
//!
//! Training-relevant (TRR) patterns live in `R^dim`; testing-relevant (TSR)
//! patterns are a rotation of a subset of them, so every TSR pattern lies in
//! the TRR span. Positional encodings live in the token space `R^{2·dim}` and
//! are orthogonal to every lifted pattern `(μ, 0)`.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Largest admissible norm of the token noise.
pub const NOISE_BOUND: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Two inner products closer than this are treated as a tie.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternBasis {
    dim: usize,
    /// `dim × M`, one TRR pattern per column.
    trr: DMatrix<f64>,
    /// `dim × M'`, one TSR pattern per column (may have zero columns).
    tsr: DMatrix<f64>,
    /// `M' × M`; row j holds the coordinates of TSR pattern j in the TRR basis.
    span_coeffs: DMatrix<f64>,
    /// `2·dim × K`, one positional encoding per column.
    pos_enc: DMatrix<f64>,
    seed: u64,
    tsr_seed: Option<u64>,
}

/// A noisy copy `μ'_j + δ` of a TSR pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyToken {
    pub vector: DVector<f64>,
    pub tsr_index: usize,
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill keeps the draw order fixed for a given seed.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Remove the component of every column of `m` lying in the column span of the
/// orthonormal matrix `basis`. Applied twice for numerical safety.
fn project_out(m: &mut DMatrix<f64>, basis: &DMatrix<f64>) {
    if basis.ncols() == 0 {
        return;
    }
    for _ in 0..2 {
        let coeffs = basis.tr_mul(&*m);
        m.gemm(-1.0, basis, &coeffs, 1.0);
    }
}

fn orthonormal_columns(m: DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    let q = m.qr().q();
    q.columns(0, cols).into_owned()
}

/// Haar-distributed orthogonal matrix of size `n`.
pub fn random_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Build `M` orthonormal TRR patterns in `R^dim` and `K` positional encodings.
///
/// The encodings are placed in the upper half of the token space, inside the
/// orthogonal complement of the TRR span, whenever `dim - M >= K`; they are
/// then orthogonal to every lifted pattern and invisible to the value
/// projection. Otherwise they are drawn from the complement of the upper
/// lifted patterns in the full token space.
pub fn make_trr_basis(dim: usize, m: usize, k: usize, seed: u64) -> Result<PatternBasis> {
    if dim == 0 || m == 0 || k == 0 {
        return Err(Error::DimensionInfeasible(format!(
            "dim, M and K must be positive (dim = {dim}, M = {m}, K = {k})"
        )));
    }
    if m > dim {
        return Err(Error::DimensionInfeasible(format!("M = {m} exceeds dim = {dim}")));
    }
    if k > 2 * dim - m {
        return Err(Error::DimensionInfeasible(format!(
            "K = {k} exceeds 2·dim - M = {}",
            2 * dim - m
        )));
    }
    let mut rng = rng::seeded(seed);
    let trr = orthonormal_columns(gaussian_matrix(dim, m, &mut rng));

    let pos_enc = if dim - m >= k {
        let mut g = gaussian_matrix(dim, k, &mut rng);
        project_out(&mut g, &trr);
        let upper = orthonormal_columns(g);
        let mut pe = DMatrix::zeros(2 * dim, k);
        pe.view_mut((0, 0), (dim, k)).copy_from(&upper);
        pe
    } else {
        let mut lifted = DMatrix::zeros(2 * dim, m);
        lifted.view_mut((0, 0), (dim, m)).copy_from(&trr);
        let mut g = gaussian_matrix(2 * dim, k, &mut rng);
        project_out(&mut g, &lifted);
        orthonormal_columns(g)
    };

    Ok(PatternBasis {
        dim,
        trr,
        tsr: DMatrix::zeros(dim, 0),
        span_coeffs: DMatrix::zeros(0, m),
        pos_enc,
        seed,
        tsr_seed: None,
    })
}

/// Attach `M'` TSR patterns obtained by a seeded random rotation of the first
/// `M'` TRR patterns.
pub fn attach_tsr_basis(basis: PatternBasis, m_prime: usize, seed: u64) -> Result<PatternBasis> {
    if m_prime == 0 || m_prime > basis.m() {
        return Err(Error::DimensionInfeasible(format!(
            "M' = {m_prime} must lie in 1..={}",
            basis.m()
        )));
    }
    let rotation = random_rotation(m_prime, &mut rng::seeded(seed));
    let mut out = attach_tsr_with_rotation(basis, &rotation)?;
    out.tsr_seed = Some(seed);
    Ok(out)
}

/// Attach TSR patterns `μ'_j = Σ_i R[i, j] μ_i` for an explicit orthogonal
/// `M' × M'` matrix `R`.
pub fn attach_tsr_with_rotation(
    mut basis: PatternBasis,
    rotation: &DMatrix<f64>,
) -> Result<PatternBasis> {
    let m_prime = rotation.nrows();
    if rotation.ncols() != m_prime || m_prime == 0 || m_prime > basis.m() {
        return Err(Error::DimensionInfeasible(format!(
            "rotation must be square with size in 1..={}, got {}x{}",
            basis.m(),
            rotation.nrows(),
            rotation.ncols()
        )));
    }
    let gram = rotation.transpose() * rotation;
    if (gram - DMatrix::<f64>::identity(m_prime, m_prime)).amax() > 1e-10 {
        return Err(Error::InvalidParameter("rotation is not orthogonal".into()));
    }
    let subset = basis.trr.columns(0, m_prime);
    basis.tsr = subset * rotation;
    let mut coeffs = DMatrix::zeros(m_prime, basis.m());
    coeffs
        .view_mut((0, 0), (m_prime, m_prime))
        .copy_from(&rotation.transpose());
    basis.span_coeffs = coeffs;
    basis.tsr_seed = None;
    Ok(basis)
}

impl PatternBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of TRR patterns.
    pub fn m(&self) -> usize {
        self.trr.ncols()
    }

    /// Number of TSR patterns.
    pub fn m_prime(&self) -> usize {
        self.tsr.ncols()
    }

    /// Number of positional encodings.
    pub fn k(&self) -> usize {
        self.pos_enc.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tsr_seed(&self) -> Option<u64> {
        self.tsr_seed
    }

    pub fn trr_matrix(&self) -> &DMatrix<f64> {
        &self.trr
    }

    pub fn tsr_matrix(&self) -> &DMatrix<f64> {
        &self.tsr
    }

    pub fn span_coeffs(&self) -> &DMatrix<f64> {
        &self.span_coeffs
    }

    pub fn pos_enc_matrix(&self) -> &DMatrix<f64> {
        &self.pos_enc
    }

    pub fn trr(&self, i: usize) -> DVectorView<'_, f64> {
        self.trr.column(i)
    }

    pub fn tsr(&self, j: usize) -> DVectorView<'_, f64> {
        self.tsr.column(j)
    }

    /// Positional encoding of step `step` (1-based, as in prompt metadata).
    pub fn pos_enc(&self, step: usize) -> DVectorView<'_, f64> {
        self.pos_enc.column(step - 1)
    }

    /// Rebuild a basis from stored matrices, checking every invariant.
    pub fn from_parts(
        trr: DMatrix<f64>,
        tsr: DMatrix<f64>,
        span_coeffs: DMatrix<f64>,
        pos_enc: DMatrix<f64>,
        seed: u64,
        tsr_seed: Option<u64>,
    ) -> Result<Self> {
        let dim = trr.nrows();
        let basis = Self {
            dim,
            trr,
            tsr,
            span_coeffs,
            pos_enc,
            seed,
            tsr_seed,
        };
        basis.check_invariants(1e-10)?;
        Ok(basis)
    }

    /// Verify orthonormality, span and positional-encoding invariants.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        let m = self.m();
        let mp = self.m_prime();
        if self.tsr.nrows() != self.dim
            || self.pos_enc.nrows() != 2 * self.dim
            || self.span_coeffs.nrows() != mp
            || self.span_coeffs.ncols() != m
        {
            return fail("inconsistent basis shapes".into());
        }
        let orth_err = |q: &DMatrix<f64>| {
            let n = q.ncols();
            (q.transpose() * q - DMatrix::<f64>::identity(n, n)).amax()
        };
        if orth_err(&self.trr) > tol {
            return fail("TRR patterns are not orthonormal".into());
        }
        if mp > 0 {
            if mp > m || orth_err(&self.tsr) > tol {
                return fail("TSR patterns are not orthonormal".into());
            }
            let projected = &self.trr * (self.trr.transpose() * &self.tsr);
            if (&projected - &self.tsr).amax() > tol {
                return fail("TSR patterns leave the TRR span".into());
            }
            let rebuilt = &self.trr * self.span_coeffs.transpose();
            if (&rebuilt - &self.tsr).amax() > tol {
                return fail("span coefficients do not reproduce TSR patterns".into());
            }
        }
        if orth_err(&self.pos_enc) > tol {
            return fail("positional encodings are not orthonormal".into());
        }
        let cross = self.trr.transpose() * self.pos_enc.rows(0, self.dim);
        if cross.amax() > tol {
            return fail("positional encodings overlap lifted patterns".into());
        }
        Ok(())
    }

    /// Return `μ'_j + δ` with `‖δ‖ = level` and `δ ⟂ span(TSR)`.
    pub fn add_noise<R: Rng + ?Sized>(
        &self,
        tsr_index: usize,
        level: f64,
        rng: &mut R,
    ) -> Result<NoisyToken> {
        if !(0.0..=NOISE_BOUND).contains(&level) {
            return Err(Error::NoiseBound { level });
        }
        if tsr_index >= self.m_prime() {
            return Err(Error::InvalidParameter(format!(
                "TSR index {} out of range (M' = {})",
                tsr_index + 1,
                self.m_prime()
            )));
        }
        let mut vector = self.tsr.column(tsr_index).into_owned();
        if level > 0.0 {
            if self.dim <= self.m_prime() {
                return Err(Error::NoOrthogonalDirection {
                    dim: self.dim,
                    m_prime: self.m_prime(),
                });
            }
            let delta = loop {
                let mut g = gaussian_matrix(self.dim, 1, rng);
                project_out(&mut g, &self.tsr);
                let norm = g.norm();
                if norm > 1e-8 {
                    break g.column(0) * (level / norm);
                }
            };
            vector += delta;
        }
        Ok(NoisyToken { vector, tsr_index })
    }

    /// Index of the TSR pattern with the largest inner product with `x`.
    pub fn tsr_of(&self, x: DVectorView<'_, f64>) -> Result<usize> {
        if self.m_prime() == 0 {
            return Err(Error::InvalidParameter("basis has no TSR patterns".into()));
        }
        let scores = self.tsr.transpose() * x;
        let mut best = 0;
        for j in 1..scores.len() {
            if scores[j] > scores[best] {
                best = j;
            }
        }
        if let Some(other) =
            (0..scores.len()).find(|&j| j != best && (scores[best] - scores[j]).abs() <= TIE_TOL)
        {
            return Err(Error::AmbiguousPattern {
                first: best.min(other) + 1,
                second: best.max(other) + 1,
            });
        }
        Ok(best)
    }

    /// Lift a pattern vector into the upper half of the token space.
    pub fn lift(&self, v: DVectorView<'_, f64>) -> DVector<f64> {
        let mut out = DVector::zeros(2 * self.dim);
        out.rows_mut(0, self.dim).copy_from(&v);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn profile_basis() -> PatternBasis {
        let b = make_trr_basis(30, 20, 3, 7).unwrap();
        attach_tsr_basis(b, 10, 1).unwrap()
    }

    #[test]
    fn default_profile_basis_is_valid() {
        let b = profile_basis();
        assert_eq!((b.dim(), b.m(), b.m_prime(), b.k()), (30, 20, 10, 3));
        b.check_invariants(1e-10).unwrap();
        let gram = b.trr_matrix().transpose() * b.trr_matrix();
        assert!((gram - DMatrix::<f64>::identity(20, 20)).amax() < 1e-10);
    }

    #[test]
    fn one_dimensional_basis() {
        let b = make_trr_basis(1, 1, 1, 0).unwrap();
        assert!((b.trr(0)[0].abs() - 1.0).abs() < 1e-12);
        // The only encoding orthogonal to (e1, 0) is ±(0, 1).
        let c = b.pos_enc(1);
        assert!(c[0].abs() < 1e-12);
        assert!((c[1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_dimensions() {
        assert!(matches!(
            make_trr_basis(5, 6, 1, 0),
            Err(Error::DimensionInfeasible(_))
        ));
        assert!(matches!(
            make_trr_basis(5, 5, 6, 0),
            Err(Error::DimensionInfeasible(_))
        ));
        // K = 2·dim - M exactly is the feasible edge.
        make_trr_basis(5, 5, 5, 0).unwrap().check_invariants(1e-10).unwrap();
    }

    #[test]
    fn identity_rotation_reproduces_trr() {
        let b = make_trr_basis(8, 4, 2, 3).unwrap();
        let b = attach_tsr_with_rotation(b, &DMatrix::identity(4, 4)).unwrap();
        assert!((b.tsr_matrix() - b.trr_matrix()).amax() < 1e-15);
        assert!((b.span_coeffs() - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn tsr_larger_than_trr_is_rejected() {
        let b = make_trr_basis(8, 4, 2, 3).unwrap();
        assert!(attach_tsr_basis(b, 5, 0).is_err());
    }

    #[test]
    fn span_coefficients_reconstruct() {
        let b = profile_basis();
        for j in 0..b.m_prime() {
            let mut rebuilt = DVector::zeros(b.dim());
            for i in 0..b.m() {
                rebuilt += b.trr(i) * b.span_coeffs()[(j, i)];
            }
            assert!((rebuilt - b.tsr(j)).norm() < 1e-10);
        }
    }

    #[test]
    fn noise_is_orthogonal_and_norm_controlled() {
        let b = profile_basis();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tok = b.add_noise(2, 0.2, &mut rng).unwrap();
        let delta = &tok.vector - b.tsr(2);
        assert!((delta.norm() - 0.2).abs() < 1e-12);
        for i in 0..b.m_prime() {
            assert!(delta.dot(&b.tsr(i)).abs() < 1e-12);
        }
        assert_eq!(b.tsr_of(tok.vector.as_view()).unwrap(), 2);
    }

    #[test]
    fn zero_noise_is_exact() {
        let b = profile_basis();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let tok = b.add_noise(0, 0.0, &mut rng).unwrap();
        assert_eq!(tok.vector, b.tsr(0).into_owned());
    }

    #[test]
    fn noise_errors() {
        let b = profile_basis();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.add_noise(0, 0.71, &mut rng),
            Err(Error::NoiseBound { .. })
        ));
        let full = attach_tsr_basis(make_trr_basis(4, 4, 2, 0).unwrap(), 4, 0).unwrap();
        assert!(matches!(
            full.add_noise(0, 0.1, &mut rng),
            Err(Error::NoOrthogonalDirection { .. })
        ));
        full.add_noise(0, 0.0, &mut rng).unwrap();
    }

    #[test]
    fn tsr_of_mixtures_and_ties() {
        let b = profile_basis();
        assert_eq!(b.tsr_of(b.tsr(4)).unwrap(), 4);
        let mix = b.tsr(1) * 0.9 + b.tsr(6) * 0.1;
        assert_eq!(b.tsr_of(mix.as_view()).unwrap(), 1);
        let tie = b.tsr(1) * 0.5 + b.tsr(6) * 0.5;
        assert!(matches!(
            b.tsr_of(tie.as_view()),
            Err(Error::AmbiguousPattern { first: 2, second: 7 })
        ));
    }
}
