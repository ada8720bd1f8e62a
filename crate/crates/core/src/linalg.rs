//! Dense complex matrix and superoperator algebra.
//!
//! Everything downstream operates on `ndarray::Array2<Complex64>`. Operators
//! are vectorized by column stacking: `vec(X)[j*rows + i] = X[i, j]`, so
//! left-multiplication by `A` is `I ⊗ A`, right-multiplication is `Aᵀ ⊗ I`,
//! and the sandwich `ρ → AρA†` is `conj(A) ⊗ A`.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Complex identity matrix.
pub fn eye(n: usize) -> CMat {
    Array2::from_diag_elem(n, ONE)
}

/// Conjugate transpose.
pub fn dagger(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

/// Kronecker product, dimensions `(r_a·r_b) × (c_a·c_b)`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    ndarray::linalg::kron(a, b)
}

/// Max absolute deviation from Hermiticity.
pub fn hermiticity_deviation(m: &CMat) -> f64 {
    let md = dagger(m);
    (m - &md)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.is_square() && hermiticity_deviation(m) <= tol
}

/// Trace of a square matrix.
pub fn trace(m: &CMat) -> C64 {
    m.diag().iter().sum()
}

/// Column-stacking vectorization.
pub fn vec_op(m: &CMat) -> CVec {
    let (r, c) = m.dim();
    let mut v = Array1::from_elem(r * c, ZERO);
    for j in 0..c {
        for i in 0..r {
            v[j * r + i] = m[[i, j]];
        }
    }
    v
}

/// Inverse of [`vec_op`] for square operators.
pub fn unvec_op(v: &CVec) -> CMat {
    let d = (v.len() as f64).sqrt().round() as usize;
    debug_assert_eq!(d * d, v.len(), "unvec expects a square operator");
    let mut m = Array2::from_elem((d, d), ZERO);
    for j in 0..d {
        for i in 0..d {
            m[[i, j]] = v[j * d + i];
        }
    }
    m
}

/// Trace of a vectorized square operator without reshaping.
pub fn trace_vec(v: &CVec) -> C64 {
    let d = (v.len() as f64).sqrt().round() as usize;
    (0..d).map(|i| v[i * d + i]).sum()
}

/// 1-norm (maximum absolute column sum).
fn one_norm(m: &CMat) -> f64 {
    let (r, c) = m.dim();
    (0..c)
        .map(|j| (0..r).map(|i| m[[i, j]].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization with partial pivoting, solving `A X = B` in place.
///
/// `B` may have any number of columns. Fails on (numerically) singular `A`.
pub fn lu_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::NonSquare { rows: a.nrows(), cols: a.ncols() });
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "lu_solve: A is {n}x{n} but B has {} rows",
            b.nrows()
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = one_norm(a).max(f64::MIN_POSITIVE);
    for k in 0..n {
        // pivot
        let mut p = k;
        let mut best = lu[[k, k]].norm();
        for i in k + 1..n {
            let v = lu[[i, k]].norm();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < 1e-14 * scale {
            return Err(Error::SingularSystem);
        }
        if p != k {
            for j in 0..n {
                lu.swap([k, j], [p, j]);
            }
            for j in 0..x.ncols() {
                x.swap([k, j], [p, j]);
            }
        }
        let piv = lu[[k, k]];
        for i in k + 1..n {
            let f = lu[[i, k]] / piv;
            lu[[i, k]] = f;
            for j in k + 1..n {
                let v = lu[[k, j]];
                lu[[i, j]] -= f * v;
            }
            for j in 0..x.ncols() {
                let v = x[[k, j]];
                x[[i, j]] -= f * v;
            }
        }
    }
    // back substitution
    for j in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut s = x[[i, j]];
            for k in i + 1..n {
                s -= lu[[i, k]] * x[[k, j]];
            }
            x[[i, j]] = s / lu[[i, i]];
        }
    }
    Ok(x)
}

// Padé-13 coefficients for scaling-and-squaring (Higham 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by Padé-13 scaling and squaring.
pub fn expm(m: &CMat) -> Result<CMat> {
    if !m.is_square() {
        return Err(Error::NonSquare { rows: m.nrows(), cols: m.ncols() });
    }
    let n = m.nrows();
    let norm = one_norm(m);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m.mapv(|z| z / C64::new(2f64.powi(s), 0.0));
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let b = |k: usize| C64::new(PADE13[k], 0.0);
    let id = eye(n);
    let u_inner = a6.dot(&(&a6 * b(13) + &a4 * b(11) + &a2 * b(9)))
        + &a6 * b(7)
        + &a4 * b(5)
        + &a2 * b(3)
        + &id * b(1);
    let u = a.dot(&u_inner);
    let v = a6.dot(&(&a6 * b(12) + &a4 * b(10) + &a2 * b(8)))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &id * b(0);
    let mut r = lu_solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}

/// Reduced operator over the subsystems in `keep` (indices into `dims`).
///
/// `rho` lives on the tensor product of subsystems with dimensions `dims`
/// (row-major ordering, first factor slowest). The trace is preserved.
pub fn partial_trace(rho: &CMat, dims: &[usize], keep: &[usize]) -> Result<CMat> {
    let total: usize = dims.iter().product();
    if rho.nrows() != total || rho.ncols() != total {
        return Err(Error::DimensionMismatch(format!(
            "partial_trace: operator is {}x{} but subsystem dims multiply to {total}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    if keep.iter().any(|&k| k >= dims.len()) {
        return Err(Error::DimensionMismatch(
            "partial_trace: keep index out of range".into(),
        ));
    }
    let kept_dim: usize = keep.iter().map(|&k| dims[k]).product();
    let traced: Vec<usize> =
        (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let traced_dim: usize = traced.iter().map(|&k| dims[k]).product();

    // strides for row-major multi-index
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let flat = |multi: &[usize]| -> usize {
        multi.iter().zip(&strides).map(|(m, s)| m * s).sum()
    };
    let unflat = |mut idx: usize, subsys: &[usize]| -> Vec<usize> {
        let mut out = vec![0; subsys.len()];
        for (slot, &s) in subsys.iter().enumerate().rev() {
            out[slot] = idx % dims[s];
            idx /= dims[s];
        }
        out
    };

    let mut out = Array2::from_elem((kept_dim, kept_dim), ZERO);
    let mut multi_row = vec![0usize; dims.len()];
    let mut multi_col = vec![0usize; dims.len()];
    for a in 0..kept_dim {
        let ka = unflat(a, keep);
        for b in 0..kept_dim {
            let kb = unflat(b, keep);
            let mut acc = ZERO;
            for t in 0..traced_dim {
                let tt = unflat(t, &traced);
                for (slot, &s) in keep.iter().enumerate() {
                    multi_row[s] = ka[slot];
                    multi_col[s] = kb[slot];
                }
                for (slot, &s) in traced.iter().enumerate() {
                    multi_row[s] = tt[slot];
                    multi_col[s] = tt[slot];
                }
                acc += rho[[flat(&multi_row), flat(&multi_col)]];
            }
            out[[a, b]] = acc;
        }
    }
    Ok(out)
}

/// Overlap fidelity `Tr[P ρ]` against a pure-state projector `P`.
pub fn overlap_fidelity(target_pure: &CMat, rho: &CMat) -> Result<f64> {
    if target_pure.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(format!(
            "overlap_fidelity: target {:?} vs state {:?}",
            target_pure.dim(),
            rho.dim()
        )));
    }
    let p2 = target_pure.dot(target_pure);
    let dev = (&p2 - target_pure)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let tr = trace(target_pure);
    if dev > 1e-8 || (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
        return Err(Error::NotRankOne { dev, trace: tr.re });
    }
    Ok(trace(&target_pure.dot(rho)).re)
}

/// Eigenvalues of a Hermitian matrix by the cyclic Jacobi method, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::NonSquare { rows: m.nrows(), cols: m.ncols() });
    }
    let dev = hermiticity_deviation(m);
    if dev > 1e-8 {
        return Err(Error::NonHermitian { max_dev: dev });
    }
    let n = m.nrows();
    let mut a = m.clone();
    // symmetrize to suppress tolerance-level noise
    a = (&a + &dagger(&a)).mapv(|z| z * 0.5);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| a[[i, j]].norm_sqr())
            .sum();
        if off.sqrt() < 1e-14 * (1.0 + one_norm(&a)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq.norm() < 1e-300 {
                    continue;
                }
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let phase = apq / apq.norm();
                let tau = (aqq - app) / (2.0 * apq.norm());
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // G: rows/cols p,q of the unitary rotation
                let gpp = C64::new(c, 0.0);
                let gpq = phase * s;
                let gqp = -phase.conj() * s;
                let gqq = C64::new(c, 0.0);
                // A ← G† A G
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = akp * gpp + akq * gqp;
                    a[[k, q]] = akp * gpq + akq * gqq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = gpp.conj() * apk + gqp.conj() * aqk;
                    a[[q, k]] = gpq.conj() * apk + gqq.conj() * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = a.diag().iter().map(|z| z.re).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eig)
}

/// Quantum-dot density matrix on the fixed basis {|↑⟩, |↓⟩, |T⇑⟩, |T⇓⟩}.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: CMat,
}

impl DensityMatrix {
    pub const DIM: usize = 4;

    /// Wrap a 4×4 matrix, checking Hermiticity, trace range, and positivity.
    ///
    /// Conditional (unnormalized) states are accepted: trace may be anywhere
    /// in `[0, 1 + 1e-10]`.
    pub fn new(m: CMat) -> Result<Self> {
        if m.dim() != (4, 4) {
            return Err(Error::DimensionMismatch(format!(
                "DensityMatrix must be 4x4, got {:?}",
                m.dim()
            )));
        }
        let dev = hermiticity_deviation(&m);
        if dev > 1e-10 {
            return Err(Error::NonHermitian { max_dev: dev });
        }
        let tr = trace(&m);
        if tr.im.abs() > 1e-10 || tr.re < -1e-10 || tr.re > 1.0 + 1e-10 {
            return Err(Error::InvalidParams {
                field: "trace".into(),
                reason: format!("trace {tr} outside [0, 1]"),
            });
        }
        let eig = hermitian_eigenvalues(&m)?;
        if eig.first().copied().unwrap_or(0.0) < -1e-9 {
            return Err(Error::InvalidParams {
                field: "eigenvalues".into(),
                reason: format!("negative eigenvalue {:.3e}", eig[0]),
            });
        }
        Ok(Self { m })
    }

    /// Wrap without validation (for internal hot paths).
    pub fn from_matrix_unchecked(m: CMat) -> Self {
        Self { m }
    }

    /// Maximally mixed ground-state manifold `(|↑⟩⟨↑| + |↓⟩⟨↓|)/2`.
    pub fn mixed_ground() -> Self {
        let mut m = Array2::from_elem((4, 4), ZERO);
        m[[0, 0]] = C64::new(0.5, 0.0);
        m[[1, 1]] = C64::new(0.5, 0.0);
        Self { m }
    }

    /// Projector onto the basis state with the given index.
    pub fn basis_state(index: usize) -> Self {
        let mut m = Array2::from_elem((4, 4), ZERO);
        m[[index, index]] = ONE;
        Self { m }
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn into_matrix(self) -> CMat {
        self.m
    }

    pub fn trace(&self) -> f64 {
        trace(&self.m).re
    }

    /// Population left in the trion manifold.
    pub fn trion_population(&self) -> f64 {
        (self.m[[2, 2]] + self.m[[3, 3]]).re
    }
}

/// Linear map on vectorized operators over a `dim`-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    matrix: CMat,
    dim: usize,
}

impl Superoperator {
    pub fn new(matrix: CMat) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::NonSquare { rows: n, cols: matrix.ncols() });
        }
        let dim = (n as f64).sqrt().round() as usize;
        if dim * dim != n {
            return Err(Error::DimensionMismatch(format!(
                "superoperator side {n} is not a perfect square"
            )));
        }
        Ok(Self { matrix, dim })
    }

    pub fn zero(dim: usize) -> Self {
        Self { matrix: Array2::from_elem((dim * dim, dim * dim), ZERO), dim }
    }

    pub fn identity(dim: usize) -> Self {
        Self { matrix: eye(dim * dim), dim }
    }

    /// `ρ → Aρ`, i.e. `I ⊗ A` under column stacking.
    pub fn left_mul(a: &CMat) -> Self {
        let dim = a.nrows();
        Self { matrix: kron(&eye(dim), a), dim }
    }

    /// `ρ → ρA`, i.e. `Aᵀ ⊗ I` under column stacking.
    pub fn right_mul(a: &CMat) -> Self {
        let dim = a.nrows();
        Self { matrix: kron(&a.t().to_owned(), &eye(dim)), dim }
    }

    /// `ρ → AρA†`, i.e. `conj(A) ⊗ A`.
    pub fn conjugation(a: &CMat) -> Self {
        let dim = a.nrows();
        Self { matrix: kron(&a.mapv(|z| z.conj()), a), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    /// Apply to an operator: `unvec(S · vec(ρ))`.
    pub fn apply(&self, rho: &CMat) -> CMat {
        unvec_op(&self.matrix.dot(&vec_op(rho)))
    }

    pub fn apply_vec(&self, v: &CVec) -> CVec {
        self.matrix.dot(v)
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        Self { matrix: self.matrix.dot(&other.matrix), dim: self.dim }
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self { matrix: self.matrix.mapv(|z| z * factor), dim: self.dim }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { matrix: &self.matrix + &other.matrix, dim: self.dim }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { matrix: &self.matrix - &other.matrix, dim: self.dim }
    }

    /// `exp(self · t)`.
    pub fn exp_scaled(&self, t: f64) -> Result<Self> {
        let m = self.matrix.mapv(|z| z * t);
        Ok(Self { matrix: expm(&m)?, dim: self.dim })
    }
}

/// `conj(A) ⊗ A` for possibly rectangular `A` (maps between operator spaces).
pub fn conjugation_matrix(a: &CMat) -> CMat {
    kron(&a.mapv(|z| z.conj()), a)
}
