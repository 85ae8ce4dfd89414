//! Dense matrix primitives shared by every other module.
//!
//! [`SpdMatrix`] and [`NonnegativeMatrix`] are thin newtypes over
//! [`nalgebra::DMatrix`] that enforce their invariants at construction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{Error, Result};

/// Tolerance used for the row-stochastic flag.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric positive-definite matrix. Symmetrized on every construction;
/// positive definiteness is established by a successful Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "SpdMatrix must be square",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidMatrix(
                "SpdMatrix must have positive dimension".into(),
            ));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let sym = symmetrize(&m);
        if sym.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("Cholesky factorization failed"));
        }
        #[cfg(debug_assertions)]
        {
            let eig = sym.clone().symmetric_eigenvalues();
            let scale = eig.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
            debug_assert!(eig.iter().all(|&e| e > -1e-10 * scale));
        }
        Ok(SpdMatrix(sym))
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(DMatrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "identity scale must be positive, got {c}"
            )));
        }
        Ok(SpdMatrix(DMatrix::identity(n, n) * c))
    }

    pub fn from_scalar(x: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, x))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Inverse computed through the Cholesky factor.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        spd_inverse(&self.0).map(SpdMatrix)
    }

    /// Lower-triangular Cholesky factor `L` with `L Lᵀ = self`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        // Construction guarantees success.
        self.0
            .clone()
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| DMatrix::zeros(self.dim(), self.dim()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue_sym(&self.0)
    }

    /// Largest eigenvalue, which is also the spectral norm.
    pub fn max_eigenvalue(&self) -> f64 {
        self.0.clone().symmetric_eigenvalues().max()
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky; the result is
/// symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite(
        "Cholesky factorization failed during inversion",
    ))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, &e| acc.max(e.abs()))
}

/// Loewner comparison `a ⪰ b - slack·I`.
pub fn loewner_geq(a: &DMatrix<f64>, b: &DMatrix<f64>, slack: f64) -> bool {
    min_eigenvalue_sym(&(a - b)) >= -slack
}

/// Entrywise-nonnegative square matrix (weighting and consensus matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct NonnegativeMatrix(DMatrix<f64>);

impl NonnegativeMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "NonnegativeMatrix must be square",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidMatrix(
                "NonnegativeMatrix must have positive size".into(),
            ));
        }
        if let Some(x) = m.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidMatrix(format!(
                "entry {x} is negative or non-finite"
            )));
        }
        Ok(NonnegativeMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "NonnegativeMatrix rows",
                expected: n,
                found: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        NonnegativeMatrix(DMatrix::identity(n, n))
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    /// Largest absolute deviation of a row sum from 1.
    pub fn row_sum_deviation(&self) -> f64 {
        self.0
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_row_stochastic(&self) -> bool {
        self.row_sum_deviation() <= STOCHASTIC_TOL
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        let col_dev = self
            .0
            .column_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        self.row_sum_deviation() <= tol && col_dev <= tol
    }

    pub fn transpose(&self) -> Self {
        NonnegativeMatrix(self.0.transpose())
    }

    pub fn mul(&self, other: &NonnegativeMatrix) -> NonnegativeMatrix {
        NonnegativeMatrix(&self.0 * &other.0)
    }

    /// `self^k`, with `self^0 = I`.
    pub fn pow(&self, k: usize) -> NonnegativeMatrix {
        let mut result = DMatrix::identity(self.size(), self.size());
        let mut base = self.0.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        NonnegativeMatrix(result)
    }

    /// Multiplies column `j` by `scales[j]`.
    pub fn scale_columns(&self, scales: &[f64]) -> Result<NonnegativeMatrix> {
        if scales.len() != self.size() {
            return Err(Error::DimensionMismatch {
                context: "column scales",
                expected: self.size(),
                found: scales.len(),
            });
        }
        let mut m = self.0.clone();
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= scales[j];
        }
        NonnegativeMatrix::new(m)
    }

    /// Strong connectivity of the directed graph `i -> j` iff `m_ij > 0`.
    pub fn is_irreducible(&self) -> bool {
        let pattern = Pattern::of(self);
        pattern.strongly_connected()
    }

    /// Smallest `k <= (N-1)^2 + 1` with `M^k` entrywise positive, if any.
    pub fn primitivity_exponent(&self) -> Option<usize> {
        let base = Pattern::of(self);
        let n = self.size();
        let bound = (n - 1) * (n - 1) + 1;
        let mut power = base.clone();
        for k in 1..=bound {
            if power.all_ones() {
                return Some(k);
            }
            if k < bound {
                power = power.times(&base);
            }
        }
        None
    }
}

/// Boolean sparsity pattern stored as one bitset per row.
#[derive(Clone)]
struct Pattern {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl Pattern {
    fn of(m: &NonnegativeMatrix) -> Self {
        let n = m.size();
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];
        for i in 0..n {
            for j in 0..n {
                if m.get(i, j) > 0.0 {
                    bits[i * words + j / 64] |= 1 << (j % 64);
                }
            }
        }
        Pattern { n, words, bits }
    }

    #[inline]
    fn has(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    fn times(&self, rhs: &Pattern) -> Pattern {
        let mut bits = vec![0u64; self.bits.len()];
        for i in 0..self.n {
            for k in 0..self.n {
                if self.has(i, k) {
                    for w in 0..self.words {
                        bits[i * self.words + w] |= rhs.bits[k * self.words + w];
                    }
                }
            }
        }
        Pattern {
            n: self.n,
            words: self.words,
            bits,
        }
    }

    fn all_ones(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.has(i, j)))
    }

    fn reach(&self, start: usize, reverse: bool) -> usize {
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in 0..self.n {
                let edge = if reverse {
                    self.has(v, u)
                } else {
                    self.has(u, v)
                };
                if edge && !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count
    }

    fn strongly_connected(&self) -> bool {
        self.reach(0, false) == self.n && self.reach(0, true) == self.n
    }
}

/// Weighted harmonic mean `(Σ_j w_j P_j⁻¹)⁻¹`.
///
/// Entries with zero weight are skipped, so their matrix may be `None`.
pub fn harmonic_mean(weights: &[f64], mats: &[Option<&SpdMatrix>]) -> Result<SpdMatrix> {
    if weights.len() != mats.len() {
        return Err(Error::DimensionMismatch {
            context: "harmonic_mean weights vs matrices",
            expected: weights.len(),
            found: mats.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter(
            "harmonic_mean weights must be nonnegative".into(),
        ));
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::ZeroWeights);
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::NotStochastic {
            context: "harmonic_mean weights",
            deviation: (total - 1.0).abs(),
        });
    }
    let mut dim = None;
    let mut info: Option<DMatrix<f64>> = None;
    for (w, m) in weights.iter().zip(mats) {
        if *w == 0.0 {
            continue;
        }
        let m =
            m.ok_or_else(|| Error::InvalidParameter("missing matrix for positive weight".into()))?;
        match dim {
            None => dim = Some(m.dim()),
            Some(d) if d != m.dim() => {
                return Err(Error::DimensionMismatch {
                    context: "harmonic_mean operands",
                    expected: d,
                    found: m.dim(),
                })
            }
            _ => {}
        }
        let term = m.inverse()?.into_matrix() * *w;
        info = Some(match info {
            None => term,
            Some(acc) => acc + term,
        });
    }
    let info = info.ok_or(Error::ZeroWeights)?;
    SpdMatrix::new(spd_inverse(&info)?)
}

/// Primitivity test by boolean-pattern powers up to the Wielandt bound.
pub fn is_primitive(m: &NonnegativeMatrix) -> bool {
    m.primitivity_exponent().is_some()
}

/// Iteration cap for [`perron_left_vector`].
pub const PERRON_MAX_ITER: usize = 1_000_000;

/// Left Perron vector `q` of a primitive row-stochastic matrix: `qᵀM = qᵀ`,
/// `q > 0`, `Σq = 1`. Left power iteration from the uniform vector until
/// successive iterates differ by less than `tol` in max norm.
pub fn perron_left_vector(m: &NonnegativeMatrix, tol: f64) -> Result<DVector<f64>> {
    if !m.is_row_stochastic() {
        return Err(Error::NotStochastic {
            context: "Perron vector requires a row-stochastic matrix",
            deviation: m.row_sum_deviation(),
        });
    }
    if !is_primitive(m) {
        return Err(Error::NotPrimitive(
            "Perron left vector requires a primitive matrix",
        ));
    }
    let n = m.size();
    let mt = m.matrix().transpose();
    let mut q = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..PERRON_MAX_ITER {
        let next = &mt * &q;
        let diff = (&next - &q).amax();
        if diff < tol {
            let s = q.sum();
            q /= s;
            return Ok(q);
        }
        q = next;
    }
    Err(Error::NoConvergence {
        what: "Perron power iteration",
        iterations: PERRON_MAX_ITER,
    })
}

/// Stacks the nonempty blocks `[C_1; …; C_N]`.
pub fn stack_rows(n: usize, blocks: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, n);
    let mut r = 0;
    for b in blocks {
        if b.nrows() == 0 {
            continue;
        }
        if b.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "observation block columns",
                expected: n,
                found: b.ncols(),
            });
        }
        out.view_mut((r, 0), (b.nrows(), n)).copy_from(b);
        r += b.nrows();
    }
    Ok(out)
}

/// Numerical rank of `[C; CA; …; CA^{n-1}]` with threshold `n·σ_max·1e-10`.
pub fn observability_rank(a: &DMatrix<f64>, blocks: &[&DMatrix<f64>]) -> Result<usize> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "state matrix must be square",
            expected: n,
            found: a.ncols(),
        });
    }
    let c = stack_rows(n, blocks)?;
    let m = c.nrows();
    if m == 0 {
        return Ok(0);
    }
    let mut obs = DMatrix::zeros(m * n, n);
    let mut block = c;
    for k in 0..n {
        obs.view_mut((k * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    let sv = obs.svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return Ok(0);
    }
    let threshold = n as f64 * smax * 1e-10;
    Ok(sv.iter().filter(|s| **s > threshold).count())
}

pub fn is_collectively_observable(a: &DMatrix<f64>, blocks: &[&DMatrix<f64>]) -> Result<bool> {
    Ok(observability_rank(a, blocks)? == a.nrows())
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    /// Matrices larger than this use power iteration instead of a Schur decomposition.
    pub cutoff: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            cutoff: 2000,
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    spectral_radius_with(m, &SpectralOptions::default())
}

pub fn spectral_radius_with(m: &DMatrix<f64>, opts: &SpectralOptions) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "spectral_radius requires a square matrix");
    if n == 0 || m.iter().all(|x| *x == 0.0) {
        return 0.0;
    }
    if n <= opts.cutoff {
        let max_iter = (200 * n).max(2000);
        if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, max_iter) {
            return schur
                .complex_eigenvalues()
                .iter()
                .fold(0.0_f64, |acc, z| acc.max(z.re.hypot(z.im)));
        }
    }
    power_spectral_radius(|x| m * x, n, opts)
}

/// Magnitude estimate of the dominant eigenvalue(s) of a linear map from the
/// growth of `‖Mᵏx‖`. The first half of the accumulated log-growth is dropped
/// so the transient does not bias the estimate; this works without deflation
/// for complex or sign-alternating dominant pairs.
pub fn power_spectral_radius<F>(apply: F, n: usize, opts: &SpectralOptions) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = DVector::from_fn(n, |i, _| 1.0 / (1.0 + i as f64).sqrt());
    x /= x.norm();
    // log_norms[k] = log ‖M^k x0‖
    let mut log_norms: Vec<f64> = vec![0.0];
    let mut last = f64::NAN;
    let mut k = 0;
    while k < opts.max_iter {
        let y = apply(&x);
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        k += 1;
        log_norms.push(log_norms[k - 1] + ny.ln());
        x = y / ny;
        if k >= 8 && k.is_power_of_two() {
            let half = k / 2;
            let est = ((log_norms[k] - log_norms[half]) / (k - half) as f64).exp();
            if (est - last).abs() <= opts.tol * est.max(1.0) {
                return est;
            }
            last = est;
        }
    }
    last
}

/// Solves `X = F X Fᵀ + W` by doubling: `X ← X + G X Gᵀ`, `G ← G²`, which
/// after `k` passes sums the first `2ᵏ` terms of the series.
///
/// Fails with [`Error::Unstable`] when `ρ(F) ≥ 1` and with
/// [`Error::NoConvergence`] when the relative residual
/// `‖X − FXFᵀ − W‖_F / ‖W‖_F` is still above `tol` after `max_iter` passes.
pub fn solve_dle(
    f: &DMatrix<f64>,
    w: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if f.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "DLE transition must be square",
            expected: n,
            found: f.ncols(),
        });
    }
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "DLE right-hand side",
            expected: n,
            found: w.nrows(),
        });
    }
    let rho = spectral_radius(f);
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let w = symmetrize(w);
    let wnorm = w.norm();
    if wnorm == 0.0 {
        return Ok(w);
    }
    let mut x = w.clone();
    let mut g = f.clone();
    for _ in 0..max_iter {
        let inc = &g * &x * g.transpose();
        x += inc;
        x = symmetrize(&x);
        let residual = (&x - f * &x * f.transpose() - &w).norm() / wnorm;
        if residual <= tol {
            return Ok(x);
        }
        g = &g * &g;
    }
    Err(Error::NoConvergence {
        what: "DLE doubling",
        iterations: max_iter,
    })
}
