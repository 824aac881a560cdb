//! Finite-dimensional complex linear algebra shared by every model layer.
//!
//! Operators live on truncated Hilbert spaces. Measurement operators that
//! commute with a conserved quantity (total photon number, excitation number)
//! are stored block-diagonally through [`BlockLayout`], which is what keeps
//! the photonic pipelines tractable.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const EIGEN_FLOOR: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POVM_POSITIVITY_TOL: f64 = 1e-10;
pub const POVM_COMPLETENESS_TOL: f64 = 1e-8;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `(M + M†)/2`.
pub fn hermitize(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_hermitian(m: &ComplexMatrix, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) <= tol
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), ComplexMatrix::zeros(0, 0));
    }
    let eig = hermitize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn hermitian_function(m: &ComplexMatrix, f: impl Fn(f64) -> C64) -> ComplexMatrix {
    let (vals, vecs) = eigh(m);
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (col, &v) in vals.iter().enumerate() {
        let fv = f(v);
        for r in 0..n {
            scaled[(r, col)] *= fv;
        }
    }
    scaled * vecs.adjoint()
}

/// `exp(-i t H)` for Hermitian `H`.
pub fn expm_hermitian(h: &ComplexMatrix, t: f64) -> ComplexMatrix {
    hermitian_function(h, |v| C64::from_polar(1.0, -t * v))
}

/// Square root of a positive semidefinite matrix; negative eigenvalues are clipped.
pub fn sqrtm_psd(m: &ComplexMatrix) -> ComplexMatrix {
    hermitian_function(m, |v| c(v.max(0.0).sqrt(), 0.0))
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm_hermitian(m: &ComplexMatrix) -> f64 {
    eigh(m).0.iter().map(|v| v.abs()).sum()
}

pub fn trace(m: &ComplexMatrix) -> C64 {
    m.trace()
}

/// Real part of `tr(A B)` for Hermitian `A`, `B` without forming the product.
#[inline]
pub fn trace_product_hermitian(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    // tr(AB) = sum_ij A_ij B_ji = sum_ij A_ij conj(B_ij) for Hermitian B.
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Kronecker product with the first factor outermost.
pub fn tensor_product(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

pub fn tensor_product_vec(a: &ComplexVector, b: &ComplexVector) -> ComplexVector {
    a.kronecker(b)
}

/// Traces out every factor not listed in `keep`. Kept factors retain their order.
pub fn partial_trace(m: &ComplexMatrix, factor_dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
    let total: usize = factor_dims.iter().product();
    if !m.is_square() || m.nrows() != total {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{} but factor dims multiply to {}",
            m.nrows(),
            m.ncols(),
            total
        )));
    }
    if keep.is_empty() {
        return Err(Error::InvalidArgument("keep set must be nonempty".into()));
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.iter().any(|&k| k >= factor_dims.len()) {
        return Err(Error::InvalidArgument("keep index out of range".into()));
    }
    let traced: Vec<usize> = (0..factor_dims.len()).filter(|i| !keep_sorted.contains(i)).collect();
    let kept_dim: usize = keep_sorted.iter().map(|&i| factor_dims[i]).product();
    let traced_dim: usize = traced.iter().map(|&i| factor_dims[i]).product();

    // Row-major strides over the factor digits, first factor most significant.
    let mut strides = vec![1usize; factor_dims.len()];
    for i in (0..factor_dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * factor_dims[i + 1];
    }
    let offset = |group: &[usize], mut idx: usize| -> usize {
        let mut off = 0;
        for &f in group.iter().rev() {
            off += (idx % factor_dims[f]) * strides[f];
            idx /= factor_dims[f];
        }
        off
    };
    let kept_offsets: Vec<usize> = (0..kept_dim).map(|i| offset(&keep_sorted, i)).collect();
    let traced_offsets: Vec<usize> = (0..traced_dim).map(|i| offset(&traced, i)).collect();

    let mut out = ComplexMatrix::zeros(kept_dim, kept_dim);
    for (r, &ro) in kept_offsets.iter().enumerate() {
        for (col, &co) in kept_offsets.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for &t in &traced_offsets {
                acc += m[(ro + t, co + t)];
            }
            out[(r, col)] = acc;
        }
    }
    Ok(out)
}

/// Top-left `d x d` block.
pub fn truncate_operator(m: &ComplexMatrix, d: usize) -> Result<ComplexMatrix> {
    if d > m.nrows() || d > m.ncols() {
        return Err(Error::DimensionMismatch(format!("cannot truncate {}x{} operator to {d}", m.nrows(), m.ncols())));
    }
    Ok(m.view((0, 0), (d, d)).into_owned())
}

pub fn projector(v: &ComplexVector) -> ComplexMatrix {
    v * v.adjoint()
}

pub fn basis_vector(dim: usize, k: usize) -> ComplexVector {
    let mut v = ComplexVector::zeros(dim);
    v[k] = c(1.0, 0.0);
    v
}

pub fn diag_real(values: &[f64]) -> ComplexMatrix {
    let n = values.len();
    ComplexMatrix::from_fn(n, n, |r, col| if r == col { c(values[r], 0.0) } else { c(0.0, 0.0) })
}

/// A normalized ket.
#[derive(Debug, Clone, PartialEq)]
pub struct KetVector {
    amplitudes: ComplexVector,
}

impl KetVector {
    pub fn new(amplitudes: ComplexVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("ket norm {norm} != 1")));
        }
        Ok(Self { amplitudes })
    }

    pub fn normalized(amplitudes: ComplexVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero ket".into()));
        }
        Ok(Self { amplitudes: amplitudes / c(norm, 0.0) })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &ComplexVector {
        &self.amplitudes
    }

    pub fn to_density_matrix(&self) -> DensityMatrix {
        DensityMatrix { matrix: projector(&self.amplitudes) }
    }
}

/// Hermitian, positive, unit-trace operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates the invariants without modifying the matrix.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidState("matrix is not square".into()));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        if !is_hermitian(&matrix, HERMITIAN_TOL) {
            return Err(Error::InvalidState("not Hermitian".into()));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let (vals, _) = eigh(&matrix);
        if let Some(&min) = vals.first() {
            if min < -EIGEN_FLOOR {
                return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
            }
        }
        Ok(Self { matrix })
    }

    /// Symmetrizes, clips eigenvalues in `[-1e-10, 0)` to zero and renormalizes.
    /// Eigenvalues below the floor are still an error.
    pub fn from_numerical(matrix: ComplexMatrix) -> Result<Self> {
        Self::clipped(matrix, Some(EIGEN_FLOOR))
    }

    /// Nearest-in-spectrum state: every negative eigenvalue is set to zero.
    /// For iterates of positivity-preserving maps that drift by roundoff.
    pub fn project_psd(matrix: ComplexMatrix) -> Result<Self> {
        Self::clipped(matrix, None)
    }

    fn clipped(matrix: ComplexMatrix, floor: Option<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidState("matrix is not square".into()));
        }
        let h = hermitize(&matrix);
        let tr = h.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::InvalidState(format!("trace {tr} not positive")));
        }
        let h = h / c(tr, 0.0);
        let (vals, vecs) = eigh(&h);
        if let Some(floor) = floor {
            if vals.first().is_some_and(|&v| v < -floor) {
                return Err(Error::InvalidState(format!("negative eigenvalue {:e}", vals[0])));
            }
        }
        if vals.first().is_some_and(|&v| v < 0.0) {
            let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
            let sum: f64 = clipped.iter().sum();
            let n = clipped.len();
            let mut scaled = vecs.clone();
            for (col, v) in clipped.iter().enumerate() {
                for r in 0..n {
                    scaled[(r, col)] *= v / sum;
                }
            }
            return Ok(Self { matrix: hermitize(&(scaled * vecs.adjoint())) });
        }
        Ok(Self { matrix: h })
    }

    /// Block-wise variant of [`DensityMatrix::project_psd`] for block-diagonal operators.
    pub fn project_psd_blocks(op: &BlockOperator) -> Result<Self> {
        let mut blocks = Vec::with_capacity(op.blocks().len());
        let mut total = 0.0;
        for b in op.blocks() {
            let h = hermitize(b);
            let (vals, vecs) = eigh(&h);
            let block = if vals.first().is_some_and(|&v| v < 0.0) {
                let mut scaled = vecs.clone();
                for (col, v) in vals.iter().enumerate() {
                    let v = v.max(0.0);
                    for r in 0..scaled.nrows() {
                        scaled[(r, col)] *= v;
                    }
                }
                hermitize(&(scaled * vecs.adjoint()))
            } else {
                h
            };
            total += block.trace().re;
            blocks.push(block);
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidState(format!("trace {total} not positive")));
        }
        for b in blocks.iter_mut() {
            *b /= c(total, 0.0);
        }
        Ok(Self { matrix: BlockOperator::new(op.layout().clone(), blocks)?.to_dense() })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self { matrix: ComplexMatrix::identity(dim, dim) / c(dim as f64, 0.0) }
    }

    pub fn diagonal(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || sum <= 0.0 {
            return Err(Error::InvalidState("diagonal weights must be nonnegative".into()));
        }
        let normed: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        Ok(Self { matrix: diag_real(&normed) })
    }

    pub fn fock(dim: usize, n: usize) -> Self {
        Self { matrix: projector(&basis_vector(dim, n)) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn diagonal_real(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn conjugate(&self, u: &ComplexMatrix) -> Result<Self> {
        Self::from_numerical(u * &self.matrix * u.adjoint())
    }

    /// Top-left block renormalized; fails when the block carries no weight.
    pub fn truncate_renormalized(&self, d: usize) -> Result<Self> {
        Self::from_numerical(truncate_operator(&self.matrix, d)?)
    }

    /// Zero-padding into a larger space.
    pub fn embed(&self, dim: usize) -> Result<Self> {
        if dim < self.dim() {
            return Err(Error::DimensionMismatch("embedding into a smaller space".into()));
        }
        let mut m = ComplexMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (self.dim(), self.dim())).copy_from(&self.matrix);
        Ok(Self { matrix: m })
    }

    pub fn purity(&self) -> f64 {
        trace_product_hermitian(&self.matrix, &self.matrix)
    }
}

/// Uhlmann fidelity `(tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch(format!("fidelity between {} and {}", rho.dim(), sigma.dim())));
    }
    let sr = sqrtm_psd(rho.matrix());
    let inner = hermitize(&(&sr * sigma.matrix() * &sr));
    let (vals, _) = eigh(&inner);
    let root: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((root * root).clamp(0.0, 1.0))
}

/// `||rho - sigma||_1 / 2`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch("trace distance dims".into()));
    }
    Ok(0.5 * trace_norm_hermitian(&(rho.matrix() - sigma.matrix())))
}

/// Partition of basis indices into invariant blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    dim: usize,
    blocks: Vec<Vec<usize>>,
}

impl BlockLayout {
    pub fn new(dim: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; dim];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::InvalidArgument("empty block".into()));
            }
            for &i in b {
                if i >= dim || seen[i] {
                    return Err(Error::InvalidArgument(format!("bad block index {i}")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("blocks do not cover the space".into()));
        }
        Ok(Self { dim, blocks })
    }

    pub fn single(dim: usize) -> Self {
        Self { dim, blocks: vec![(0..dim).collect()] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Number of complex entries stored per block-diagonal operator.
    pub fn block_entries(&self) -> usize {
        self.blocks.iter().map(|b| b.len() * b.len()).sum()
    }

    /// Restriction to indices `< d`. Returns the new layout and, per surviving
    /// block, the source block index and the local positions kept.
    fn truncated(&self, d: usize) -> (BlockLayout, Vec<(usize, Vec<usize>)>) {
        let mut blocks = Vec::new();
        let mut map = Vec::new();
        for (bi, b) in self.blocks.iter().enumerate() {
            let local: Vec<usize> = (0..b.len()).filter(|&p| b[p] < d).collect();
            if !local.is_empty() {
                blocks.push(local.iter().map(|&p| b[p]).collect());
                map.push((bi, local));
            }
        }
        (BlockLayout { dim: d, blocks }, map)
    }
}

/// Block-diagonal operator; entries outside the blocks are zero.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    layout: Arc<BlockLayout>,
    blocks: Vec<ComplexMatrix>,
}

impl BlockOperator {
    pub fn new(layout: Arc<BlockLayout>, blocks: Vec<ComplexMatrix>) -> Result<Self> {
        if blocks.len() != layout.blocks.len()
            || blocks.iter().zip(&layout.blocks).any(|(m, b)| m.nrows() != b.len() || m.ncols() != b.len())
        {
            return Err(Error::DimensionMismatch("block shapes do not match layout".into()));
        }
        Ok(Self { layout, blocks })
    }

    /// Extracts the blocks of a dense operator (off-block entries are dropped).
    pub fn from_dense(layout: Arc<BlockLayout>, m: &ComplexMatrix) -> Self {
        let blocks = layout
            .blocks
            .iter()
            .map(|b| ComplexMatrix::from_fn(b.len(), b.len(), |r, col| m[(b[r], b[col])]))
            .collect();
        Self { layout, blocks }
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn blocks(&self) -> &[ComplexMatrix] {
        &self.blocks
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.layout.dim, self.layout.dim);
        for (blk, idx) in self.blocks.iter().zip(&self.layout.blocks) {
            for (r, &ir) in idx.iter().enumerate() {
                for (col, &ic) in idx.iter().enumerate() {
                    m[(ir, ic)] = blk[(r, col)];
                }
            }
        }
        m
    }

    /// `Re tr(self * other)`; both must share the layout.
    pub fn trace_product(&self, other: &BlockOperator) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| trace_product_hermitian(a, b)).sum()
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.trace().re).sum()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { layout: self.layout.clone(), blocks: self.blocks.iter().map(|b| b * c(s, 0.0)).collect() }
    }

    fn truncated(&self, layout: Arc<BlockLayout>, map: &[(usize, Vec<usize>)]) -> Self {
        let blocks = map
            .iter()
            .map(|(src, local)| {
                let b = &self.blocks[*src];
                ComplexMatrix::from_fn(local.len(), local.len(), |r, col| b[(local[r], local[col])])
            })
            .collect();
        Self { layout, blocks }
    }

    /// Vectorized block entries.
    pub fn vectorize(&self) -> Vec<C64> {
        self.blocks.iter().flat_map(|b| b.as_slice().iter().copied()).collect()
    }
}

/// Ordered positive outcome operators summing to identity.
#[derive(Debug, Clone)]
pub struct Povm {
    layout: Arc<BlockLayout>,
    outcomes: Vec<BlockOperator>,
    labels: Vec<String>,
}

impl Povm {
    /// Validates positivity and completeness.
    pub fn new(layout: Arc<BlockLayout>, outcomes: Vec<BlockOperator>, labels: Vec<String>) -> Result<Self> {
        let povm = Self::new_unchecked(layout, outcomes, labels)?;
        povm.validate(POVM_COMPLETENESS_TOL)?;
        Ok(povm)
    }

    /// Checks shapes and labels only.
    pub fn new_unchecked(layout: Arc<BlockLayout>, outcomes: Vec<BlockOperator>, labels: Vec<String>) -> Result<Self> {
        if outcomes.len() != labels.len() {
            return Err(Error::InvalidPovm("label count differs from outcome count".into()));
        }
        if outcomes.is_empty() {
            return Err(Error::InvalidPovm("no outcomes".into()));
        }
        if outcomes.iter().any(|o| !Arc::ptr_eq(&o.layout, &layout) && *o.layout != *layout) {
            return Err(Error::InvalidPovm("outcome layout differs from POVM layout".into()));
        }
        Ok(Self { layout, outcomes, labels })
    }

    pub fn from_dense(outcomes: Vec<ComplexMatrix>, labels: Vec<String>) -> Result<Self> {
        let dim = outcomes.first().map(|o| o.nrows()).unwrap_or(0);
        if outcomes.iter().any(|o| o.nrows() != dim || o.ncols() != dim) {
            return Err(Error::InvalidPovm("outcomes have different shapes".into()));
        }
        let layout = Arc::new(BlockLayout::single(dim));
        let ops = outcomes.iter().map(|o| BlockOperator::from_dense(layout.clone(), o)).collect();
        Self::new(layout, ops, labels)
    }

    /// Measurement in the basis given by the columns of a unitary.
    pub fn from_basis(u: &ComplexMatrix, label_prefix: &str) -> Result<Self> {
        let d = u.nrows();
        let outcomes = (0..d).map(|k| projector(&u.column(k).into_owned())).collect();
        let labels = (0..d).map(|k| format!("{label_prefix}{k}")).collect();
        Self::from_dense(outcomes, labels)
    }

    pub fn computational_basis(d: usize) -> Self {
        Self::from_basis(&ComplexMatrix::identity(d, d), "e").expect("identity basis is a valid POVM")
    }

    /// Concatenates POVMs on the same layout, weighting each equally.
    pub fn combine_equally(povms: &[Povm]) -> Result<Self> {
        let first = povms.first().ok_or_else(|| Error::InvalidPovm("nothing to combine".into()))?;
        let w = 1.0 / povms.len() as f64;
        let mut outcomes = Vec::new();
        let mut labels = Vec::new();
        for (i, p) in povms.iter().enumerate() {
            if *p.layout != *first.layout {
                return Err(Error::InvalidPovm("cannot combine POVMs on different layouts".into()));
            }
            for (o, l) in p.outcomes.iter().zip(&p.labels) {
                let mut o = o.scaled(w);
                o.layout = first.layout.clone();
                outcomes.push(o);
                labels.push(format!("s{i}:{l}"));
            }
        }
        Self::new_unchecked(first.layout.clone(), outcomes, labels)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn outcomes(&self) -> &[BlockOperator] {
        &self.outcomes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn outcome_dense(&self, j: usize) -> ComplexMatrix {
        self.outcomes[j].to_dense()
    }

    /// Sum of all outcomes, block by block.
    pub fn sum_blocks(&self) -> Vec<ComplexMatrix> {
        let mut acc: Vec<ComplexMatrix> =
            self.layout.blocks.iter().map(|b| ComplexMatrix::zeros(b.len(), b.len())).collect();
        for o in &self.outcomes {
            for (a, b) in acc.iter_mut().zip(&o.blocks) {
                *a += b;
            }
        }
        acc
    }

    /// Largest entrywise deviation of the outcome sum from identity.
    pub fn completeness_error(&self) -> f64 {
        self.sum_blocks()
            .iter()
            .map(|s| max_abs(&(s - ComplexMatrix::identity(s.nrows(), s.ncols()))))
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, completeness_tol: f64) -> Result<()> {
        for (j, o) in self.outcomes.iter().enumerate() {
            for b in &o.blocks {
                if !is_hermitian(b, POVM_POSITIVITY_TOL) {
                    return Err(Error::InvalidPovm(format!("outcome {j} not Hermitian")));
                }
                let (vals, _) = eigh(b);
                if vals.first().is_some_and(|&v| v < -POVM_POSITIVITY_TOL) {
                    return Err(Error::InvalidPovm(format!("outcome {j} has eigenvalue {:e}", vals[0])));
                }
            }
        }
        let err = self.completeness_error();
        if err > completeness_tol {
            return Err(Error::InvalidPovm(format!("outcomes sum to identity only within {err:e}")));
        }
        Ok(())
    }

    /// Outcome-wise restriction to the first `d` basis states.
    pub fn truncate(&self, d: usize) -> Result<Self> {
        if d > self.dim() || d == 0 {
            return Err(Error::DimensionMismatch(format!("cannot truncate dim {} POVM to {d}", self.dim())));
        }
        let (layout, map) = self.layout.truncated(d);
        let layout = Arc::new(layout);
        let outcomes = self.outcomes.iter().map(|o| o.truncated(layout.clone(), &map)).collect();
        Ok(Self { layout, outcomes, labels: self.labels.clone() })
    }

    /// Extracts the blocks of `rho` matching this POVM's layout.
    pub fn state_blocks(&self, rho: &DensityMatrix) -> Result<BlockOperator> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!("state dim {} vs POVM dim {}", rho.dim(), self.dim())));
        }
        Ok(BlockOperator::from_dense(self.layout.clone(), rho.matrix()))
    }

    /// Conjugates every outcome, `U Pi U†`. `U` must respect the block layout.
    pub fn conjugate(&self, u: &ComplexMatrix) -> Result<Self> {
        let ub = BlockOperator::from_dense(self.layout.clone(), u);
        let outcomes = self
            .outcomes
            .iter()
            .map(|o| {
                let blocks =
                    o.blocks.iter().zip(&ub.blocks).map(|(p, ublk)| hermitize(&(ublk * p * ublk.adjoint()))).collect();
                BlockOperator { layout: self.layout.clone(), blocks }
            })
            .collect();
        Ok(Self { layout: self.layout.clone(), outcomes, labels: self.labels.clone() })
    }
}

/// Outcomes `A_a (x) B_b` of two independent POVMs, stored by factor.
///
/// Joint index `(i, k)` maps to `i * dim_b + k`; outcome `(a, b)` has flat
/// index `a * len_b + b`. Probabilities and weighted outcome sums reduce to
/// two matrix products on the realigned state, so the joint operators are
/// never formed.
#[derive(Debug, Clone)]
pub struct ProductPovm {
    a: Povm,
    b: Povm,
    layout: Arc<BlockLayout>,
    /// Vectorized factor outcomes, one column per outcome.
    amat: ComplexMatrix,
    bmat: ComplexMatrix,
    a_offsets: Vec<usize>,
    b_offsets: Vec<usize>,
}

fn realigned_columns(povm: &Povm) -> (ComplexMatrix, Vec<usize>) {
    let mut offsets = Vec::with_capacity(povm.layout.blocks.len());
    let mut acc = 0;
    for b in &povm.layout.blocks {
        offsets.push(acc);
        acc += b.len() * b.len();
    }
    let mut m = ComplexMatrix::zeros(acc, povm.len());
    for (j, o) in povm.outcomes.iter().enumerate() {
        for (g, blk) in o.blocks.iter().enumerate() {
            let n = blk.nrows();
            for r in 0..n {
                for col in 0..n {
                    // Entry (r, col) of the realigned pair holds A[col, r].
                    m[(offsets[g] + r * n + col, j)] = blk[(col, r)];
                }
            }
        }
    }
    (m, offsets)
}

impl ProductPovm {
    pub fn new(a: Povm, b: Povm) -> Result<Self> {
        let db = b.dim();
        let mut blocks = Vec::with_capacity(a.layout.blocks.len() * b.layout.blocks.len());
        for ga in &a.layout.blocks {
            for gb in &b.layout.blocks {
                blocks.push(ga.iter().flat_map(|&i| gb.iter().map(move |&k| i * db + k)).collect());
            }
        }
        let layout = Arc::new(BlockLayout::new(a.dim() * db, blocks)?);
        let (amat, a_offsets) = realigned_columns(&a);
        let (bmat, b_offsets) = realigned_columns(&b);
        Ok(Self { a, b, layout, amat, bmat, a_offsets, b_offsets })
    }

    pub fn factors(&self) -> (&Povm, &Povm) {
        (&self.a, &self.b)
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn len(&self) -> usize {
        self.a.len() * self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, j: usize) -> String {
        let nb = self.b.len();
        format!("{}|{}", self.a.labels[j / nb], self.b.labels[j % nb])
    }

    pub fn truncate_factors(&self, da: usize, db: usize) -> Result<Self> {
        Self::new(self.a.truncate(da)?, self.b.truncate(db)?)
    }

    /// `M[(ga, r, c), (gb, r', c')] = rho[(r r'), (c c')]` within block `(ga, gb)`.
    fn realign(&self, rho: &[ComplexMatrix]) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.amat.nrows(), self.bmat.nrows());
        let nbg = self.b.layout.blocks.len();
        for (idx, blk) in rho.iter().enumerate() {
            let (ga, gb) = (idx / nbg, idx % nbg);
            let na = self.a.layout.blocks[ga].len();
            let nb = self.b.layout.blocks[gb].len();
            for ra in 0..na {
                for ca in 0..na {
                    let ea = self.a_offsets[ga] + ra * na + ca;
                    for rb in 0..nb {
                        for cb in 0..nb {
                            m[(ea, self.b_offsets[gb] + rb * nb + cb)] = blk[(ra * nb + rb, ca * nb + cb)];
                        }
                    }
                }
            }
        }
        m
    }

    /// `Re tr(rho (A_a (x) B_b))` for all outcomes; `rho` in this layout's blocks.
    pub fn probabilities_blocks(&self, rho: &[ComplexMatrix]) -> Vec<f64> {
        let m = self.realign(rho);
        let p = self.amat.transpose() * m * &self.bmat;
        let (ma, mb) = (self.a.len(), self.b.len());
        let mut out = Vec::with_capacity(ma * mb);
        for ia in 0..ma {
            for ib in 0..mb {
                out.push(p[(ia, ib)].re);
            }
        }
        out
    }

    /// `sum w_ab A_a (x) B_b` in this layout's blocks.
    pub fn weighted_sum_blocks(&self, weights: &[f64]) -> Vec<ComplexMatrix> {
        let (ma, mb) = (self.a.len(), self.b.len());
        let w = ComplexMatrix::from_fn(ma, mb, |i, k| c(weights[i * mb + k], 0.0));
        let rt = &self.amat * w * self.bmat.transpose();
        let nbg = self.b.layout.blocks.len();
        let mut out = Vec::with_capacity(self.layout.blocks.len());
        for ga in 0..self.a.layout.blocks.len() {
            for gb in 0..nbg {
                let na = self.a.layout.blocks[ga].len();
                let nb = self.b.layout.blocks[gb].len();
                out.push(ComplexMatrix::from_fn(na * nb, na * nb, |r, col| {
                    let (ra, rb, ca, cb) = (r / nb, r % nb, col / nb, col % nb);
                    rt[(self.a_offsets[ga] + ca * na + ra, self.b_offsets[gb] + cb * nb + rb)]
                }));
            }
        }
        out
    }

    pub fn state_blocks(&self, rho: &DensityMatrix) -> Result<BlockOperator> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!("state dim {} vs POVM dim {}", rho.dim(), self.dim())));
        }
        Ok(BlockOperator::from_dense(self.layout.clone(), rho.matrix()))
    }

    pub fn probabilities(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        let blocks = self.state_blocks(rho)?;
        Ok(self.probabilities_blocks(blocks.blocks()).into_iter().map(|p| p.clamp(0.0, 1.0)).collect())
    }

    /// Outcomes with a vanishing factor.
    pub fn zero_outcomes(&self, tol: f64) -> Vec<bool> {
        let za: Vec<bool> = self.a.outcomes.iter().map(|o| o.frobenius_norm_sq() <= tol).collect();
        let zb: Vec<bool> = self.b.outcomes.iter().map(|o| o.frobenius_norm_sq() <= tol).collect();
        za.iter().flat_map(|&x| zb.iter().map(move |&y| x || y)).collect()
    }
}

/// Raw `Re tr(rho Pi_j)` for block-form `rho`, unclipped.
pub fn born_probabilities_raw(rho: &BlockOperator, povm: &Povm) -> Vec<f64> {
    povm.outcomes.iter().map(|o| o.trace_product(rho)).collect()
}

/// `p_j = Re tr(rho Pi_j)` clipped to `[0, 1]`.
pub fn born_probabilities(rho: &DensityMatrix, povm: &Povm) -> Result<Vec<f64>> {
    let blocks = povm.state_blocks(rho)?;
    Ok(born_probabilities_raw(&blocks, povm).into_iter().map(|p| p.clamp(0.0, 1.0)).collect())
}

/// Haar-random unitary from the QR decomposition of a complex Ginibre matrix.
pub fn haar_unitary(d: usize, rng: &mut SeededRng) -> ComplexMatrix {
    let z = ComplexMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = z.qr();
    let q = qr.q();
    let r = qr.r();
    let mut u = q;
    for col in 0..d {
        let rd = r[(col, col)];
        let phase = if rd.norm() > 0.0 { rd / c(rd.norm(), 0.0) } else { c(1.0, 0.0) };
        for row in 0..d {
            u[(row, col)] *= phase;
        }
    }
    u
}

/// `d` rank-one projectors onto the columns of a Haar-random unitary.
pub fn random_von_neumann_basis(d: usize, seed: u64) -> Result<Povm> {
    if d < 2 {
        return Err(Error::InvalidArgument("basis dimension must be at least 2".into()));
    }
    let mut rng = SeededRng::from_seed(seed);
    Povm::from_basis(&haar_unitary(d, &mut rng), "b")
}

/// `count` Haar-random bases drawn from one stream, weighted equally.
pub fn random_von_neumann_bases(d: usize, count: usize, seed: u64) -> Result<Povm> {
    if d < 2 || count == 0 {
        return Err(Error::InvalidArgument("need d >= 2 and at least one basis".into()));
    }
    let mut rng = SeededRng::from_seed(seed);
    let bases = (0..count).map(|_| Povm::from_basis(&haar_unitary(d, &mut rng), "b")).collect::<Result<Vec<_>>>()?;
    Povm::combine_equally(&bases)
}

/// Numerical rank of the outcome set: eigenvalues of the Gram matrix
/// `G_ij = tr(Pi_i Pi_j)` above `tol` times the largest one.
pub fn rank_of_outcome_set(povm: &Povm, tol: f64) -> usize {
    // Singular values of the stacked vectorized outcomes, wide side as columns.
    let width = povm.layout.block_entries();
    let m = povm.len();
    let vecs: Vec<Vec<C64>> = povm.outcomes.iter().map(|o| o.vectorize()).collect();
    let stacked = if m <= width {
        ComplexMatrix::from_fn(width, m, |r, col| vecs[col][r])
    } else {
        ComplexMatrix::from_fn(m, width, |r, col| vecs[r][col])
    };
    let sv = stacked.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_state(d: usize, seed: u64) -> DensityMatrix {
        let mut rng = SeededRng::from_seed(seed);
        let g = ComplexMatrix::from_fn(d, d, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        DensityMatrix::from_numerical(&g * g.adjoint()).unwrap()
    }

    #[test]
    fn tensor_identity_and_projectors() {
        let i2 = ComplexMatrix::identity(2, 2);
        let i3 = ComplexMatrix::identity(3, 3);
        let k = tensor_product(&i2, &i3);
        assert_eq!(k.shape(), (6, 6));
        assert!(max_abs(&(k - ComplexMatrix::identity(6, 6))) == 0.0);
        let p = tensor_product(&diag_real(&[1.0, 0.0]), &diag_real(&[0.0, 1.0]));
        assert!(max_abs(&(p - diag_real(&[0.0, 1.0, 0.0, 0.0]))) == 0.0);
    }

    #[test]
    fn partial_trace_product_and_bell() {
        let a = rand_state(2, 1);
        let b = rand_state(3, 2);
        let ab = tensor_product(a.matrix(), b.matrix());
        let ra = partial_trace(&ab, &[2, 3], &[0]).unwrap();
        let rb = partial_trace(&ab, &[2, 3], &[1]).unwrap();
        assert!(max_abs(&(ra - a.matrix())) < 1e-14);
        assert!(max_abs(&(rb - b.matrix())) < 1e-14);

        let mut phi = ComplexVector::zeros(4);
        phi[0] = c(FRAC_1_SQRT2, 0.0);
        phi[3] = c(FRAC_1_SQRT2, 0.0);
        let red = partial_trace(&projector(&phi), &[2, 2], &[0]).unwrap();
        assert!(max_abs(&(red - ComplexMatrix::identity(2, 2) * c(0.5, 0.0))) < 1e-15);
        assert!(partial_trace(&projector(&phi), &[2, 3], &[0]).is_err());
    }

    const FRAC_1_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn partial_trace_order_independent() {
        let abc = rand_state(12, 3);
        let dims = [2, 3, 2];
        let ab = partial_trace(abc.matrix(), &dims, &[0, 1]).unwrap();
        let a1 = partial_trace(&ab, &[2, 3], &[0]).unwrap();
        let ac = partial_trace(abc.matrix(), &dims, &[0, 2]).unwrap();
        let a2 = partial_trace(&ac, &[2, 2], &[0]).unwrap();
        assert!(max_abs(&(a1 - a2)) < 1e-12);
        assert!((ab.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation() {
        let i10 = ComplexMatrix::identity(10, 10);
        assert_eq!(truncate_operator(&i10, 4).unwrap(), ComplexMatrix::identity(4, 4));
        let diag: Vec<f64> = (1..=10).map(|v| v as f64 / 55.0).collect();
        let t = truncate_operator(&diag_real(&diag), 3).unwrap();
        assert!(max_abs(&(t - diag_real(&[1.0 / 55.0, 2.0 / 55.0, 3.0 / 55.0]))) < 1e-16);
        assert!(truncate_operator(&i10, 11).is_err());
        let povm = random_von_neumann_basis(10, 5).unwrap().truncate(4).unwrap();
        assert!(povm.completeness_error() < 1e-12);
    }

    #[test]
    fn born_rule_cases() {
        let povm = random_von_neumann_basis(5, 9).unwrap();
        let p = born_probabilities(&DensityMatrix::maximally_mixed(5), &povm).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-12));
        let p0 = born_probabilities(&DensityMatrix::fock(4, 0), &Povm::computational_basis(4)).unwrap();
        assert_eq!(p0, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(born_probabilities(&DensityMatrix::fock(3, 0), &povm).is_err());
    }

    #[test]
    fn fidelity_cases() {
        let r = rand_state(4, 11);
        assert!((fidelity(&r, &r).unwrap() - 1.0).abs() < 1e-10);
        let f = fidelity(&DensityMatrix::fock(9, 2), &DensityMatrix::fock(9, 4)).unwrap();
        assert!(f.abs() < 1e-14);
        let s = rand_state(4, 12);
        let u = haar_unitary(4, &mut SeededRng::from_seed(4));
        let f1 = fidelity(&r, &s).unwrap();
        let f2 = fidelity(&s, &r).unwrap();
        let f3 = fidelity(&r.conjugate(&u).unwrap(), &s.conjugate(&u).unwrap()).unwrap();
        assert!((f1 - f2).abs() < 1e-10 && (f1 - f3).abs() < 1e-10);
    }

    #[test]
    fn haar_basis_properties() {
        let a = random_von_neumann_basis(6, 42).unwrap();
        let b = random_von_neumann_basis(6, 42).unwrap();
        assert!(a.completeness_error() < 1e-10);
        for j in 0..a.len() {
            let p = a.outcome_dense(j);
            assert!(max_abs(&(&p * &p - &p)) < 1e-10);
            assert_eq!(p, b.outcome_dense(j));
        }
        assert!(random_von_neumann_basis(1, 0).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(diag_real(&[0.5, 0.6])).is_err());
        assert!(DensityMatrix::new(diag_real(&[1.5, -0.5])).is_err());
        let tiny_neg = diag_real(&[1.0 + 5e-11, -5e-11]);
        let fixed = DensityMatrix::from_numerical(tiny_neg).unwrap();
        assert!(fixed.diagonal_real().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rank_counts() {
        // d^2 independent outcomes: d+1 mutually unbiased-ish random bases are IC.
        let povm = random_von_neumann_bases(3, 4, 7).unwrap();
        assert_eq!(rank_of_outcome_set(&povm, 1e-10), 9);
        let doubled = Povm::combine_equally(&[povm.clone(), povm.clone()]).unwrap();
        assert_eq!(rank_of_outcome_set(&doubled, 1e-10), 9);
    }
}
