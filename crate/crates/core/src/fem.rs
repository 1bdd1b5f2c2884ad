//! Exponentially fitted P1 finite element kernel.
//!
//! Element matrices are written in edge form: for a tetrahedron `K` and a
//! local edge `(i, j)`, `w_ij = -|K| grad(l_i).grad(l_j)`. The Galerkin
//! stiffness is `sum_ij w_ij (e_i - e_j)(e_i - e_j)^T`, and the
//! Scharfetter-Gummel variant replaces the symmetric edge coupling by
//! Bernoulli-weighted upwinding. Both are assembled into a CSR
//! [`SparseSystem`] whose sparsity follows the mesh connectivity.

use std::collections::BTreeMap;
use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::SparseColMat;
use thiserror::Error;

use crate::mesh::{barycentric_gradients, dot, Point, TET_EDGES};

/// 4x4 element matrix indexed by local vertex number.
pub type LocalMatrix = [[f64; 4]; 4];

/// Above this many unknowns the iterative solver is used.
pub const DIRECT_SOLVER_LIMIT: usize = 200_000;
pub const DEFAULT_LINEAR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum FemError {
    #[error("degenerate tetrahedron")]
    Degenerate,
    #[error("negative transfer coefficient {0}")]
    NegativeTransfer(f64),
    #[error("dof {dof} out of range for a system of size {size}")]
    DofOutOfRange { dof: usize, size: usize },
    #[error("entry ({0}, {1}) is outside the sparsity pattern")]
    OutsidePattern(usize, usize),
    #[error("linear solve failed: {reason} (relative residual {residual:e})")]
    Solve { reason: String, residual: f64 },
}

/// `B(x) = x / (e^x - 1)`, evaluated without cancellation or overflow.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else if x > 700.0 {
        x * (-x).exp()
    } else {
        x / x.exp_m1()
    }
}

/// Galerkin stiffness `c * int grad(l_i).grad(l_j)` of one tetrahedron.
pub fn local_diffusion(points: &[Point; 4], coefficient: f64) -> Result<LocalMatrix, FemError> {
    let g = barycentric_gradients(points).ok_or(FemError::Degenerate)?;
    let vol = crate::mesh::tet_signed_volume(points).abs();
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = coefficient * vol * dot(g[i], g[j]);
        }
    }
    Ok(m)
}

/// Galerkin stiffness from the element edge weights (ordered as [`TET_EDGES`]).
pub fn local_diffusion_from_weights(weights: &[f64; 6], coefficient: f64) -> LocalMatrix {
    let mut m = [[0.0; 4]; 4];
    for (k, &(a, b)) in TET_EDGES.iter().enumerate() {
        let w = coefficient * weights[k];
        m[a][a] += w;
        m[b][b] += w;
        m[a][b] -= w;
        m[b][a] -= w;
    }
    m
}

/// Edge-averaged Scharfetter-Gummel element matrix.
///
/// `peclets[k]` is the dimensionless drift along local edge `k` from its
/// first to its second vertex, so that the discrete flux leaving vertex
/// `a` toward `b` is `w D (B(-u) U_a - B(u) U_b)`. Columns sum to zero.
pub fn local_sg_advection_diffusion(weights: &[f64; 6], peclets: &[f64; 6], diffusivities: &[f64; 6]) -> LocalMatrix {
    let mut m = [[0.0; 4]; 4];
    for (k, &(a, b)) in TET_EDGES.iter().enumerate() {
        let wd = weights[k] * diffusivities[k];
        let (bp, bm) = (bernoulli(peclets[k]), bernoulli(-peclets[k]));
        m[a][a] += wd * bm;
        m[a][b] -= wd * bp;
        m[b][b] += wd * bp;
        m[b][a] -= wd * bm;
    }
    m
}

/// Lumped mass: each vertex gets `coefficient * volume / 4`.
pub fn local_lumped_mass(volume: f64, coefficient: f64) -> [f64; 4] {
    [0.25 * coefficient * volume; 4]
}

/// Compressed sparse row pattern with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern coupling every pair of dofs that share an element, plus the diagonal.
    pub fn from_elements<I>(n: usize, elements: I) -> Self
    where
        I: IntoIterator<Item = [usize; 4]>,
    {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for e in elements {
            for &a in &e {
                for &b in &e {
                    rows[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            cols.extend_from_slice(&r);
            row_ptr.push(cols.len());
        }
        SparsityPattern { n, row_ptr, cols }
    }

    pub fn identity(n: usize) -> Self {
        SparsityPattern {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn col(&self, k: usize) -> usize {
        self.cols[k]
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row(i);
        self.cols[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }
}

/// A boundary triangle expressed in system dofs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceRef {
    pub nodes: [usize; 3],
    pub area: f64,
}

/// Assembled matrix `K`, right-hand side `F` and Dirichlet bookkeeping.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
    rhs: Vec<f64>,
    dirichlet: BTreeMap<usize, f64>,
}

/// Sign structure of an assembled matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MMatrixReport {
    pub diag_positive: bool,
    pub offdiag_nonpositive: bool,
    /// Column-wise weak diagonal dominance (the conservative form of the
    /// scheme makes column sums, not row sums, vanish).
    pub weakly_diagonally_dominant: bool,
}

impl MMatrixReport {
    pub fn all(&self) -> bool {
        self.diag_positive && self.offdiag_nonpositive && self.weakly_diagonally_dominant
    }
}

impl SparseSystem {
    pub fn new(pattern: Arc<SparsityPattern>) -> Self {
        let n = pattern.size();
        SparseSystem {
            values: vec![0.0; pattern.nnz()],
            rhs: vec![0.0; n],
            dirichlet: BTreeMap::new(),
            pattern,
        }
    }

    /// Identity matrix with zero right-hand side.
    pub fn identity(n: usize) -> Self {
        let mut s = SparseSystem::new(Arc::new(SparsityPattern::identity(n)));
        s.values.iter_mut().for_each(|v| *v = 1.0);
        s
    }

    pub fn size(&self) -> usize {
        self.pattern.size()
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn rhs_mut(&mut self) -> &mut [f64] {
        &mut self.rhs
    }

    pub fn dirichlet(&self) -> &BTreeMap<usize, f64> {
        &self.dirichlet
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<(), FemError> {
        let k = self.pattern.position(i, j).ok_or(FemError::OutsidePattern(i, j))?;
        self.values[k] += v;
        Ok(())
    }

    pub fn add_rhs(&mut self, i: usize, v: f64) {
        self.rhs[i] += v;
    }

    /// Scatters an element matrix into the rows/columns `dofs`.
    pub fn add_local(&mut self, dofs: [usize; 4], m: &LocalMatrix) {
        for a in 0..4 {
            let r = self.pattern.row(dofs[a]);
            let cols = &self.pattern.cols[r.clone()];
            for b in 0..4 {
                let k = r.start + cols.binary_search(&dofs[b]).expect("element dofs lie in the pattern");
                self.values[k] += m[a][b];
            }
        }
    }

    pub fn add_diagonal(&mut self, dofs: [usize; 4], d: &[f64; 4]) {
        for a in 0..4 {
            let k = self.pattern.position(dofs[a], dofs[a]).expect("diagonal");
            self.values[k] += d[a];
        }
    }

    /// Adds `gamma (U - external)` outflow on the faces, lumped per vertex.
    pub fn apply_robin(&mut self, faces: &[FaceRef], gamma: f64, external: f64) -> Result<(), FemError> {
        if gamma < 0.0 || gamma.is_nan() {
            return Err(FemError::NegativeTransfer(gamma));
        }
        for f in faces {
            let share = gamma * f.area / 3.0;
            for &v in &f.nodes {
                self.check(v)?;
                let k = self.pattern.position(v, v).expect("diagonal");
                self.values[k] += share;
                self.rhs[v] += share * external;
            }
        }
        Ok(())
    }

    /// Adds a prescribed inflow flux density on the faces, lumped per vertex.
    pub fn apply_neumann(&mut self, faces: &[FaceRef], inflow: f64) -> Result<(), FemError> {
        for f in faces {
            for &v in &f.nodes {
                self.check(v)?;
                self.rhs[v] += inflow * f.area / 3.0;
            }
        }
        Ok(())
    }

    /// Symmetric elimination of prescribed values; call after every other
    /// contribution has been assembled.
    pub fn apply_dirichlet(&mut self, nodes: &[usize], values: &[f64]) -> Result<(), FemError> {
        assert_eq!(nodes.len(), values.len());
        for (&d, &g) in nodes.iter().zip(values) {
            self.check(d)?;
            let row = self.pattern.row(d);
            for k in row.clone() {
                let j = self.pattern.cols[k];
                if j == d {
                    continue;
                }
                // Entry (j, d) exists by symmetry of the pattern.
                let kt = self.pattern.position(j, d).expect("symmetric pattern");
                self.rhs[j] -= self.values[kt] * g;
                self.values[kt] = 0.0;
                self.values[k] = 0.0;
            }
            let kd = self.pattern.position(d, d).expect("diagonal");
            self.values[kd] = 1.0;
            self.rhs[d] = g;
            self.dirichlet.insert(d, g);
        }
        Ok(())
    }

    fn check(&self, dof: usize) -> Result<(), FemError> {
        if dof >= self.size() {
            Err(FemError::DofOutOfRange { dof, size: self.size() })
        } else {
            Ok(())
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.size())
            .map(|i| {
                self.pattern
                    .row(i)
                    .map(|k| self.values[k] * x[self.pattern.cols[k]])
                    .sum()
            })
            .collect()
    }

    /// `||K x - F||_2 / ||F||_2` (absolute residual when `F = 0`).
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let r = self.matvec(x);
        let num: f64 = r
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = norm2(&self.rhs);
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }

    /// Normwise backward error `||K x - F||_inf / (||K||_inf ||x||_inf + ||F||_inf)`.
    pub fn backward_error(&self, x: &[f64]) -> f64 {
        let r = self.matvec(x);
        let res = r.iter().zip(&self.rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let k_norm = (0..self.size())
            .map(|i| self.pattern.row(i).map(|k| self.values[k].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let x_norm = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let f_norm = self.rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let den = k_norm * x_norm + f_norm;
        if den > 0.0 {
            res / den
        } else {
            res
        }
    }

    /// Componentwise backward error
    /// `max_i |F - K x|_i / (sum_j |K_ij| |x_j| + |F_i|)`.
    pub fn componentwise_backward_error(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.size() {
            let mut kx = 0.0;
            let mut mag = self.rhs[i].abs();
            for k in self.pattern.row(i) {
                let v = self.values[k] * x[self.pattern.col(k)];
                kx += v;
                mag += v.abs();
            }
            let r = (self.rhs[i] - kx).abs();
            let e = if mag > 0.0 { r / mag } else { r };
            worst = worst.max(e);
        }
        worst
    }

    /// Inspects the sign structure. Off-diagonal entries within `1e-13` of
    /// the row's diagonal magnitude count as zero.
    pub fn is_m_matrix(&self) -> MMatrixReport {
        let n = self.size();
        let mut diag = vec![0.0; n];
        let mut col_off = vec![0.0; n];
        let mut offdiag_nonpositive = true;
        for i in 0..n {
            for k in self.pattern.row(i) {
                if self.pattern.cols[k] == i {
                    diag[i] = self.values[k];
                }
            }
        }
        for i in 0..n {
            for k in self.pattern.row(i) {
                let j = self.pattern.cols[k];
                if j == i {
                    continue;
                }
                let v = self.values[k];
                if v > 1e-13 * diag[i].abs() {
                    offdiag_nonpositive = false;
                }
                col_off[j] += v.abs();
            }
        }
        let diag_positive = diag.iter().all(|&d| d > 0.0);
        let weakly_diagonally_dominant = (0..n).all(|j| diag[j] >= col_off[j] * (1.0 - 1e-12));
        MMatrixReport {
            diag_positive,
            offdiag_nonpositive,
            weakly_diagonally_dominant,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.values.len());
        for i in 0..self.size() {
            for k in self.pattern.row(i) {
                if self.values[k] != 0.0 {
                    t.push((i, self.pattern.cols[k], self.values[k]));
                }
            }
        }
        t
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        let mut d = vec![vec![0.0; n]; n];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves `K U = F` to normwise backward error `tol`.
///
/// The backward error coincides with the relative residual `||KU - F|| / ||F||`
/// whenever `||K|| ||U||` is comparable to `||F||`; for stiff systems it is
/// the smallest residual measure that floating-point evaluation of `KU` can
/// certify. Uses sparse LU with iterative refinement up to
/// [`DIRECT_SOLVER_LIMIT`] unknowns and Jacobi-preconditioned BiCGSTAB above.
pub fn solve_linear(system: &SparseSystem, tol: f64) -> Result<Vec<f64>, FemError> {
    if system.size() == 0 {
        return Ok(Vec::new());
    }
    if system.size() <= DIRECT_SOLVER_LIMIT {
        solve_direct(system, tol)
    } else {
        solve_bicgstab(system, tol, 20 * system.size().max(1000))
    }
}

fn solve_direct(system: &SparseSystem, tol: f64) -> Result<Vec<f64>, FemError> {
    let n = system.size();
    let a =
        SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &system.triplets()).map_err(|e| FemError::Solve {
            reason: format!("matrix construction: {e:?}"),
            residual: f64::INFINITY,
        })?;
    let lu = a.as_ref().sp_lu().map_err(|e| FemError::Solve {
        reason: format!("LU factorization: {e:?}"),
        residual: f64::INFINITY,
    })?;
    let col = |v: &[f64]| faer::Mat::<f64>::from_fn(n, 1, |i, _| v[i]);
    let sol = lu.solve(&col(system.rhs()));
    let mut x: Vec<f64> = (0..n).map(|i| sol.read(i, 0)).collect();
    let mut res = system.backward_error(&x);
    for _ in 0..4 {
        if res <= tol || !res.is_finite() {
            break;
        }
        let kx = system.matvec(&x);
        let r: Vec<f64> = system.rhs().iter().zip(&kx).map(|(f, k)| f - k).collect();
        let d = lu.solve(&col(&r));
        let candidate: Vec<f64> = (0..n).map(|i| x[i] + d.read(i, 0)).collect();
        let cres = system.backward_error(&candidate);
        if cres >= res {
            break;
        }
        x = candidate;
        res = cres;
    }
    if res <= tol && x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(FemError::Solve {
            reason: "residual above tolerance after refinement".into(),
            residual: res,
        })
    }
}

/// Jacobi-preconditioned BiCGSTAB.
pub fn solve_bicgstab(system: &SparseSystem, tol: f64, max_iter: usize) -> Result<Vec<f64>, FemError> {
    let n = system.size();
    let b = system.rhs();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let dinv: Vec<f64> = (0..n)
        .map(|i| {
            let d = system.get(i, i);
            if d != 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let prec = |v: &[f64]| -> Vec<f64> { v.iter().zip(&dinv).map(|(a, d)| a * d).collect() };
    let dotp = |a: &[f64], c: &[f64]| -> f64 { a.iter().zip(c).map(|(x, y)| x * y).sum() };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut res = 1.0;
    for _ in 0..max_iter {
        let rho_new = dotp(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = prec(&p);
        v = system.matvec(&y);
        let den = dotp(&r_hat, &v);
        if den == 0.0 {
            break;
        }
        alpha = rho / den;
        let s: Vec<f64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        if norm2(&s) / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            res = system.backward_error(&x);
            if res <= tol {
                return Ok(x);
            }
            r = system.rhs().iter().zip(system.matvec(&x)).map(|(f, k)| f - k).collect();
            continue;
        }
        let z = prec(&s);
        let t = system.matvec(&z);
        let tt = dotp(&t, &t);
        omega = if tt > 0.0 { dotp(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r) / bnorm;
        if res <= tol {
            res = system.backward_error(&x);
            if res <= tol {
                return Ok(x);
            }
        }
    }
    Err(FemError::Solve {
        reason: "BiCGSTAB did not converge".into(),
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, compute_edge_geometry};
    use proptest::prelude::*;

    fn reference_tet() -> [Point; 4] {
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn bernoulli_values() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1.0) - 0.5819767068693265).abs() < 1e-15);
        assert!((bernoulli(-1.0) - 1.5819767068693265).abs() < 1e-15);
        assert!(bernoulli(710.0) > 0.0 && bernoulli(710.0) < 1e-300);
        assert_eq!(bernoulli(1e6), 0.0);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn reference_tet_stiffness() {
        // int grad(l_i).grad(l_j) over the unit reference tetrahedron.
        let expect = [
            [0.5, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0],
            [-1.0 / 6.0, 1.0 / 6.0, 0.0, 0.0],
            [-1.0 / 6.0, 0.0, 1.0 / 6.0, 0.0],
            [-1.0 / 6.0, 0.0, 0.0, 1.0 / 6.0],
        ];
        let m = local_diffusion(&reference_tet(), 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((m[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
        let z = local_diffusion(&reference_tet(), 0.0).unwrap();
        assert!(z.iter().flatten().all(|&v| v == 0.0));
        let flat = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        assert_eq!(local_diffusion(&flat, 1.0), Err(FemError::Degenerate));
    }

    #[test]
    fn stiffness_scales_linearly_with_size() {
        let p = [[0.1, 0.2, 0.0], [1.3, 0.0, 0.1], [0.2, 0.9, 0.3], [0.4, 0.3, 1.2]];
        let (c, s) = (2.5, 3.0);
        let base = local_diffusion(&p, 1.0).unwrap();
        let scaled = local_diffusion(&p.map(|q| q.map(|x| s * x)), c).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((scaled[i][j] - c * s * base[i][j]).abs() < 1e-13 * c * s);
            }
        }
    }

    #[test]
    fn lumped_mass_example() {
        let m = local_lumped_mass(1e-24, 3.98e6 * 880.0);
        for v in m {
            assert!((v - 8.756e-16).abs() < 1e-28);
        }
    }

    #[test]
    fn sg_single_edge_reduces_to_classical_flux() {
        // Only edge (0,1) carries weight: w = A/h of a 1D bar.
        let mut w = [0.0; 6];
        w[0] = 2.0;
        let u = 1.7;
        let d = 0.3;
        let m = local_sg_advection_diffusion(&w, &[u; 6], &[d; 6]);
        let (ui, uj) = (5.0, 2.0);
        let flux = m[0][0] * ui + m[0][1] * uj;
        let expect = 2.0 * d * (bernoulli(-u) * ui - bernoulli(u) * uj);
        assert!((flux - expect).abs() < 1e-14);
        // Large drift: downwind coupling vanishes.
        let m = local_sg_advection_diffusion(&w, &[800.0; 6], &[d; 6]);
        assert!(m[0][1].abs() < 1e-300);
        assert!(m[1][0] < -1.0);
    }

    #[test]
    fn robin_neumann_and_dirichlet() {
        let mesh = build_box_mesh([1.0; 3], [1, 1, 1], &[]).unwrap();
        let pat = Arc::new(SparsityPattern::from_elements(
            8,
            mesh.tets().iter().map(|t| t.vertices),
        ));
        let mut s = SparseSystem::new(pat.clone());
        let face = FaceRef {
            nodes: [0, 1, 2],
            area: 0.6,
        };
        s.apply_robin(&[face], 0.0, 300.0).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        s.apply_robin(&[face], 2.0, 300.0).unwrap();
        for v in [0, 1, 2] {
            assert!((s.get(v, v) - 0.4).abs() < 1e-15);
            assert!((s.rhs()[v] - 120.0).abs() < 1e-12);
        }
        assert_eq!(s.apply_robin(&[face], -1.0, 0.0), Err(FemError::NegativeTransfer(-1.0)));
        let before = s.rhs().to_vec();
        s.apply_neumann(&[face], 0.0).unwrap();
        assert_eq!(s.rhs(), &before[..]);
        s.apply_neumann(&[face], 5.0).unwrap();
        let gained: f64 = s.rhs().iter().zip(&before).map(|(a, b)| a - b).sum();
        assert!((gained - 3.0).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_reproduces_linear_data() {
        let mesh = build_box_mesh([1.0, 2.0, 3.0], [3, 3, 4], &[]).unwrap();
        let geo = compute_edge_geometry(&mesh).unwrap();
        let n = mesh.num_vertices();
        let pat = Arc::new(SparsityPattern::from_elements(
            n,
            mesh.tets().iter().map(|t| t.vertices),
        ));
        let mut s = SparseSystem::new(pat);
        for (t, tet) in mesh.tets().iter().enumerate() {
            s.add_local(tet.vertices, &local_diffusion_from_weights(&geo.tet_weights[t], 1.0));
        }
        let all = mesh.face_set_nodes(&(0..mesh.faces().len()).collect::<Vec<_>>());
        let vals: Vec<f64> = all
            .iter()
            .map(|&v| {
                let p = mesh.vertices()[v];
                0.5 + p[0] - 2.0 * p[1] + 3.0 * p[2]
            })
            .collect();
        s.apply_dirichlet(&all, &vals).unwrap();
        let x = solve_linear(&s, 1e-12).unwrap();
        for (v, p) in mesh.vertices().iter().enumerate() {
            assert!((x[v] - (0.5 + p[0] - 2.0 * p[1] + 3.0 * p[2])).abs() < 1e-12);
        }
    }

    #[test]
    fn m_matrix_report() {
        let id = SparseSystem::identity(5);
        assert!(id.is_m_matrix().all());
        assert_eq!(solve_linear(&id, 1e-12).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn bicgstab_solves_random_sparse_spd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 100;
        let mut elems = Vec::new();
        for i in 0..n - 3 {
            elems.push([i, i + 1, i + 2, i + 3]);
        }
        let pat = Arc::new(SparsityPattern::from_elements(n, elems.clone()));
        let mut s = SparseSystem::new(pat);
        for e in elems {
            let w: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.1..1.0));
            s.add_local(e, &local_diffusion_from_weights(&w, 1.0));
        }
        for i in 0..n {
            s.add(i, i, 0.5).unwrap();
            s.add_rhs(i, rng.gen_range(-1.0..1.0));
        }
        let x = solve_bicgstab(&s, 1e-12, 10_000).unwrap();
        assert!(s.relative_residual(&x) <= 1e-10);
        let y = solve_linear(&s, 1e-12).unwrap();
        assert!(s.relative_residual(&y) <= 1e-10);
    }

    proptest! {
        #[test]
        fn bernoulli_identity(x in -700.0f64..700.0) {
            let lhs = bernoulli(-x) - bernoulli(x);
            prop_assert!((lhs - x).abs() <= 1e-14 * bernoulli(-x).max(bernoulli(x)));
        }

        #[test]
        fn sg_columns_sum_to_zero(
            w in prop::array::uniform6(0.0f64..2.0),
            u in prop::array::uniform6(-50.0f64..50.0),
            d in prop::array::uniform6(1e-3f64..10.0),
        ) {
            let m = local_sg_advection_diffusion(&w, &u, &d);
            let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            for j in 0..4 {
                let s: f64 = (0..4).map(|i| m[i][j]).sum();
                prop_assert!(s.abs() <= 1e-13 * scale);
            }
            let z = local_sg_advection_diffusion(&w, &[0.0; 6], &d);
            for i in 0..4 {
                let s: f64 = z[i].iter().sum();
                prop_assert!(s.abs() <= 1e-13 * scale.max(1e-300));
            }
        }
    }
}
