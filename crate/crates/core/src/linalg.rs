//! Dense and diagonal kernels: matrix exponential, φ-functions, LU solves and
//! spectral radius.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest φ index supported (HOH of order 7 needs φ₈).
pub const MAX_PHI_ORDER: usize = 8;

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `out = self * v`.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks(self.cols)) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks(self.cols)
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of the `rows x cols` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        let mut b = Self::zeros(rows, cols);
        for i in 0..rows {
            b.data[i * cols..(i + 1) * cols]
                .copy_from_slice(&self.data[(r0 + i) * self.cols + c0..][..cols]);
        }
        b
    }

    fn set_block(&mut self, r0: usize, c0: usize, src: &DenseMatrix) {
        for i in 0..src.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + src.cols].copy_from_slice(src.row(i));
        }
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    fn require_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.into()))
        }
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;

    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            self.cols, rhs.rows,
            "cannot multiply {}x{} by {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in orow.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

macro_rules! elementwise {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for &DenseMatrix {
            type Output = DenseMatrix;

            fn $method(self, rhs: &DenseMatrix) -> DenseMatrix {
                assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch");
                DenseMatrix {
                    rows: self.rows,
                    cols: self.cols,
                    data: self.data.iter().zip(&rhs.data).map(|(a, b)| a $op b).collect(),
                }
            }
        }
    };
}

elementwise!(Add, add, +);
elementwise!(Sub, sub, -);

impl Neg for &DenseMatrix {
    type Output = DenseMatrix;

    fn neg(self) -> DenseMatrix {
        self.scale(-1.0)
    }
}

/// Eigenvalues of a diagonal state matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagonalSpectrum(Vec<f64>);

impl DiagonalSpectrum {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("empty diagonal spectrum".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("diagonal spectrum".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_diag(&self.0)
    }
}

/// Index `k` of φ_k(z) = Σ_{j≥0} z^j / (j+k)!.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PhiOrder(usize);

impl PhiOrder {
    pub fn new(k: usize) -> Result<Self> {
        if k > MAX_PHI_ORDER {
            return Err(Error::InvalidArgument(format!(
                "phi order {k} exceeds {MAX_PHI_ORDER}"
            )));
        }
        Ok(Self(k))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

// Degree-13 diagonal Padé coefficients for exp.
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

/// Norm target for the scaled argument of the rational approximant.
const SCALED_NORM: f64 = 0.5;

/// e^M by scaling and squaring around a degree-13 Padé approximant.
pub fn mat_exp(m: &DenseMatrix) -> Result<DenseMatrix> {
    m.require_square()?;
    m.require_finite("matrix exponential argument")?;
    let n = m.rows;
    let norm = m.norm_one();
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let a = m.scale(2f64.powi(-squarings));

    let id = DenseMatrix::identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_inner = &(&(&a6.scale(b[13]) + &a4.scale(b[11])) + &a2.scale(b[9]));
    let u_outer = &(&(&(&(&a6 * u_inner) + &a6.scale(b[7])) + &a4.scale(b[5])) + &a2.scale(b[3]))
        + &id.scale(b[1]);
    let u = &a * &u_outer;
    let v_inner = &(&(&a6.scale(b[12]) + &a4.scale(b[10])) + &a2.scale(b[8]));
    let v = &(&(&(&(&a6 * v_inner) + &a6.scale(b[6])) + &a4.scale(b[4])) + &a2.scale(b[2]))
        + &id.scale(b[0]);

    let mut r = linear_solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    r.require_finite("matrix exponential result")?;
    Ok(r)
}

/// All of φ_0(M), …, φ_k(M) from one exponential of the block matrix
///
/// ```text
/// [ M I 0 … 0 ]
/// [ 0 0 I … 0 ]
/// [ …       I ]
/// [ 0 0 0 … 0 ]
/// ```
///
/// whose first block row is `[e^M, φ_1(M), …, φ_k(M)]`. No inverse of `M` is
/// formed, so singular arguments are fine.
pub fn phi_all(k: PhiOrder, m: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    m.require_square()?;
    m.require_finite("phi argument")?;
    let k = k.get();
    if k == 0 {
        return Ok(vec![mat_exp(m)?]);
    }
    let n = m.rows;
    let size = (k + 1) * n;
    let mut aug = DenseMatrix::zeros(size, size);
    aug.set_block(0, 0, m);
    let id = DenseMatrix::identity(n);
    for j in 0..k {
        aug.set_block(j * n, (j + 1) * n, &id);
    }
    let e = mat_exp(&aug)?;
    Ok((0..=k).map(|j| e.block(0, j * n, n, n)).collect())
}

/// φ_k(M) = Σ_{j≥0} M^j / (j+k)!.
pub fn phi(k: PhiOrder, m: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(phi_all(k, m)?.pop().expect("phi_all returns k+1 blocks"))
}

/// Scalar φ_0(z), …, φ_k(z).
///
/// For |z| < 1 the top order is summed as a power series and the lower ones
/// follow from φ_j = 1/j! + z φ_{j+1}; otherwise the upward recurrence
/// φ_{j+1} = (φ_j − 1/j!) / z starts from e^z. Both directions shrink
/// absolute errors in their regime.
pub fn scalar_phis(k: usize, z: f64) -> [f64; MAX_PHI_ORDER + 2] {
    debug_assert!(k <= MAX_PHI_ORDER + 1);
    let mut out = [0.0; MAX_PHI_ORDER + 2];
    out[0] = z.exp();
    if k <= 1 {
        out[1] = if z == 0.0 { 1.0 } else { z.exp_m1() / z };
        return out;
    }
    if z.abs() < 1.0 {
        let mut term = INV_FACTORIAL[k];
        let mut sum = term;
        for j in 1..40 {
            term *= z / (j + k) as f64;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        out[k] = sum;
        for j in (0..k).rev() {
            out[j] = INV_FACTORIAL[j] + z * out[j + 1];
        }
        // the series for φ_0 is exp itself; keep it exactly consistent
        out[0] = z.exp();
    } else {
        out[1] = z.exp_m1() / z;
        for j in 1..k {
            out[j + 1] = (out[j] - INV_FACTORIAL[j]) / z;
        }
    }
    out
}

const INV_FACTORIAL: [f64; MAX_PHI_ORDER + 2] = {
    let mut t = [1.0; MAX_PHI_ORDER + 2];
    let mut i = 1;
    while i < t.len() {
        t[i] = t[i - 1] / i as f64;
        i += 1;
    }
    t
};

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Reusable partially pivoted LU factorization.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

const PIVOT_TOLERANCE: f64 = 1e-13;

impl LuFactors {
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        m.require_square()?;
        m.require_finite("linear system matrix")?;
        let n = m.rows;
        let threshold = PIVOT_TOLERANCE * m.norm_inf();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (p, pivot) = (col..n)
                .map(|r| (r, lu[(r, col)].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= threshold || pivot == 0.0 {
                return Err(Error::Singular { column: col, pivot });
            }
            if p != col {
                for j in 0..n {
                    lu.data.swap(col * n + j, p * n + j);
                }
                perm.swap(col, p);
            }
            let d = lu[(col, col)];
            for r in col + 1..n {
                let f = lu[(r, col)] / d;
                lu[(r, col)] = f;
                if f != 0.0 {
                    for j in col + 1..n {
                        lu.data[r * n + j] -= f * lu.data[col * n + j];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.lu.rows;
        if rhs.rows != n {
            return Err(Error::Shape(format!(
                "right-hand side has {} rows, system has {n}",
                rhs.rows
            )));
        }
        let cols = rhs.cols;
        let mut x = DenseMatrix::zeros(n, cols);
        for (i, &p) in self.perm.iter().enumerate() {
            x.data[i * cols..(i + 1) * cols].copy_from_slice(rhs.row(p));
        }
        for c in 0..cols {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        x.require_finite("linear solve result")?;
        Ok(x)
    }
}

/// X with M·X = RHS.
pub fn linear_solve(m: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    LuFactors::new(m)?.solve(rhs)
}

const SCHUR_SWEEPS: usize = 10_000;

/// Largest eigenvalue magnitude (Hessenberg reduction + shifted QR).
pub fn spectral_radius(m: &DenseMatrix) -> Result<f64> {
    m.require_square()?;
    m.require_finite("spectral radius argument")?;
    let n = m.rows;
    let mat = nalgebra::DMatrix::from_row_slice(n, n, &m.data);
    let schur = nalgebra::linalg::Schur::try_new(mat, f64::EPSILON, SCHUR_SWEEPS)
        .ok_or(Error::NoConvergence {
            sweeps: SCHUR_SWEEPS,
        })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn taylor_exp(m: &DenseMatrix, terms: usize) -> DenseMatrix {
        let n = m.rows();
        let mut sum = DenseMatrix::identity(n);
        let mut term = DenseMatrix::identity(n);
        for j in 1..terms {
            term = (&term * m).scale(1.0 / j as f64);
            sum = &sum + &term;
        }
        sum
    }

    fn truncated_phi(k: usize, m: &DenseMatrix, terms: usize) -> DenseMatrix {
        let n = m.rows();
        let mut power = DenseMatrix::identity(n);
        let mut sum = DenseMatrix::zeros(n, n);
        for j in 0..terms {
            sum = &sum + &power.scale(1.0 / factorial(j + k));
            power = &power * m;
        }
        sum
    }

    fn sample(seed: u64, n: usize, scale: f64) -> DenseMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        DenseMatrix::new(n, n, data).unwrap()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&DenseMatrix::zeros(2, 2)).unwrap();
        assert_eq!(e, DenseMatrix::identity(2));
    }

    #[test]
    fn exp_scalar_and_nilpotent() {
        let e = mat_exp(&DenseMatrix::from_diag(&[-1.0])).unwrap();
        assert_abs_diff_eq!(e[(0, 0)], 0.367879441, epsilon = 1e-9);
        let nil = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let e = mat_exp(&nil).unwrap();
        let want = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(e.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn exp_matches_long_taylor_series_for_moderate_norm() {
        for seed in 0..10 {
            let m = sample(seed, 5, 0.3);
            let want = taylor_exp(&m, 40);
            let got = mat_exp(&m).unwrap();
            assert!(got.max_abs_diff(&want) <= 1e-14 * want.max_abs());
        }
    }

    #[test]
    fn exp_relative_accuracy_at_norm_fifty() {
        // diag(-25, 25) plus a rotation block: closed forms available
        let m = DenseMatrix::from_rows(&[
            vec![-20.0, 0.0, 0.0],
            vec![0.0, 3.0, -4.0],
            vec![0.0, 4.0, 3.0],
        ])
        .unwrap();
        let e = mat_exp(&m).unwrap();
        let (c, s) = (4f64.cos(), 4f64.sin());
        let e3 = 3f64.exp();
        assert!((e[(0, 0)] - (-20f64).exp()).abs() <= 1e-12 * (-20f64).exp());
        assert!((e[(1, 1)] - e3 * c).abs() <= 1e-12 * e3);
        assert!((e[(1, 2)] + e3 * s).abs() <= 1e-12 * e3);
        assert!((e[(2, 1)] - e3 * s).abs() <= 1e-12 * e3);
    }

    #[test]
    fn exp_rejects_bad_input() {
        let rect = DenseMatrix::zeros(2, 3);
        assert!(matches!(mat_exp(&rect), Err(Error::NotSquare { .. })));
        assert!(DenseMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn phi_examples() {
        let one = phi(PhiOrder::new(1).unwrap(), &DenseMatrix::zeros(1, 1)).unwrap();
        assert_abs_diff_eq!(one[(0, 0)], 1.0, epsilon = 1e-15);
        let m = DenseMatrix::from_diag(&[-1.0]);
        let p1 = phi(PhiOrder::new(1).unwrap(), &m).unwrap();
        let p2 = phi(PhiOrder::new(2).unwrap(), &m).unwrap();
        assert_abs_diff_eq!(p1[(0, 0)], 0.632120559, epsilon = 1e-9);
        assert_abs_diff_eq!(p2[(0, 0)], 0.367879441, epsilon = 1e-9);
        assert!(PhiOrder::new(9).is_err());
    }

    #[test]
    fn phi_handles_singular_argument() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let got = phi(PhiOrder::new(3).unwrap(), &m).unwrap();
        let want = truncated_phi(3, &m, 60);
        assert!(got.max_abs_diff(&want) < 1e-13);
    }

    #[test]
    fn phi_matches_truncated_series_and_recurrence() {
        for seed in 0..8 {
            let n = 1 + (seed as usize % 5);
            let m = sample(seed, n, 0.9 / n as f64);
            let all = phi_all(PhiOrder::new(MAX_PHI_ORDER).unwrap(), &m).unwrap();
            assert!(all[0].max_abs_diff(&mat_exp(&m).unwrap()) < 1e-12);
            for k in 0..=MAX_PHI_ORDER {
                let want = truncated_phi(k, &m, 60);
                assert!(all[k].max_abs_diff(&want) <= 1e-10 * want.max_abs());
            }
            for k in 0..MAX_PHI_ORDER {
                let lhs = &(&m * &all[k + 1]) + &DenseMatrix::identity(n).scale(1.0 / factorial(k));
                assert!(lhs.max_abs_diff(&all[k]) <= 1e-10 * all[k].max_abs());
            }
        }
    }

    #[test]
    fn exp_inverse_pair() {
        for seed in 20..30 {
            let m = sample(seed, 4, 2.0);
            assert!(m.norm_one() <= 10.0);
            let p = &mat_exp(&m).unwrap() * &mat_exp(&-&m).unwrap();
            assert!(p.max_abs_diff(&DenseMatrix::identity(4)) < 1e-10);
        }
    }

    #[test]
    fn scalar_phis_agree_with_dense() {
        for &z in &[-30.0, -7.5, -1.5, -1.0, -0.999, -0.5, -1e-9, 0.0, 0.3, 1.0, 2.5] {
            let s = scalar_phis(MAX_PHI_ORDER, z);
            let d = phi_all(
                PhiOrder::new(MAX_PHI_ORDER).unwrap(),
                &DenseMatrix::from_diag(&[z]),
            )
            .unwrap();
            for k in 0..=MAX_PHI_ORDER {
                assert!(
                    (s[k] - d[k][(0, 0)]).abs() < 1e-13 * d[k][(0, 0)].abs().max(1.0),
                    "z={z} k={k}: {} vs {}",
                    s[k],
                    d[k][(0, 0)]
                );
            }
        }
    }

    #[test]
    fn solve_examples() {
        let rhs = DenseMatrix::from_rows(&[vec![3.0, -1.0], vec![2.0, 7.0]]).unwrap();
        assert_eq!(linear_solve(&DenseMatrix::identity(2), &rhs).unwrap(), rhs);
        let m = DenseMatrix::from_diag(&[2.0, 4.0]);
        let x = linear_solve(&m, &DenseMatrix::column(&[1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(x.as_slice(), &[0.5, 0.25]);
        let s = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            linear_solve(&s, &DenseMatrix::column(&[1.0, 1.0]).unwrap()),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn solve_residual_on_ill_conditioned_system() {
        // Hilbert-like scaling keeps the condition number well below 1e8
        let n = 6;
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = 1.0 / (i + j + 1) as f64;
            }
        }
        let rhs = DenseMatrix::column(&[1.0, -2.0, 3.0, 0.5, 0.25, -1.0]).unwrap();
        let x = linear_solve(&m, &rhs).unwrap();
        let r = &(&m * &x) - &rhs;
        assert!(r.norm_inf() <= 1e-10 * rhs.norm_inf());
    }

    #[test]
    fn spectral_radius_examples() {
        let d = DenseMatrix::from_diag(&[0.3, -0.9]);
        assert_abs_diff_eq!(spectral_radius(&d).unwrap(), 0.9, epsilon = 1e-12);
        let rot = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(spectral_radius(&rot).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(spectral_radius(&DenseMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_radius_of_companion_matrix() {
        // roots of (x-2)(x+3)(x-0.5)
        let c = DenseMatrix::from_rows(&[
            vec![-0.5, 6.5, -3.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_abs_diff_eq!(spectral_radius(&c).unwrap(), 3.0, epsilon = 1e-8);
    }

    proptest::proptest! {
        #[test]
        fn exp_inverse_property(seed in 0u64..1000, n in 1usize..6, scale in 0.01f64..2.0) {
            let m = sample(seed, n, scale);
            proptest::prop_assume!(m.norm_one() <= 10.0);
            let p = &mat_exp(&m).unwrap() * &mat_exp(&-&m).unwrap();
            proptest::prop_assert!(p.max_abs_diff(&DenseMatrix::identity(n)) < 1e-10);
        }
    }
}
