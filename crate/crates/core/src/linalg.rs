//! Small dense and banded linear algebra: symmetric eigendecomposition,
//! truncated pseudoinverse, banded LU and periodic-banded solves.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Relative singular-value cutoff of the pseudoinverse.
pub const PINV_RTOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
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

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Sub-block `[r0, r0+nr) × [c0, c0+nc)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Matrix {
        let mut out = Matrix::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigen-decomposition `A = V diag(λ) Vᵀ` of a symmetric matrix by cyclic
/// Jacobi rotations. Columns of `vectors` are the eigenvectors.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn new(a: &Matrix) -> Self {
        assert_eq!(a.rows(), a.cols(), "eigen-decomposition needs a square matrix");
        let n = a.rows();
        let mut m = a.clone();
        // Symmetrize exactly; callers pass matrices symmetric up to rounding.
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = s;
                m[(j, i)] = s;
            }
        }
        let mut v = Matrix::identity(n);
        let scale = m.max_abs();
        if scale > 0.0 {
            for _sweep in 0..64 {
                let mut off = 0.0;
                for i in 0..n {
                    for j in 0..i {
                        off += m[(i, j)] * m[(i, j)];
                    }
                }
                if libm::sqrt(off) <= 1e-17 * scale * n as f64 {
                    break;
                }
                for p in 0..n {
                    for q in p + 1..n {
                        let apq = m[(p, q)];
                        if apq == 0.0 {
                            continue;
                        }
                        let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                        let t = theta.signum()
                            / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                        let t = if theta == 0.0 { 1.0 } else { t };
                        let c = 1.0 / libm::sqrt(t * t + 1.0);
                        let s = t * c;
                        for k in 0..n {
                            let mkp = m[(k, p)];
                            let mkq = m[(k, q)];
                            m[(k, p)] = c * mkp - s * mkq;
                            m[(k, q)] = s * mkp + c * mkq;
                        }
                        for k in 0..n {
                            let mpk = m[(p, k)];
                            let mqk = m[(q, k)];
                            m[(p, k)] = c * mpk - s * mqk;
                            m[(q, k)] = s * mpk + c * mqk;
                        }
                        for k in 0..n {
                            let vkp = v[(k, p)];
                            let vkq = v[(k, q)];
                            v[(k, p)] = c * vkp - s * vkq;
                            v[(k, q)] = s * vkp + c * vkq;
                        }
                    }
                }
            }
        }
        SymmetricEigen {
            values: (0..n).map(|i| m[(i, i)]).collect(),
            vectors: v,
        }
    }
}

/// Truncated pseudoinverse of a symmetric matrix.
///
/// Singular values (absolute eigenvalues) below `PINV_RTOL · σ_max` are
/// treated as zero.
#[derive(Debug, Clone)]
pub struct SymmetricPinv {
    eigen: SymmetricEigen,
    cutoff: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
}

impl SymmetricPinv {
    pub fn new(a: &Matrix) -> Self {
        let eigen = SymmetricEigen::new(a);
        let sigmas = eigen.values.iter().map(|v| v.abs());
        let sigma_max = sigmas.clone().fold(0.0, f64::max);
        let sigma_min = sigmas.fold(f64::INFINITY, f64::min);
        SymmetricPinv {
            cutoff: PINV_RTOL * sigma_max,
            eigen,
            sigma_max,
            sigma_min,
        }
    }

    /// `σ_max / σ_min`; infinite for a singular matrix.
    pub fn condition(&self) -> f64 {
        if self.sigma_min > 0.0 {
            self.sigma_max / self.sigma_min
        } else {
            f64::INFINITY
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.sigma_max == 0.0 || self.sigma_min < self.cutoff
    }

    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        let v = &self.eigen.vectors;
        let n = v.rows();
        assert_eq!(b.len(), n);
        let mut x = vec![0.0; n];
        for (k, &lambda) in self.eigen.values.iter().enumerate() {
            if lambda.abs() <= self.cutoff || lambda == 0.0 {
                continue;
            }
            let proj: f64 = (0..n).map(|i| v[(i, k)] * b[i]).sum::<f64>() / lambda;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += v[(i, k)] * proj;
            }
        }
        x
    }

    pub fn to_matrix(&self) -> Matrix {
        let n = self.eigen.vectors.rows();
        let mut out = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            for (i, v) in self.apply(&e).into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Gaussian elimination with partial pivoting. `None` if a pivot vanishes.
pub fn solve_dense(mut a: Matrix, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let scale = a.max_abs();
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|r| (r, a[(r, k)].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(pmax > 1e-300 && pmax > 1e-15 * scale) {
            return None;
        }
        if piv != k {
            for c in 0..n {
                let t = a[(k, c)];
                a[(k, c)] = a[(piv, c)];
                a[(piv, c)] = t;
            }
            b.swap(k, piv);
        }
        for r in k + 1..n {
            let l = a[(r, k)] / a[(k, k)];
            if l == 0.0 {
                continue;
            }
            for c in k..n {
                a[(r, c)] -= l * a[(k, c)];
            }
            b[r] -= l * b[k];
        }
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|c| a[(i, c)] * b[c]).sum();
        b[i] = (b[i] - s) / a[(i, i)];
    }
    Some(b)
}

/// LU factorization of a band matrix with `kl` sub- and `ku`
/// super-diagonals, with partial pivoting. Row `i` stores columns
/// `[i − kl, i + ku + kl]`, leaving room for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    /// Smallest and largest absolute pivot.
    pub pivot_range: (f64, f64),
}

impl BandLu {
    /// Factorizes `a` given as a closure over in-band entries.
    pub fn factor(n: usize, kl: usize, ku: usize, entry: impl Fn(usize, usize) -> f64) -> Option<Self> {
        let width = 2 * kl + ku + 1;
        let mut lu = BandLu {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
            pivot_range: (f64::INFINITY, 0.0),
        };
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            for j in lo..=hi {
                lu.set(i, j, entry(i, j));
            }
        }
        let reach = kl + ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let (piv, pmax) = (k..=last)
                .map(|r| (r, lu.get(r, k).abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pmax > 1e-300) {
                return None;
            }
            lu.pivots[k] = piv;
            let cend = (k + reach).min(n - 1);
            if piv != k {
                for c in k..=cend {
                    let t = lu.get(k, c);
                    lu.set(k, c, lu.get(piv, c));
                    lu.set(piv, c, t);
                }
            }
            let pivot = lu.get(k, k);
            lu.pivot_range.0 = lu.pivot_range.0.min(pivot.abs());
            lu.pivot_range.1 = lu.pivot_range.1.max(pivot.abs());
            for r in k + 1..=last {
                let l = lu.get(r, k) / pivot;
                lu.set(r, k, l);
                if l == 0.0 {
                    continue;
                }
                for c in k + 1..=cend {
                    let v = lu.get(r, c) - l * lu.get(k, c);
                    lu.set(r, c, v);
                }
            }
        }
        Some(lu)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j + self.kl - i < self.width);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.slot(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let piv = self.pivots[k];
            if piv != k {
                x.swap(k, piv);
            }
            let xk = x[k];
            for r in k + 1..=(k + self.kl).min(n - 1) {
                x[r] -= self.get(r, k) * xk;
            }
        }
        let reach = self.kl + self.ku;
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in i + 1..=(i + reach).min(n - 1) {
                s -= self.get(i, c) * x[c];
            }
            x[i] = s / self.get(i, i);
        }
        x
    }
}

/// Square matrix whose nonzeros lie within cyclic distance `half_width` of
/// the diagonal (periodic boundary). Entry `(i, j)` is stored at offset
/// `j − i` wrapped into `[−half_width, half_width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicBanded {
    n: usize,
    half_width: usize,
    data: Vec<f64>,
}

impl CyclicBanded {
    /// Requires `n > 2 · half_width` so that every offset is unambiguous.
    pub fn zeros(n: usize, half_width: usize) -> Self {
        assert!(n > 2 * half_width, "cyclic band too wide for n = {n}");
        CyclicBanded {
            n,
            half_width,
            data: vec![0.0; n * (2 * half_width + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    fn offset(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.n as isize;
        let p = self.half_width as isize;
        let mut d = (j as isize - i as isize).rem_euclid(n);
        if d > n / 2 {
            d -= n;
        }
        (d.abs() <= p).then_some((d + p) as usize)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.offset(i, j)
            .map_or(0.0, |o| self.data[i * (2 * self.half_width + 1) + o])
    }

    /// Adds `v` at `(i, j)`; returns `false` if the entry is outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) -> bool {
        match self.offset(i, j) {
            Some(o) => {
                self.data[i * (2 * self.half_width + 1) + o] += v;
                true
            }
            None => false,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let p = self.half_width as isize;
        (0..n)
            .map(|i| {
                (-p..=p)
                    .map(|d| {
                        let j = (i as isize + d).rem_euclid(n as isize) as usize;
                        self.data[i * (2 * self.half_width + 1) + (d + p) as usize] * x[j]
                    })
                    .sum()
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Solves `A x = b` in `O(n · w²)`: a band LU of the non-wrapping part,
    /// with the wrap-around corners folded back in by the Woodbury identity.
    pub fn solve(&self, b: &[f64]) -> Option<CyclicSolve> {
        let n = self.n;
        let p = self.half_width;
        assert_eq!(b.len(), n);
        let in_band = |i: usize, j: usize| i.abs_diff(j) <= p;
        let lu = BandLu::factor(n, p, p, |i, j| self.get(i, j))?;
        // Rows with wrap-around entries, and those entries.
        let wrap_rows: Vec<usize> = (0..n).filter(|&i| i < p || i + p >= n).collect();
        let corners: Vec<Vec<(usize, f64)>> = wrap_rows
            .iter()
            .map(|&r| {
                (0..=2 * p)
                    .filter_map(|o| {
                        let j = (r as isize + o as isize - p as isize).rem_euclid(n as isize) as usize;
                        (!in_band(r, j)).then(|| (j, self.get(r, j)))
                    })
                    .collect()
            })
            .collect();
        let y = lu.solve(b);
        let k = wrap_rows.len();
        let z: Vec<Vec<f64>> = wrap_rows
            .iter()
            .map(|&r| {
                let mut e = vec![0.0; n];
                e[r] = 1.0;
                lu.solve(&e)
            })
            .collect();
        let mut cap = Matrix::identity(k);
        let mut vy = vec![0.0; k];
        for t in 0..k {
            for &(j, c) in &corners[t] {
                vy[t] += c * y[j];
                for s in 0..k {
                    cap[(t, s)] += c * z[s][j];
                }
            }
        }
        let w = solve_dense(cap, vy)?;
        let mut x = y;
        for (s, ws) in w.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[s]) {
                *xi -= ws * zi;
            }
        }
        Some(CyclicSolve {
            x,
            pivot_range: lu.pivot_range,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CyclicSolve {
    pub x: Vec<f64>,
    pub pivot_range: (f64, f64),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_symmetric(n: usize, rng: &mut SeededRng) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.uniform(-1.0, 1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let mut rng = SeededRng::new(11);
        for n in 1..7 {
            let a = random_symmetric(n, &mut rng);
            let e = SymmetricEigen::new(&a);
            for i in 0..n {
                for j in 0..n {
                    let r: f64 = (0..n)
                        .map(|k| e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)])
                        .sum();
                    assert!((r - a[(i, j)]).abs() < 1e-12, "n={n} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn pinv_inverts_full_rank() {
        let mut rng = SeededRng::new(5);
        let mut a = random_symmetric(4, &mut rng);
        for i in 0..4 {
            a[(i, i)] += 4.0;
        }
        let p = SymmetricPinv::new(&a);
        assert!(!p.is_degenerate());
        assert!(p.condition() >= 1.0);
        let b = [1.0, -2.0, 0.5, 3.0];
        let x = p.apply(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn pinv_of_zero_and_rank_one() {
        let p = SymmetricPinv::new(&Matrix::zeros(2, 2));
        assert!(p.is_degenerate());
        assert_eq!(p.condition(), f64::INFINITY);
        assert_eq!(p.apply(&[1.0, 1.0]), vec![0.0, 0.0]);

        // [[1,1],[1,1]] has pseudoinverse [[1,1],[1,1]]/4.
        let a = Matrix::from_rows(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        let p = SymmetricPinv::new(&a);
        assert!(p.is_degenerate());
        let m = p.to_matrix();
        for v in m.as_slice() {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_solve_detects_singular() {
        let a = Matrix::from_rows(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(solve_dense(a, vec![1.0, 1.0]).is_none());
    }

    #[test]
    fn band_lu_matches_dense() {
        let mut rng = SeededRng::new(3);
        let n = 12;
        let (kl, ku) = (2, 1);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                a[(i, j)] = rng.uniform(-1.0, 1.0);
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let lu = BandLu::factor(n, kl, ku, |i, j| a[(i, j)]).unwrap();
        let x = lu.solve(&b);
        let x_ref = solve_dense(a, b).unwrap();
        for (u, v) in x.iter().zip(&x_ref) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn cyclic_solve_matches_dense() {
        let mut rng = SeededRng::new(9);
        for &(n, p) in &[(5, 2), (8, 2), (9, 1), (33, 2), (16, 3)] {
            let mut a = CyclicBanded::zeros(n, p);
            for i in 0..n {
                for d in 0..=2 * p {
                    let j = (i + n + d - p) % n;
                    a.add(i, j, rng.uniform(-1.0, 1.0));
                }
                a.add(i, i, 3.0);
            }
            let b: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let x = a.solve(&b).unwrap().x;
            let x_ref = solve_dense(a.to_dense(), b.clone()).unwrap();
            for (u, v) in x.iter().zip(&x_ref) {
                assert!((u - v).abs() < 1e-10, "n={n} p={p}: {u} vs {v}");
            }
            let ax = a.matvec(&x);
            for (u, v) in ax.iter().zip(&b) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }
}
