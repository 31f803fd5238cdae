//! Banded LU factorization with partial pivoting.
//!
//! Solves the block-banded linear systems that arise when computing
//! piecewise-polynomial coefficients from waypoints and segment times.
//! Storage follows the LAPACK general-band layout: column `j` keeps rows
//! `j - ku - kl ..= j + kl`, with `kl` extra super-diagonals reserved for
//! fill-in produced by row swaps.

use nalgebra::Vector3;

/// A square banded matrix factored as `P * L * U`.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    /// Column-major band storage, `ldab` entries per column.
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    factored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BandedError {
    #[error("zero pivot at column {0}: matrix is singular")]
    Singular(usize),
    #[error("entry ({0}, {1}) outside band (kl={2}, ku={3})")]
    OutOfBand(usize, usize, usize, usize),
}

impl BandedLu {
    /// Empty banded matrix of size `n` with lower/upper bandwidths `kl`/`ku`.
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
            ipiv: (0..n).collect(),
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // row offset kl + ku + i - j within column j
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    /// Add `v` to entry `(i, j)`. Must lie within the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<(), BandedError> {
        debug_assert!(!self.factored, "matrix already factored");
        if i >= self.n || j >= self.n || i + self.ku < j || j + self.kl < i {
            return Err(BandedError::OutOfBand(i, j, self.kl, self.ku));
        }
        let at = self.idx(i, j);
        self.ab[at] += v;
        Ok(())
    }

    /// Factor in place with partial pivoting.
    pub fn factorize(&mut self) -> Result<(), BandedError> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // pivot search down the column
            let mut jp = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for i in 1..=km {
                let v = self.ab[self.idx(j + i, j)].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            self.ipiv[j] = j + jp;
            if best == 0.0 {
                return Err(BandedError::Singular(j));
            }
            let jmax = (j + kv).min(n - 1);
            if jp != 0 {
                for jj in j..=jmax {
                    let a = self.idx(j, jj);
                    let b = self.idx(j + jp, jj);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.idx(j, j)];
            for i in 1..=km {
                let at = self.idx(j + i, j);
                self.ab[at] /= pivot;
            }
            for jj in (j + 1)..=jmax {
                let f = self.ab[self.idx(j, jj)];
                if f != 0.0 {
                    for i in 1..=km {
                        let li = self.idx(j + i, j);
                        let ui = self.idx(j + i, jj);
                        self.ab[ui] -= self.ab[li] * f;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve `A x = b` in place for a block right-hand side of 3-vectors.
    pub fn solve_in_place(&self, rhs: &mut [Vector3<f64>]) {
        assert!(self.factored, "factorize before solving");
        assert_eq!(rhs.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        // forward elimination with row swaps
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                rhs.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = rhs[j];
            for i in 1..=km {
                let l = self.ab[self.idx(j + i, j)];
                rhs[j + i] -= bj * l;
            }
        }
        // back substitution
        for j in (0..n).rev() {
            let x = rhs[j] / self.ab[self.idx(j, j)];
            rhs[j] = x;
            let imin = j.saturating_sub(self.kl + self.ku);
            for i in imin..j {
                let u = self.ab[self.idx(i, j)];
                rhs[i] -= x * u;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, kl: usize, ku: usize, rng: &mut ChaCha8Rng) -> (BandedLu, DMatrix<f64>) {
        let mut band = BandedLu::new(n, kl, ku);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i + ku >= j && j + kl >= i {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    let v = if i == j { v + 3.0 } else { v };
                    band.add(i, j, v).unwrap();
                    dense[(i, j)] = v;
                }
            }
        }
        (band, dense)
    }

    #[test]
    fn matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(6usize, 2usize, 1usize), (18, 8, 7), (60, 8, 7), (30, 3, 5)] {
            let (mut band, dense) = random_banded(n, kl, ku, &mut rng);
            band.factorize().unwrap();
            let mut rhs: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let rhs_dense = DMatrix::from_fn(n, 3, |i, c| rhs[i][c]);
            band.solve_in_place(&mut rhs);
            let x_dense = dense.lu().solve(&rhs_dense).unwrap();
            for i in 0..n {
                for c in 0..3 {
                    assert!(
                        (rhs[i][c] - x_dense[(i, c)]).abs() < 1e-9,
                        "mismatch at ({i},{c}): {} vs {}",
                        rhs[i][c],
                        x_dense[(i, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_out_of_band() {
        let mut band = BandedLu::new(5, 1, 1);
        assert!(band.add(0, 3, 1.0).is_err());
        assert!(band.add(4, 0, 1.0).is_err());
        assert!(band.add(2, 3, 1.0).is_ok());
    }

    #[test]
    fn detects_singularity() {
        let mut band = BandedLu::new(3, 1, 1);
        // column 1 entirely zero
        band.add(0, 0, 1.0).unwrap();
        band.add(2, 2, 1.0).unwrap();
        assert!(matches!(band.factorize(), Err(BandedError::Singular(_))));
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // exact zero on the first diagonal entry forces a row swap
        let mut band = BandedLu::new(4, 2, 1);
        let entries = [
            (0usize, 0usize, 0.0),
            (0, 1, 2.0),
            (1, 0, 1.0),
            (1, 1, 1.0),
            (1, 2, -1.0),
            (2, 1, 4.0),
            (2, 2, 0.5),
            (2, 3, 1.0),
            (3, 2, 2.0),
            (3, 3, 3.0),
        ];
        let mut dense = DMatrix::zeros(4, 4);
        for &(i, j, v) in &entries {
            band.add(i, j, v).unwrap();
            dense[(i, j)] = v;
        }
        band.factorize().unwrap();
        let mut rhs = vec![
            Vector3::new(1.0, 0.0, 2.0),
            Vector3::new(0.0, 1.0, -1.0),
            Vector3::new(2.0, 2.0, 0.0),
            Vector3::new(-1.0, 0.5, 1.0),
        ];
        let rhs_dense = DMatrix::from_fn(4, 3, |i, c| rhs[i][c]);
        band.solve_in_place(&mut rhs);
        let x = dense.lu().solve(&rhs_dense).unwrap();
        for i in 0..4 {
            for c in 0..3 {
                assert!((rhs[i][c] - x[(i, c)]).abs() < 1e-12);
            }
        }
    }
}
