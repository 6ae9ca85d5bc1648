//! Least squares by Householder QR with column pivoting.
//!
//! Rank-deficient systems get the minimum-norm solution through a complete
//! orthogonal decomposition: after `A·P = Q·[R11 R12; 0 0]`, the leading `r`
//! rows `[R11 R12]` are themselves factored as `(Q₂·R₂)ᵀ`.

use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

/// Householder factorization of an `m × n` column-major working copy.
struct Factored<T> {
    m: usize,
    n: usize,
    /// Column-major; `R` in the upper triangle after factoring.
    a: Vec<T>,
    /// Reflector `k` acts on rows `k..m`.
    reflectors: Vec<(Vec<T>, T)>,
    perm: Vec<usize>,
}

impl<T: Scalar> Factored<T> {
    fn at(&self, i: usize, j: usize) -> T {
        self.a[j * self.m + i]
    }

    fn factor(m: usize, n: usize, a: Vec<T>, pivot: bool) -> Self {
        let mut f = Factored {
            m,
            n,
            a,
            reflectors: Vec::with_capacity(m.min(n)),
            perm: (0..n).collect(),
        };
        for k in 0..m.min(n) {
            if pivot {
                let tail_norm = |f: &Factored<T>, j: usize| (k..m).fold(T::zero(), |s, i| s + f.at(i, j) * f.at(i, j));
                let mut best = k;
                let mut best_norm = tail_norm(&f, k);
                for j in k + 1..n {
                    let v = tail_norm(&f, j);
                    if v > best_norm {
                        best = j;
                        best_norm = v;
                    }
                }
                if best != k {
                    for i in 0..m {
                        f.a.swap(k * m + i, best * m + i);
                    }
                    f.perm.swap(k, best);
                }
            }
            let col = &f.a[k * m + k..(k + 1) * m];
            let norm = col.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
            if norm == T::zero() {
                f.reflectors.push((vec![T::zero(); m - k], T::zero()));
                continue;
            }
            let alpha = if col[0] > T::zero() { -norm } else { norm };
            let mut v = col.to_vec();
            v[0] = v[0] - alpha;
            let beta = T::of(2.0) / v.iter().fold(T::zero(), |s, &x| s + x * x);
            for j in k + 1..n {
                let c = &mut f.a[j * m + k..(j + 1) * m];
                let s = beta * v.iter().zip(c.iter()).fold(T::zero(), |acc, (&vi, &ci)| acc + vi * ci);
                for (ci, &vi) in c.iter_mut().zip(&v) {
                    *ci = *ci - s * vi;
                }
            }
            f.a[k * m + k] = alpha;
            for i in k + 1..m {
                f.a[k * m + i] = T::zero();
            }
            f.reflectors.push((v, beta));
        }
        f
    }

    /// Applies `Qᵀ` to a length-`m` vector.
    fn apply_qt(&self, b: &mut [T]) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate() {
            apply_reflector(v, *beta, &mut b[k..]);
        }
    }

    /// Applies `Q` to a length-`m` vector.
    fn apply_q(&self, b: &mut [T]) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            apply_reflector(v, *beta, &mut b[k..]);
        }
    }

    /// Number of diagonal entries of `R` above `max(m, n)·ε·|R₀₀|`.
    fn rank(&self) -> usize {
        let diag = self.m.min(self.n);
        if diag == 0 {
            return 0;
        }
        let lead = self.at(0, 0).abs();
        let tol = T::of(self.m.max(self.n) as f64) * T::epsilon() * lead;
        (0..diag).take_while(|&k| self.at(k, k).abs() > tol && self.at(k, k) != T::zero()).count()
    }
}

fn apply_reflector<T: Scalar>(v: &[T], beta: T, b: &mut [T]) {
    let s = beta * v.iter().zip(b.iter()).fold(T::zero(), |acc, (&vi, &bi)| acc + vi * bi);
    for (bi, &vi) in b.iter_mut().zip(v) {
        *bi = *bi - s * vi;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquares<T> {
    /// `n × k`, one column per right-hand side.
    pub solution: Tensor<T>,
    /// Numerical rank of the design.
    pub rank: usize,
}

/// Minimum-norm minimizer of `‖A·X − B‖` for `A` (`m × n`) and `B` (`m × k`).
pub fn lstsq<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<LeastSquares<T>> {
    let (m, n) = a.shape();
    if b.rows() != m {
        return Err(Error::shape("lstsq", a.shape_str(), b.shape_str()));
    }
    let k = b.cols();
    let col_major = (0..n).flat_map(|j| (0..m).map(move |i| a.get(i, j))).collect();
    let qr = Factored::factor(m, n, col_major, true);
    let r = qr.rank();

    // Second factorization of [R11 R12]ᵀ (n × r), only needed when r < n.
    let cod = (r > 0 && r < n).then(|| {
        let mt = (0..r).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| qr.at(i, j)).collect();
        Factored::factor(n, r, mt, false)
    });

    let mut solution = vec![T::zero(); n * k];
    for c in 0..k {
        let mut rhs: Vec<T> = (0..m).map(|i| b.get(i, c)).collect();
        qr.apply_qt(&mut rhs);
        let mut z = vec![T::zero(); n];
        match &cod {
            None => {
                // Back substitution on R11.
                for i in (0..r).rev() {
                    let s = (i + 1..r).fold(rhs[i], |s, j| s - qr.at(i, j) * z[j]);
                    z[i] = s / qr.at(i, i);
                }
            }
            Some(second) => {
                // M = R₂ᵀ·Q₂ᵀ, so solve R₂ᵀ·w = c forward, then z = Q₂·w.
                for i in 0..r {
                    let s = (0..i).fold(rhs[i], |s, j| s - second.at(j, i) * z[j]);
                    z[i] = s / second.at(i, i);
                }
                second.apply_q(&mut z);
            }
        }
        for (j, &p) in qr.perm.iter().enumerate() {
            solution[p * k + c] = z[j];
        }
    }
    Ok(LeastSquares {
        solution: Tensor::new(n, k, solution)?,
        rank: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gauss-Jordan with partial pivoting on the normal equations.
    fn normal_equations(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let ata = a.transpose().matmul(a).unwrap();
        let atb = a.transpose().matmul(b).unwrap();
        let n = ata.rows();
        let k = atb.cols();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| ata.row(i).iter().chain(atb.row(i)).copied().collect())
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, p);
            let d = m[c][c];
            m[c].iter_mut().for_each(|v| *v /= d);
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let pivot_row = m[c].clone();
                    m[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        Tensor::from_fn(n, k, |i, j| m[i][n + j]).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn square_system() {
        let a = Tensor::from_rows(&[[2.0, 1.0], [1.0, 3.0]]).unwrap();
        let b = Tensor::column(&[3.0, 5.0]).unwrap();
        let x = lstsq(&a, &b).unwrap();
        assert_eq!(x.rank, 2);
        assert!((x.solution.get(0, 0) - 0.8f64).abs() < 1e-14);
        assert!((x.solution.get(1, 0) - 1.4f64).abs() < 1e-14);
    }

    #[test]
    fn overdetermined_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random(&mut rng, 30, 6);
            let b = random(&mut rng, 30, 2);
            let x = lstsq(&a, &b).unwrap();
            let oracle = normal_equations(&a, &b);
            assert_eq!(x.rank, 6);
            assert!(x.solution.max_abs_diff(&oracle).unwrap() < 1e-10 * oracle.max_abs().max(1.0));
        }
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // Columns 0 and 1 identical: the min-norm solution splits the weight.
        let a = Tensor::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        let b = Tensor::column(&[2.0, 4.0, 6.0]).unwrap();
        let x = lstsq(&a, &b).unwrap();
        assert_eq!(x.rank, 1);
        assert!((x.solution.get(0, 0) - 1.0f64).abs() < 1e-12);
        assert!((x.solution.get(1, 0) - 1.0f64).abs() < 1e-12);
    }

    #[test]
    fn underdetermined_matches_pseudo_inverse() {
        // Minimum-norm solution of a wide full-row-rank system is Aᵀ(AAᵀ)⁻¹b.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 7);
        let b = random(&mut rng, 3, 1);
        let x = lstsq(&a, &b).unwrap();
        assert_eq!(x.rank, 3);
        // For square invertible M the normal equations reduce to M·y = b.
        let y = normal_equations(&a.matmul(&a.transpose()).unwrap(), &b);
        let oracle = a.transpose().matmul(&y).unwrap();
        assert!(x.solution.max_abs_diff(&oracle).unwrap() < 1e-10);
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let x = lstsq(&Tensor::zeros(3, 2).unwrap(), &Tensor::column(&[1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(x.rank, 0);
        assert_eq!(x.solution.max_abs(), 0.0);
    }

    #[test]
    fn mismatched_rows() {
        assert!(matches!(
            lstsq(&Tensor::<f64>::zeros(3, 2).unwrap(), &Tensor::zeros(2, 1).unwrap()),
            Err(Error::Shape { .. })
        ));
    }
}
