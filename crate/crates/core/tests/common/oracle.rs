//! Independent reference computations used to freeze expected values.

use num_complex::Complex64 as C;

pub type Mat = Vec<Vec<C>>;

pub fn identity(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) }).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![C::new(0.0, 0.0); m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn norm1(a: &Mat) -> f64 {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j].norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &Mat) -> Mat {
    let n = a.len();
    let mut s = 0;
    while norm1(a) / 2f64.powi(s) > 0.25 {
        s += 1;
    }
    let scale = 1.0 / 2f64.powi(s);
    let x: Mat = a.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=24 {
        term = matmul(&term, &x);
        term.iter_mut().flatten().for_each(|v| *v /= k as f64);
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}

/// Solves `a·x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Vec<Vec<C>> = a.iter().zip(b).map(|(r, s)| r.iter().chain(s).copied().collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| aug[i][col].norm().total_cmp(&aug[j][col].norm())).unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != C::new(0.0, 0.0) {
                    for c in 0..n + m {
                        let sub = f * aug[col][c];
                        aug[r][c] -= sub;
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Dense ZOH: `Ā = expm(ΔA)`, `B̄ = A⁻¹(Ā − I)B` for `A = diag(λ)` and a
/// per-state step `Δ` (`ΔA` means `diag(Δ)·A`).
pub fn dense_zoh(lambda: &[C], delta: &[f64], b: &Mat) -> (Mat, Mat) {
    let p = lambda.len();
    let mut a = vec![vec![C::new(0.0, 0.0); p]; p];
    let mut da = a.clone();
    for k in 0..p {
        a[k][k] = lambda[k];
        da[k][k] = lambda[k] * delta[k];
    }
    let a_bar = expm(&da);
    let mut am1 = a_bar.clone();
    for k in 0..p {
        am1[k][k] -= C::new(1.0, 0.0);
    }
    // (Ā − I)B, then A⁻¹ applied; Δ-scaling commutes for diagonal A
    let rhs = matmul(&am1, b);
    (a_bar, solve(&a, &rhs))
}

/// Reference SSM run: discretize densely, unroll the recurrence step by
/// step, emit `2·Re(C h) + D⊙u`. `u` is `len × d` row-major.
pub fn reference_scan(
    lambda: &[C],
    delta: &[f64],
    b: &Mat,
    c: &Mat,
    dmat: &[f64],
    u: &[f64],
    len: usize,
) -> Vec<f64> {
    let p = lambda.len();
    let d = dmat.len();
    let (a_bar, b_bar) = dense_zoh(lambda, delta, b);
    let mut h = vec![C::new(0.0, 0.0); p];
    let mut y = Vec::with_capacity(len * d);
    for t in 0..len {
        let ut = &u[t * d..(t + 1) * d];
        let mut next = vec![C::new(0.0, 0.0); p];
        for i in 0..p {
            for j in 0..p {
                next[i] += a_bar[i][j] * h[j];
            }
            for j in 0..d {
                next[i] += b_bar[i][j] * ut[j];
            }
        }
        h = next;
        for i in 0..d {
            let mut acc = C::new(0.0, 0.0);
            for k in 0..p {
                acc += c[i][k] * h[k];
            }
            y.push(2.0 * acc.re + dmat[i] * ut[i]);
        }
    }
    y
}

/// Window-mean forecast: each variable's input mean repeated over the horizon.
pub fn window_mean_forecast(input: &[f64], t: usize, m: usize, h: usize) -> Vec<f64> {
    let means: Vec<f64> = (0..m).map(|j| (0..t).map(|i| input[i * m + j]).sum::<f64>() / t as f64).collect();
    (0..h).flat_map(|_| means.iter().copied()).collect()
}

/// Seasonal-naive forecast: repeat the last `period` input rows.
pub fn seasonal_naive_forecast(input: &[f64], t: usize, m: usize, h: usize, period: usize) -> Vec<f64> {
    (0..h)
        .flat_map(|k| {
            let row = t - period + (k % period);
            input[row * m..(row + 1) * m].to_vec()
        })
        .collect()
}
