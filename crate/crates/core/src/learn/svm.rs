use std::borrow::Cow;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    /// RBF width; `None` means `1 / (d * Var(X))` over all training entries.
    pub gamma: Option<f64>,
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 1.0, gamma: None, tol: 1e-3, max_iter: 10_000_000 }
    }
}

pub fn rbf(a: ArrayView1<f64>, b: ArrayView1<f64>, gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

pub fn gamma_scale(x: ArrayView2<f64>) -> f64 {
    let n = x.len() as f64;
    if n == 0.0 {
        return 1.0;
    }
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0
    }
}

/// Kernel matrix source: dense when it fits, otherwise rows on demand.
pub enum KernelRows<'a> {
    Dense(Array2<f64>),
    Lazy { x: ArrayView2<'a, f64>, gamma: f64 },
}

const DENSE_LIMIT: usize = 6000;

impl<'a> KernelRows<'a> {
    pub fn rbf(x: ArrayView2<'a, f64>, gamma: f64) -> Self {
        let n = x.nrows();
        if n > DENSE_LIMIT {
            return KernelRows::Lazy { x, gamma };
        }
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            k[[i, i]] = 1.0;
            for j in 0..i {
                let v = rbf(x.row(i), x.row(j), gamma);
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }
        KernelRows::Dense(k)
    }

    fn n(&self) -> usize {
        match self {
            KernelRows::Dense(k) => k.nrows(),
            KernelRows::Lazy { x, .. } => x.nrows(),
        }
    }

    fn row(&self, i: usize) -> Cow<'_, [f64]> {
        match self {
            KernelRows::Dense(k) => Cow::Borrowed(k.row(i).to_slice().expect("standard layout")),
            KernelRows::Lazy { x, gamma } => {
                Cow::Owned(x.axis_iter(Axis(0)).map(|r| rbf(x.row(i), r, *gamma)).collect())
            }
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match self {
            KernelRows::Dense(k) => k[[i, i]],
            KernelRows::Lazy { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// `sum(alpha) - 0.5 alpha' Q alpha`, maximized.
    pub objective: f64,
    /// Maximal violating-pair gap at exit.
    pub kkt_gap: f64,
    pub iterations: usize,
}

/// SMO with second-order working-set selection on
/// `max sum(a) - 0.5 a'Qa` s.t. `0 <= a <= c`, `y'a = 0`, `Q_ij = y_i y_j K_ij`.
pub fn solve_dual(k: &KernelRows, y: &[f64], c: f64, tol: f64, max_iter: usize) -> DualSolution {
    const TAU: f64 = 1e-12;
    let n = k.n();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);
    let mut gap = 0.0;
    let mut iterations = 0;
    while iterations < max_iter {
        let mut i = usize::MAX;
        let mut m = f64::NEG_INFINITY;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] >= m {
                m = -y[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            gap = 0.0;
            break;
        }
        let ki = k.row(i);
        let mut j = usize::MAX;
        let mut big_m = f64::INFINITY;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            big_m = big_m.min(v);
            let b = m - v;
            if b > 0.0 {
                let mut a = k.diag(i) + k.diag(t) - 2.0 * ki[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -b * b / a;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = m - big_m;
        if gap < tol || j == usize::MAX {
            break;
        }
        iterations += 1;
        let kj = k.row(j);
        let mut a = k.diag(i) + k.diag(j) - 2.0 * ki[j];
        if a <= 0.0 {
            a = TAU;
        }
        let b = -y[i] * grad[i] + y[j] * grad[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let sum = y[i] * old_i + y[j] * old_j;
        let mut ai = (old_i + y[i] * b / a).clamp(0.0, c);
        let mut aj = y[j] * (sum - y[i] * ai);
        if !(0.0..=c).contains(&aj) {
            aj = aj.clamp(0.0, c);
            ai = y[i] * (sum - y[j] * aj);
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }
    let rho = {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum, mut free) = (0.0, 0usize);
        for t in 0..n {
            let yg = y[t] * grad[t];
            if alpha[t] >= c {
                if y[t] < 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else if alpha[t] <= 0.0 {
                if y[t] > 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        if free > 0 {
            sum / free as f64
        } else {
            0.5 * (ub + lb)
        }
    };
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (1.0 - g)).sum::<f64>();
    DualSolution { alpha, rho, objective, kkt_gap: gap.max(0.0), iterations }
}

/// Sigmoid `P(y=1 | f) = 1 / (1 + exp(a f + b))` fitted by Newton's method
/// with regularized targets.
pub fn platt_fit(dec: &[f64], y: &[u8]) -> (f64, f64) {
    let prior1 = y.iter().filter(|v| **v == 1).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|v| if *v == 1 { hi } else { lo }).collect();
    let fval = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(f, ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut f = fval(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (fi, ti) in dec.iter().zip(&t) {
            let z = fi * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
            let d1 = ti - p;
            g1 += fi * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = fval(na, nb);
            if nf < f + 1e-4 * step * gd {
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

pub fn platt_proba(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub gamma: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    pub platt_a: f64,
    pub platt_b: f64,
}

impl SvmModel {
    pub fn fit(x: ArrayView2<f64>, y: &[u8], params: &SvmParams) -> Result<SvmModel> {
        let pos = y.iter().filter(|v| **v == 1).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::Data("SVM training needs both classes".into()));
        }
        if !(params.c > 0.0) {
            return Err(Error::Config(format!("SVM C must be positive, got {}", params.c)));
        }
        let gamma = params.gamma.unwrap_or_else(|| gamma_scale(x));
        let k = KernelRows::rbf(x, gamma);
        let ys: Vec<f64> = y.iter().map(|v| if *v == 1 { 1.0 } else { -1.0 }).collect();
        let sol = solve_dual(&k, &ys, params.c, params.tol, params.max_iter);
        let mut model = SvmModel {
            gamma,
            support_vectors: Vec::new(),
            coef: Vec::new(),
            rho: sol.rho,
            platt_a: 0.0,
            platt_b: 0.0,
        };
        for (i, a) in sol.alpha.iter().enumerate() {
            if *a > 0.0 {
                model.support_vectors.push(x.row(i).to_vec());
                model.coef.push(a * ys[i]);
            }
        }
        let dec: Vec<f64> = x.axis_iter(Axis(0)).map(|r| model.decision_row(r)).collect();
        (model.platt_a, model.platt_b) = platt_fit(&dec, y);
        Ok(model)
    }

    /// `sum_i alpha_i y_i K(x_i, x) - rho`; positive means class 1.
    pub fn decision_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut s = -self.rho;
        for (sv, c) in self.support_vectors.iter().zip(&self.coef) {
            let d2: f64 = sv.iter().zip(row.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            s += c * (-self.gamma * d2).exp();
        }
        s
    }

    pub fn predict_proba_row(&self, row: ArrayView1<f64>) -> f64 {
        platt_proba(self.decision_row(row), self.platt_a, self.platt_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn two_point_problem() {
        let x = array![[0.0], [1.0]];
        let m = SvmModel::fit(x.view(), &[1, 0], &SvmParams { gamma: Some(1.0), ..Default::default() }).unwrap();
        assert!(m.decision_row(array![0.25].view()) > 0.0);
        assert!(m.decision_row(array![0.75].view()) < 0.0);
        // analytic dual: alpha = 1 / (1 - K01), capped at C
        let k01 = (-1.0f64).exp();
        let alpha = (1.0 / (1.0 - k01)).min(1.0);
        assert!((m.coef[0].abs() - alpha).abs() < 1e-9);
        assert!(m.decision_row(array![0.5].view()).abs() < 1e-12);
    }

    #[test]
    fn missing_class_is_rejected() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(SvmModel::fit(x.view(), &[1, 1], &SvmParams::default()), Err(Error::Data(_))));
    }

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = crate::rng::rng_from_seed(seed);
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, _)| rng.random::<f64>() + if y[i] == 1 { 2.0 } else { 0.0 });
        (x, y)
    }

    #[test]
    fn separable_support_vectors_classified() {
        let (x, y) = blobs(40, 1);
        let m = SvmModel::fit(x.view(), &y, &SvmParams::default()).unwrap();
        for (i, r) in x.rows().into_iter().enumerate() {
            assert_eq!(m.decision_row(r) > 0.0, y[i] == 1);
            assert_eq!(m.predict_proba_row(r) >= 0.5, y[i] == 1);
        }
    }

    #[test]
    fn kkt_gap_below_tolerance() {
        let mut rng = crate::rng::rng_from_seed(2);
        let x = Array2::from_shape_fn((60, 3), |_| rng.random::<f64>());
        let y: Vec<f64> = (0..60).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let k = KernelRows::rbf(x.view(), 2.0);
        let s = solve_dual(&k, &y, 1.0, 1e-3, 1_000_000);
        assert!(s.kkt_gap < 1e-3);
        let eq: f64 = s.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(eq.abs() < 1e-10);
        assert!(s.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn permutation_invariant_decision() {
        let (x, y) = blobs(30, 3);
        let p = SvmParams { tol: 1e-8, ..Default::default() };
        let a = SvmModel::fit(x.view(), &y, &p).unwrap();
        let perm: Vec<usize> = (0..30).rev().collect();
        let xp = x.select(Axis(0), &perm);
        let yp: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
        let b = SvmModel::fit(xp.view(), &yp, &p).unwrap();
        for r in x.rows() {
            assert!((a.decision_row(r) - b.decision_row(r)).abs() < 1e-5);
        }
    }

    #[test]
    fn lazy_kernel_matches_dense() {
        let (x, y) = blobs(20, 4);
        let ys: Vec<f64> = y.iter().map(|v| if *v == 1 { 1.0 } else { -1.0 }).collect();
        let dense = solve_dual(&KernelRows::rbf(x.view(), 0.7), &ys, 1.0, 1e-6, 100_000);
        let lazy = solve_dual(&KernelRows::Lazy { x: x.view(), gamma: 0.7 }, &ys, 1.0, 1e-6, 100_000);
        for (a, b) in dense.alpha.iter().zip(&lazy.alpha) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_scale_fixture() {
        let x = array![[0.0, 2.0], [2.0, 0.0]];
        // variance of {0,2,2,0} is 1
        assert!((gamma_scale(x.view()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn platt_monotone() {
        let dec = [-2.0, -1.0, -0.5, 0.4, 1.0, 2.0];
        let y = [0, 0, 1, 0, 1, 1];
        let (a, b) = platt_fit(&dec, &y);
        assert!(a < 0.0);
        let p: Vec<f64> = dec.iter().map(|f| platt_proba(*f, a, b)).collect();
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }
}
