//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's linear algebra, kernel or model code.

// the textbook elimination loops read best with explicit indices
#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Unevaluated sum `hi + lo` carrying about 106 bits of precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn new(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = two_sum(s, e + t);
        let (hi, lo) = two_sum(s, e + f);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::new(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::new(q2)));
        let q3 = r.hi / o.hi;
        Dd::new(q1).add(Dd::new(q2)).add(Dd::new(q3))
    }

    pub fn ln(self) -> Dd {
        // one Newton step on exp(y) = x from the f64 logarithm
        let y = self.hi.ln();
        let ey = Dd::new(y.exp());
        let corr = self.sub(ey).div(ey);
        Dd::new(y).add(corr)
    }
}

/// Gauss-Jordan inverse with partial pivoting in double-double arithmetic.
pub fn dd_inverse(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m: Vec<Vec<Dd>> = (0..n)
        .map(|i| {
            (0..2 * n)
                .map(|j| {
                    if j < n {
                        Dd::new(a[[i, j]])
                    } else if j - n == i {
                        Dd::new(1.0)
                    } else {
                        Dd::ZERO
                    }
                })
                .collect()
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].hi.abs().total_cmp(&m[j][col].hi.abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for j in 0..2 * n {
            m[col][j] = m[col][j].div(p);
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                for j in 0..2 * n {
                    let t = m[col][j].mul(f);
                    m[i][j] = m[i][j].sub(t);
                }
            }
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| m[i][n + j].to_f64())
}

/// `log |A|` from the same elimination, for symmetric positive definite `A`.
pub fn dd_log_det(a: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    let mut m: Vec<Vec<Dd>> = (0..n).map(|i| (0..n).map(|j| Dd::new(a[[i, j]])).collect()).collect();
    let mut acc = Dd::ZERO;
    for col in 0..n {
        let p = m[col][col];
        acc = acc.add(p.ln());
        for i in col + 1..n {
            let f = m[i][col].div(p);
            for j in col..n {
                let t = m[col][j].mul(f);
                m[i][j] = m[i][j].sub(t);
            }
        }
    }
    acc.to_f64()
}

/// Gaussian elimination with partial pivoting, independent of the library.
pub fn gauss_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut x = b.to_owned();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs()))
            .unwrap();
        for j in 0..n {
            m.swap([c, j], [p, j]);
        }
        x.swap(c, p);
        for i in c + 1..n {
            let f = m[[i, c]] / m[[c, c]];
            for j in c..n {
                m[[i, j]] -= f * m[[c, j]];
            }
            x[i] -= f * x[c];
        }
    }
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|j| m[[c, j]] * x[j]).sum();
        x[c] = (x[c] - s) / m[[c, c]];
    }
    x
}

pub fn matvec(a: ArrayView2<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    Array1::from_shape_fn(a.nrows(), |i| (0..a.ncols()).map(|j| a[[i, j]] * v[j]).sum())
}

/// Squared-exponential kernel written out from its definition.
pub fn se(a: ArrayView1<f64>, b: ArrayView1<f64>, ls: &[f64], sf2: f64) -> f64 {
    let mut r2 = 0.0;
    for d in 0..a.len() {
        let l = if ls.len() == 1 { ls[0] } else { ls[d] };
        r2 += ((a[d] - b[d]) / l).powi(2);
    }
    sf2 * (-0.5 * r2).exp()
}

/// Plain hyperparameters for the oracles: lengthscales, σ_f², σ².
#[derive(Debug, Clone)]
pub struct Theta {
    pub ls: Vec<f64>,
    pub sf2: f64,
    pub sn2: f64,
}

impl Theta {
    pub fn from_log(params: &[f64]) -> Theta {
        let k = params.len() - 2;
        Theta {
            ls: params[..k].iter().map(|v| v.exp()).collect(),
            sf2: (2.0 * params[k]).exp(),
            sn2: (2.0 * params[k + 1]).exp(),
        }
    }
}

pub fn gram(a: ArrayView2<f64>, b: ArrayView2<f64>, th: &Theta) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| se(a.row(i), b.row(j), &th.ls, th.sf2))
}

/// Predictive mean, latent variance and log marginal likelihood of a GP
/// whose training covariance is `c` (noise included), via the extended
/// precision inverse. `kx` is train × test, `kss` the test prior variances.
pub struct NaiveGp {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub logml: f64,
}

pub fn naive_gp(c: ArrayView2<f64>, y: ArrayView1<f64>, kx: ArrayView2<f64>, kss: ArrayView1<f64>) -> NaiveGp {
    let n = c.nrows();
    let inv = dd_inverse(c);
    let alpha = matvec(inv.view(), y);
    let t = kx.ncols();
    let mean = Array1::from_shape_fn(t, |j| (0..n).map(|i| kx[[i, j]] * alpha[i]).sum());
    let var = Array1::from_shape_fn(t, |j| {
        let col = kx.column(j);
        let w = matvec(inv.view(), col);
        kss[j] - col.dot(&w)
    });
    let logml = -0.5 * y.dot(&alpha) - 0.5 * dd_log_det(c) - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    NaiveGp { mean, var, logml }
}

/// Exact GP regression straight from the textbook formulas.
pub fn naive_exact(x: ArrayView2<f64>, y: ArrayView1<f64>, xs: ArrayView2<f64>, th: &Theta) -> NaiveGp {
    let mut c = gram(x, x, th);
    for i in 0..x.nrows() {
        c[[i, i]] += th.sn2;
    }
    let kx = gram(x, xs, th);
    let kss = Array1::from_elem(xs.nrows(), th.sf2);
    naive_gp(c.view(), y, kx.view(), kss.view())
}

/// The full `n × n` FITC training covariance and test cross-covariances with
/// inducing rows `u`, formed entry by entry from `k_SoR` plus the diagonal
/// correction.
pub fn naive_fitc(x: ArrayView2<f64>, y: ArrayView1<f64>, u: &[usize], xs: ArrayView2<f64>, th: &Theta) -> NaiveGp {
    let ux = Array2::from_shape_fn((u.len(), x.ncols()), |(i, d)| x[[u[i], d]]);
    let kuu_inv = dd_inverse(gram(ux.view(), ux.view(), th).view());
    let kxu = gram(x, ux.view(), th);
    let ksu = gram(xs, ux.view(), th);
    let sor = |a: ArrayView1<f64>, b: ArrayView1<f64>| a.dot(&matvec(kuu_inv.view(), b));
    let n = x.nrows();
    let mut c = Array2::from_shape_fn(
        (n, n),
        |(i, j)| {
            if i == j {
                th.sf2
            } else {
                sor(kxu.row(i), kxu.row(j))
            }
        },
    );
    for i in 0..n {
        c[[i, i]] += th.sn2;
    }
    let kx = Array2::from_shape_fn((n, xs.nrows()), |(i, j)| sor(kxu.row(i), ksu.row(j)));
    let kss = Array1::from_elem(xs.nrows(), th.sf2);
    naive_gp(c.view(), y, kx.view(), kss.view())
}

/// Gonzalez FPC recomputing every point's distance to every centre each round.
pub fn brute_fpc(x: ArrayView2<f64>, m: usize, first: usize) -> Vec<usize> {
    let n = x.nrows();
    let d2 = |i: usize, j: usize| -> f64 {
        x.row(i)
            .iter()
            .zip(x.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut centres = vec![first];
    while centres.len() < m {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..n {
            if centres.contains(&i) {
                continue;
            }
            let near = centres.iter().map(|&c| d2(i, c)).fold(f64::INFINITY, f64::min);
            if near > best_d {
                best_d = near;
                best = Some(i);
            }
        }
        centres.push(best.unwrap());
    }
    centres
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] += h;
            q[i] -= h;
            (f(&p) - f(&q)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.sample(StandardNormal))
}

/// Smooth targets with a little noise, so likelihood surfaces are well posed.
pub fn smooth_targets(rng: &mut ChaCha8Rng, x: ArrayView2<f64>, noise: f64) -> Array1<f64> {
    Array1::from_shape_fn(x.nrows(), |i| {
        let r = x.row(i);
        let s: f64 = r
            .iter()
            .enumerate()
            .map(|(d, v)| ((d + 1) as f64 * 0.7 * v).sin())
            .sum();
        s + noise * rng.sample::<f64, _>(StandardNormal)
    })
}
