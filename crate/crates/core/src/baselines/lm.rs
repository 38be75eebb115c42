//! Levenberg-Marquardt for small curve models.

use nalgebra::{DMatrix, DVector};

use crate::signals::SignalKind;

pub(crate) const MAX_ITERATIONS: usize = 200;
pub(crate) const REL_TOLERANCE: f64 = 1e-12;
const LAMBDA_START: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e20;

/// A scalar model `y(x; p)` with at most 5 parameters.
pub(crate) trait CurveModel {
    fn n_params(&self) -> usize;
    fn admissible(&self, p: &[f64]) -> bool;
    /// Model value at `x`; fills `grad` with the partial derivatives when given.
    fn eval(&self, p: &[f64], x: f64, grad: Option<&mut [f64]>) -> f64;
}

/// Parameter vectors: exp `[A0, tau, y0]`, osc `[A0, tau, f, phi, y0]`.
impl CurveModel for SignalKind {
    fn n_params(&self) -> usize {
        match self {
            SignalKind::ExpDecay => 3,
            SignalKind::DampedOsc => 5,
        }
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.is_finite()) && p[1] > 0.0 && (*self == SignalKind::ExpDecay || p[2] != 0.0)
    }

    #[inline]
    fn eval(&self, p: &[f64], t: f64, grad: Option<&mut [f64]>) -> f64 {
        let e = (-t / p[1]).exp();
        match self {
            SignalKind::ExpDecay => {
                if let Some(g) = grad {
                    g[0] = e;
                    g[1] = p[0] * e * t / (p[1] * p[1]);
                    g[2] = 1.0;
                }
                p[0] * e + p[2]
            }
            SignalKind::DampedOsc => {
                let w = 2.0 * std::f64::consts::PI;
                let arg = w * p[2] * t + p[3];
                let (s, c) = arg.sin_cos();
                if let Some(g) = grad {
                    g[0] = e * c;
                    g[1] = p[0] * e * c * t / (p[1] * p[1]);
                    g[2] = -p[0] * e * s * w * t;
                    g[3] = -p[0] * e * s;
                    g[4] = 1.0;
                }
                p[0] * e * c + p[4]
            }
        }
    }
}

fn cost<M: CurveModel + ?Sized>(model: &M, p: &[f64], t: &[f64], y: &[f64]) -> f64 {
    t.iter()
        .zip(y)
        .map(|(&t, &y)| {
            let r = model.eval(p, t, None) - y;
            r * r
        })
        .sum()
}

/// Sum of squared residuals, `J^T J` and `J^T r` at `p`.
pub(crate) fn linearize<M: CurveModel + ?Sized>(model: &M, p: &[f64], t: &[f64], y: &[f64]) -> (f64, DMatrix<f64>, DVector<f64>) {
    let m = p.len();
    let mut jtj = DMatrix::zeros(m, m);
    let mut jtr = DVector::zeros(m);
    let mut g = [0.0; 5];
    let mut chi2 = 0.0;
    for (&t, &y) in t.iter().zip(y) {
        let r = model.eval(p, t, Some(&mut g[..m])) - y;
        chi2 += r * r;
        for i in 0..m {
            jtr[i] += g[i] * r;
            for j in 0..=i {
                jtj[(i, j)] += g[i] * g[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            jtj[(j, i)] = jtj[(i, j)];
        }
    }
    (chi2, jtj, jtr)
}

/// Inverse of a symmetric positive definite matrix after Jacobi scaling, or
/// `None` when it is numerically singular.
pub(crate) fn scaled_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = a.nrows();
    let d: Vec<f64> = (0..m).map(|i| a[(i, i)].sqrt()).collect();
    if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let n = DMatrix::from_fn(m, m, |i, j| a[(i, j)] / (d[i] * d[j]));
    let inv = n.cholesky()?.inverse();
    if inv.iter().any(|v| !v.is_finite()) || inv.diagonal().iter().any(|v| *v <= 0.0 || *v > 1e14) {
        return None;
    }
    Some(DMatrix::from_fn(m, m, |i, j| inv[(i, j)] / (d[i] * d[j])))
}

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub chi2: f64,
    pub jtj: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Stops when an accepted step lowers the cost by less than `REL_TOLERANCE`
/// relative or moves the model by a round-off amount.
pub(crate) fn minimize<M: CurveModel + ?Sized>(model: &M, p0: &[f64], t: &[f64], y: &[f64], max_iterations: usize) -> LmOutcome {
    let m = p0.len();
    let mut p = p0.to_vec();
    let (mut chi2, mut jtj, mut jtr) = linearize(model, &p, t, y);
    let mut lambda = LAMBDA_START;
    let mut iterations = 0;
    let mut converged = chi2 == 0.0;
    let mut trial = vec![0.0; m];
    // Steps that move the model by less than this are round-off.
    let tiny_step = 1e-12 * y.iter().map(|v| v * v).sum::<f64>().sqrt();
    'outer: while !converged && iterations < max_iterations {
        iterations += 1;
        let d: Vec<f64> = (0..m).map(|i| jtj[(i, i)].sqrt().max(f64::MIN_POSITIVE)).collect();
        loop {
            let a = DMatrix::from_fn(m, m, |i, j| {
                jtj[(i, j)] / (d[i] * d[j]) + if i == j { lambda } else { 0.0 }
            });
            let b = DVector::from_fn(m, |i, _| -jtr[i] / d[i]);
            let step = a.cholesky().map(|c| c.solve(&b));
            if let Some(u) = step {
                for i in 0..m {
                    trial[i] = p[i] + u[i] / d[i];
                }
                if model.admissible(&trial) {
                    let c = cost(model, &trial, t, y);
                    if c < chi2 {
                        let rel = (chi2 - c) / chi2;
                        p.copy_from_slice(&trial);
                        (chi2, jtj, jtr) = linearize(model, &p, t, y);
                        lambda = (lambda / 10.0).max(1e-12);
                        converged = rel < REL_TOLERANCE || chi2 == 0.0 || u.norm() <= tiny_step;
                        continue 'outer;
                    }
                }
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // No step in any direction lowers the cost: a minimum to
                // working precision.
                converged = true;
                break 'outer;
            }
        }
    }
    LmOutcome {
        params: p,
        chi2,
        jtj,
        iterations,
        converged,
    }
}
