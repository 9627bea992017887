//! Gaussian-process regression with an ARD squared-exponential kernel.
//!
//! Inputs live in the unit cube. Targets are optionally standardized; all
//! public predictions and draws are in original target units. Log-space
//! hyperparameters are fitted by multi-start projected gradient ascent on the
//! log marginal likelihood.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Constant prior mean, in the (possibly standardized) working space.
    pub mean: f64,
}

impl GpHyperparams {
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        Self {
            lengthscales: vec![lengthscale; dim],
            signal_variance,
            noise_variance,
            mean: 0.0,
        }
    }

    /// `[ln l_1 .. ln l_D, ln sf2, ln sn2]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.ln());
        v
    }

    pub fn from_log(theta: &[f64], mean: f64) -> Self {
        let d = theta.len() - 2;
        Self {
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[d].exp(),
            noise_variance: theta[d + 1].exp(),
            mean,
        }
    }

    /// Covariance between two inputs.
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub lengthscale_bounds: (f64, f64),
    pub signal_variance_bounds: (f64, f64),
    pub noise_variance_bounds: (f64, f64),
    /// Standardize targets to zero mean and unit variance before fitting.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iters: 200,
            lengthscale_bounds: (0.01, 10.0),
            signal_variance_bounds: (1e-4, 1e3),
            noise_variance_bounds: (1e-6, 1.0),
            standardize: true,
            seed: 0,
        }
    }
}

impl GpFitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("lengthscale", self.lengthscale_bounds),
            ("signal_variance", self.signal_variance_bounds),
            ("noise_variance", self.noise_variance_bounds),
        ] {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "{name} bounds ({lo}, {hi}) must be positive and ordered"
                )));
            }
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        Ok(())
    }

    fn log_bounds(&self, dim: usize) -> Vec<(f64, f64)> {
        let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
        let mut v = vec![ln(self.lengthscale_bounds); dim];
        v.push(ln(self.signal_variance_bounds));
        v.push(ln(self.noise_variance_bounds));
        v
    }
}

/// Cholesky factor of `a`, retrying with diagonal jitter 1e-10, 1e-9, ..
/// 1e-6. Returns the lower factor and the jitter used.
pub(crate) fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c.unpack(), 0.0));
    }
    let mut jitter = 1e-10;
    while jitter <= MAX_JITTER * 1.000_001 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok((c.unpack(), jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: MAX_JITTER })
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
}

fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
}

fn solve_upper_t(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b).expect("cholesky factor has a positive diagonal")
}

fn check_inputs(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidInput("no training data".into()));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidInput("inputs have inconsistent dimension".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    Ok(dim)
}

fn gram(x: &[Vec<f64>], hp: &GpHyperparams) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hp.signal_variance;
        for j in 0..i {
            let v = hp.kernel(&x[i], &x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Log marginal likelihood of `y` under `hp` and its gradient with respect to
/// `[ln l_1 .. ln l_D, ln sf2, ln sn2]`. Targets are used as given.
pub fn log_marginal_likelihood(hp: &GpHyperparams, x: &[Vec<f64>], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let dim = check_inputs(x, y)?;
    if hp.lengthscales.len() != dim {
        return Err(Error::InvalidInput("lengthscale count does not match input dimension".into()));
    }
    let n = x.len();
    let kf = gram(x, hp);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += hp.noise_variance;
    }
    let (l, _) = cholesky_with_jitter(&k)?;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - hp.mean));
    let alpha = solve_upper_t(&l, &solve_lower(&l, &r));
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let value = -0.5 * r.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;

    // W = alpha alpha^T - K^-1; dL/dtheta = 1/2 tr(W dK/dtheta)
    let linv = solve_lower_mat(&l, &DMatrix::identity(n, n));
    let kinv = linv.transpose() * &linv;
    let w = &alpha * alpha.transpose() - kinv;

    let mut grad = vec![0.0; dim + 2];
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            let kij = kf[(i, j)];
            if i != j {
                for (d, g) in grad.iter_mut().enumerate().take(dim) {
                    let diff = (x[i][d] - x[j][d]) / hp.lengthscales[d];
                    *g += 0.5 * wij * kij * diff * diff;
                }
            }
            grad[dim] += 0.5 * wij * kij;
        }
        grad[dim + 1] += 0.5 * w[(i, i)] * hp.noise_variance;
    }
    Ok((value, grad))
}

/// A conditioned GP. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyperparams,
    x: Vec<Vec<f64>>,
    y_offset: f64,
    y_scale: f64,
    standardize: bool,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Serializable description from which a model is rebuilt exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub hyperparams: GpHyperparams,
    pub standardize: bool,
}

fn standardization(y: &[f64], enabled: bool) -> (f64, f64) {
    if !enabled {
        return (0.0, 1.0);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = if y.len() > 1 {
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    if sd > 1e-12 * mean.abs().max(1.0) {
        (mean, sd)
    } else {
        (mean, 1.0)
    }
}

impl GpModel {
    /// Conditions a GP on `(x, y)` with fixed hyperparameters (expressed in
    /// the standardized space when `standardize` is set).
    pub fn with_hyperparams(x: &[Vec<f64>], y: &[f64], hyper: GpHyperparams, standardize: bool) -> Result<Self> {
        let dim = check_inputs(x, y)?;
        if hyper.lengthscales.len() != dim {
            return Err(Error::InvalidInput("lengthscale count does not match input dimension".into()));
        }
        let (y_offset, y_scale) = standardization(y, standardize);
        let n = x.len();
        let mut k = gram(x, &hyper);
        for i in 0..n {
            k[(i, i)] += hyper.noise_variance;
        }
        let (chol, jitter) = cholesky_with_jitter(&k)?;
        let r = DVector::from_iterator(n, y.iter().map(|v| (v - y_offset) / y_scale - hyper.mean));
        let alpha = solve_upper_t(&chol, &solve_lower(&chol, &r));
        Ok(Self {
            hyper,
            x: x.to_vec(),
            y_offset,
            y_scale,
            standardize,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn from_snapshot(x: &[Vec<f64>], y: &[f64], snap: &GpSnapshot) -> Result<Self> {
        Self::with_hyperparams(x, y, snap.hyperparams.clone(), snap.standardize)
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            hyperparams: self.hyper.clone(),
            standardize: self.standardize,
        }
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn train_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Diagonal jitter that was needed to factor the training covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn cross(&self, xs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.hyper.kernel(xi, xs)))
    }

    /// Posterior mean and variance (latent function) at each query point.
    pub fn predict(&self, xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut means = Vec::with_capacity(xs.len());
        let mut vars = Vec::with_capacity(xs.len());
        for q in xs {
            let k = self.cross(q);
            let m = self.hyper.mean + k.dot(&self.alpha);
            let v = solve_lower(&self.chol, &k);
            let var = (self.hyper.signal_variance - v.dot(&v)).max(0.0);
            means.push(self.y_offset + self.y_scale * m);
            vars.push(var * self.y_scale * self.y_scale);
        }
        (means, vars)
    }

    /// Posterior mean (standardized space) and covariance (standardized
    /// space) over `xs`.
    fn joint_std(&self, xs: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let q = xs.len();
        let n = self.x.len();
        let mut kxq = DMatrix::zeros(n, q);
        for (j, p) in xs.iter().enumerate() {
            for (i, xi) in self.x.iter().enumerate() {
                kxq[(i, j)] = self.hyper.kernel(xi, p);
            }
        }
        let mean = DVector::from_iterator(
            q,
            (0..q).map(|j| self.hyper.mean + kxq.column(j).dot(&self.alpha)),
        );
        let v = solve_lower_mat(&self.chol, &kxq);
        let mut cov = gram(xs, &self.hyper) - v.transpose() * v;
        cov = (&cov + cov.transpose()) * 0.5;
        (mean, cov)
    }

    /// `n_samples` joint draws of the latent function at `xs`.
    pub fn sample_posterior(&self, xs: &[Vec<f64>], n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n_samples == 0 || xs.is_empty() {
            return Ok(Vec::new());
        }
        let (mean, cov) = self.joint_std(xs);
        let (l, _) = cholesky_with_jitter(&cov)?;
        let q = xs.len();
        let mut rng = rng_from(seed);
        let mut out = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let z = DVector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let f = &mean + &l * z;
            out.push(f.iter().map(|v| self.y_offset + self.y_scale * v).collect());
        }
        Ok(out)
    }

    /// Prepares joint sampling over a fixed baseline set plus one candidate
    /// at a time.
    pub fn baseline_posterior(&self, baseline: &[Vec<f64>]) -> Result<BaselinePosterior<'_>> {
        let (mean, cov) = self.joint_std(baseline);
        let (chol_b, _) = cholesky_with_jitter(&cov)?;
        let n = self.x.len();
        let m = baseline.len();
        let mut kxb = DMatrix::zeros(n, m);
        for (j, p) in baseline.iter().enumerate() {
            for (i, xi) in self.x.iter().enumerate() {
                kxb[(i, j)] = self.hyper.kernel(xi, p);
            }
        }
        let a = solve_lower_mat(&self.chol, &kxb);
        Ok(BaselinePosterior {
            model: self,
            baseline: baseline.to_vec(),
            mean,
            chol_b,
            a,
        })
    }
}

/// Joint posterior over baseline points `B`, able to extend any baseline
/// draw `f_B = mu_B + L_B z` with a correctly correlated draw at a candidate.
pub struct BaselinePosterior<'a> {
    model: &'a GpModel,
    baseline: Vec<Vec<f64>>,
    mean: DVector<f64>,
    chol_b: DMatrix<f64>,
    /// L_X^-1 K(X, B)
    a: DMatrix<f64>,
}

/// Conditional of one candidate given the baseline's standard normals.
#[derive(Debug, Clone)]
pub struct CandidateConditional {
    mean: f64,
    loading: DVector<f64>,
    resid_sd: f64,
    offset: f64,
    scale: f64,
}

impl CandidateConditional {
    /// Candidate draw for baseline normals `z` and independent normal `w`.
    pub fn draw(&self, z: &DVector<f64>, w: f64) -> f64 {
        self.offset + self.scale * (self.mean + self.loading.dot(z) + self.resid_sd * w)
    }
}

impl BaselinePosterior<'_> {
    pub fn len(&self) -> usize {
        self.baseline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baseline.is_empty()
    }

    /// Baseline draw (original units) for standard normals `z`.
    pub fn draw(&self, z: &DVector<f64>) -> Vec<f64> {
        let f = &self.mean + &self.chol_b * z;
        let m = self.model;
        f.iter().map(|v| m.y_offset + m.y_scale * v).collect()
    }

    pub fn candidate(&self, c: &[f64]) -> CandidateConditional {
        let m = self.model;
        let kxc = m.cross(c);
        let u = solve_lower(&m.chol, &kxc);
        let kbc = DVector::from_iterator(self.baseline.len(), self.baseline.iter().map(|b| m.hyper.kernel(b, c)));
        let cov_bc = kbc - self.a.transpose() * &u;
        let loading = solve_lower(&self.chol_b, &cov_bc);
        let var_c = m.hyper.signal_variance - u.dot(&u);
        let resid = (var_c - loading.dot(&loading)).max(0.0);
        CandidateConditional {
            mean: m.hyper.mean + kxc.dot(&m.alpha),
            loading,
            resid_sd: resid.sqrt(),
            offset: m.y_offset,
            scale: m.y_scale,
        }
    }
}

fn project(theta: &mut [f64], bounds: &[(f64, f64)]) {
    for (t, (lo, hi)) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(*lo, *hi);
    }
}

/// Projected gradient ascent with Barzilai-Borwein steps and Armijo
/// backtracking. Returns the final point and objective.
fn ascend<F>(f: F, start: Vec<f64>, bounds: &[(f64, f64)], max_iters: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut theta = start;
    project(&mut theta, bounds);
    let Some((mut val, mut grad)) = f(&theta) else {
        return (theta, f64::NEG_INFINITY);
    };
    let mut step = 0.1;
    for _ in 0..max_iters {
        let mut t = step;
        let mut accepted = None;
        while t > 1e-12 {
            let mut cand: Vec<f64> = theta.iter().zip(&grad).map(|(a, g)| a + t * g).collect();
            project(&mut cand, bounds);
            let moved: f64 = cand.iter().zip(&theta).zip(&grad).map(|((c, a), g)| (c - a) * g).sum();
            if moved <= 0.0 {
                break;
            }
            if let Some((v, g)) = f(&cand) {
                if v >= val + 1e-4 * moved {
                    accepted = Some((cand, v, g));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, v, g)) = accepted else { break };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy < 0.0 { (ss / -sy).clamp(1e-6, 1e3) } else { (t * 2.0).min(1e3) };
        let gain = v - val;
        let max_move = s.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        theta = next;
        val = v;
        grad = g;
        if max_move < 1e-8 || gain < 1e-10 * (1.0 + val.abs()) {
            break;
        }
    }
    (theta, val)
}

/// Fits hyperparameters by maximizing the log marginal likelihood from
/// `cfg.restarts` seeded starting points and conditions on the best.
pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &GpFitConfig) -> Result<GpModel> {
    cfg.validate()?;
    let dim = check_inputs(x, y)?;
    if x.len() < 2 {
        return Err(Error::InvalidInput("fitting needs at least 2 observations".into()));
    }
    let (offset, scale) = standardization(y, cfg.standardize);
    let ys: Vec<f64> = y.iter().map(|v| (v - offset) / scale).collect();
    let bounds = cfg.log_bounds(dim);

    let objective = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
        let hp = GpHyperparams::from_log(theta, 0.0);
        log_marginal_likelihood(&hp, x, &ys).ok().filter(|(v, _)| v.is_finite())
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..cfg.restarts {
        let start = if r == 0 {
            GpHyperparams::isotropic(dim, 0.5, 1.0, 1e-2).to_log()
        } else {
            let mut rng = derived_rng(cfg.seed, "gp-restart", r as u64);
            let mut s: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05f64.ln()..2.0f64.ln())).collect();
            s.push(rng.random_range(0.2f64.ln()..5.0f64.ln()));
            s.push(rng.random_range(1e-4f64.ln()..0.1f64.ln()));
            s
        };
        let (theta, val) = ascend(objective, start, &bounds, cfg.max_iters);
        if best.as_ref().is_none_or(|(_, b)| val > *b) {
            best = Some((theta, val));
        }
    }
    let (theta, val) = best.expect("at least one restart");
    if !val.is_finite() {
        return Err(Error::NotPositiveDefinite { jitter: MAX_JITTER });
    }
    GpModel::with_hyperparams(x, y, GpHyperparams::from_log(&theta, 0.0), cfg.standardize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_inputs(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn lml_single_point_closed_form() {
        let hp = GpHyperparams::isotropic(3, 0.7, 1.7, 0.3);
        let (v, _) = log_marginal_likelihood(&hp, &[vec![0.2, 0.4, 0.1]], &[0.0]).unwrap();
        let expect = -0.5 * (1.7f64 + 0.3).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let mut rng = rng_from(42);
        for trial in 0..20 {
            let n = rng.random_range(3..15);
            let x = random_inputs(n, 3, 100 + trial);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let theta: Vec<f64> = vec![
                rng.random_range(-2.0..0.5),
                rng.random_range(-2.0..0.5),
                rng.random_range(-2.0..0.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(-5.0..-1.0),
            ];
            let hp = GpHyperparams::from_log(&theta, 0.0);
            let (_, grad) = log_marginal_likelihood(&hp, &x, &y).unwrap();
            for k in 0..theta.len() {
                let h = 1e-5;
                let mut tp = theta.clone();
                tp[k] += h;
                let mut tm = theta.clone();
                tm[k] -= h;
                let fp = log_marginal_likelihood(&GpHyperparams::from_log(&tp, 0.0), &x, &y).unwrap().0;
                let fm = log_marginal_likelihood(&GpHyperparams::from_log(&tm, 0.0), &x, &y).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-4, "trial {trial} param {k}: fd {fd} analytic {}", grad[k]);
            }
        }
    }

    #[test]
    fn single_point_posterior_mean() {
        let hp = GpHyperparams::isotropic(1, 1.0, 1.0, 0.0);
        let m = GpModel::with_hyperparams(&[vec![0.0]], &[1.0], hp, false).unwrap();
        let (mean, _) = m.predict(&[vec![1.0]]);
        assert!((mean[0] - (-0.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn interpolates_at_negligible_noise() {
        let x = vec![vec![0.1, 0.2, 0.3], vec![0.8, 0.1, 0.5], vec![0.4, 0.9, 0.7], vec![0.5, 0.5, 0.1]];
        let y = [1.0, -0.5, 2.0, 0.3];
        let hp = GpHyperparams::isotropic(3, 0.3, 1.0, 1e-8);
        let m = GpModel::with_hyperparams(&x, &y, hp, false).unwrap();
        let (mean, var) = m.predict(&x);
        for (a, b) in mean.iter().zip(&y) {
            assert!((a - b).abs() < 1e-5);
        }
        for v in var {
            assert!(v <= 1e-8 + 1e-6);
        }
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let x = vec![vec![0.0, 0.0, 0.0], vec![0.05, 0.0, 0.0]];
        let mut hp = GpHyperparams::isotropic(3, 0.05, 2.0, 1e-4);
        hp.mean = 0.7;
        let m = GpModel::with_hyperparams(&x, &[3.0, -1.0], hp, false).unwrap();
        let (mean, var) = m.predict(&[vec![1.0, 1.0, 1.0]]);
        assert!((mean[0] - 0.7).abs() < 1e-3);
        assert!((var[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn constant_targets_give_constant_mean() {
        let x = random_inputs(8, 3, 5);
        let y = vec![3.25; 8];
        let m = fit(&x, &y, &GpFitConfig::default()).unwrap();
        let (mean, _) = m.predict(&random_inputs(20, 3, 6));
        for v in mean {
            assert!((v - 3.25).abs() < 1e-6);
        }
    }

    #[test]
    fn conflicting_duplicates_raise_noise() {
        let mut x = random_inputs(10, 3, 9);
        x.push(x[0].clone());
        let mut y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        y[10] = y[0] + 1.5;
        let m = fit(&x, &y, &GpFitConfig::default()).unwrap();
        assert!(m.hyperparams().noise_variance > 1e-6);
    }

    #[test]
    fn fit_requires_two_points_and_finite_targets() {
        let cfg = GpFitConfig::default();
        assert!(fit(&[vec![0.5]], &[1.0], &cfg).is_err());
        assert!(fit(&[vec![0.5], vec![0.2]], &[1.0, f64::NAN], &cfg).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let x = random_inputs(15, 3, 1);
        let y: Vec<f64> = x.iter().map(|p| p[0] * 2.0 - p[2]).collect();
        let cfg = GpFitConfig { seed: 4, ..Default::default() };
        let a = fit(&x, &y, &cfg).unwrap();
        let b = fit(&x, &y, &cfg).unwrap();
        assert_eq!(a.hyperparams(), b.hyperparams());
    }

    #[test]
    fn target_scaling_rescales_variances() {
        let x = random_inputs(25, 2, 77);
        let mut rng = rng_from(78);
        let y: Vec<f64> = x
            .iter()
            .map(|p| (4.0 * p[0]).sin() * (2.0 * p[1]).cos() + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cfg = GpFitConfig {
            standardize: false,
            restarts: 1,
            max_iters: 2000,
            ..Default::default()
        };
        let c = 2.0;
        let yc: Vec<f64> = y.iter().map(|v| c * v).collect();
        let a = fit(&x, &y, &cfg).unwrap();
        let b = fit(&x, &yc, &cfg).unwrap();
        let (ha, hb) = (a.hyperparams(), b.hyperparams());
        assert!(((hb.signal_variance / ha.signal_variance).ln() - (c * c as f64).ln()).abs() < 1e-2);
        let noise_shift = (hb.noise_variance / ha.noise_variance).ln();
        assert!((noise_shift - (c * c as f64).ln()).abs() < 5e-2, "{noise_shift}");
    }

    #[test]
    fn destandardization_is_affine() {
        let x = random_inputs(12, 3, 3);
        let y: Vec<f64> = x.iter().map(|p| p[0] - 2.0 * p[1] * p[2]).collect();
        let hp = GpHyperparams::isotropic(3, 0.4, 1.3, 1e-3);
        let (a, b) = (3.5, -7.0);
        let ys: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let m1 = GpModel::with_hyperparams(&x, &y, hp.clone(), true).unwrap();
        let m2 = GpModel::with_hyperparams(&x, &ys, hp, true).unwrap();
        let q = random_inputs(10, 3, 4);
        let (p1, v1) = m1.predict(&q);
        let (p2, v2) = m2.predict(&q);
        for i in 0..q.len() {
            assert!((p2[i] - (a * p1[i] + b)).abs() < 1e-6);
            assert!((v2[i] - a * a * v1[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn permutation_invariance() {
        let x = random_inputs(10, 3, 8);
        let y: Vec<f64> = x.iter().map(|p| p.iter().sum::<f64>().sin()).collect();
        let hp = GpHyperparams::isotropic(3, 0.3, 1.0, 1e-3);
        let mut idx: Vec<usize> = (0..10).collect();
        idx.reverse();
        idx.swap(2, 7);
        let xp: Vec<_> = idx.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<_> = idx.iter().map(|&i| y[i]).collect();
        let q = random_inputs(15, 3, 9);
        let (m1, v1) = GpModel::with_hyperparams(&x, &y, hp.clone(), true).unwrap().predict(&q);
        let (m2, v2) = GpModel::with_hyperparams(&xp, &yp, hp, true).unwrap().predict(&q);
        for i in 0..q.len() {
            assert!((m1[i] - m2[i]).abs() < 1e-8);
            assert!((v1[i] - v2[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_draws_converge_to_mean() {
        let x = random_inputs(6, 3, 12);
        let y: Vec<f64> = x.iter().map(|p| p[0] + p[1]).collect();
        let m = GpModel::with_hyperparams(&x, &y, GpHyperparams::isotropic(3, 0.5, 1.0, 1e-2), true).unwrap();
        let q = random_inputs(4, 3, 13);
        let draws = m.sample_posterior(&q, 20_000, 5).unwrap();
        let (mean, var) = m.predict(&q);
        for j in 0..q.len() {
            let avg = draws.iter().map(|d| d[j]).sum::<f64>() / draws.len() as f64;
            assert!((avg - mean[j]).abs() < 3.0 * var[j].sqrt() / (20_000f64).sqrt());
        }
        assert!(m.sample_posterior(&q, 0, 5).unwrap().is_empty());
        assert_eq!(m.sample_posterior(&q, 3, 5).unwrap(), m.sample_posterior(&q, 3, 5).unwrap());
    }

    #[test]
    fn baseline_conditional_reproduces_joint_covariance() {
        // Empirical covariance between a baseline point and a candidate under
        // the split sampler matches the joint posterior covariance.
        let x = random_inputs(5, 2, 21);
        let y: Vec<f64> = x.iter().map(|p| p[0] * p[1]).collect();
        let m = GpModel::with_hyperparams(&x, &y, GpHyperparams::isotropic(2, 0.4, 1.0, 1e-2), false).unwrap();
        let base = vec![vec![0.3, 0.3], vec![0.6, 0.2]];
        let cand = vec![0.35, 0.3];
        let post = m.baseline_posterior(&base).unwrap();
        let cond = post.candidate(&cand);
        let (_, cov) = m.joint_std(&[base[0].clone(), base[1].clone(), cand.clone()]);
        let mut rng = rng_from(3);
        let n = 200_000;
        let (mut s0, mut sc, mut s0c, mut scc) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = DVector::from_iterator(2, (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let w: f64 = rng.sample(StandardNormal);
            let fb = post.draw(&z);
            let fc = cond.draw(&z, w);
            s0 += fb[0];
            sc += fc;
            s0c += fb[0] * fc;
            scc += fc * fc;
        }
        let nf = n as f64;
        let c0c = s0c / nf - (s0 / nf) * (sc / nf);
        let ccc = scc / nf - (sc / nf).powi(2);
        assert!((c0c - cov[(0, 2)]).abs() < 5e-3, "{c0c} vs {}", cov[(0, 2)]);
        assert!((ccc - cov[(2, 2)]).abs() < 5e-3, "{ccc} vs {}", cov[(2, 2)]);
    }
}
