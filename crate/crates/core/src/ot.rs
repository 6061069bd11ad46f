//! Minimum Wasserstein-distance estimator.
//!
//! Within each group, `γ₀ + γ₋₀ᵀX + N(0, σ²)` and `Y` are compared through
//! the squared 2-Wasserstein distance between Gaussians with the same first
//! two moments, which in one dimension is the squared mean gap plus the
//! squared standard-deviation gap. The loss is the `π`-weighted sum over
//! groups:
//!
//! ```text
//! φ(γ, σ²) = Σ_k π_k [ (μ_Y^k − γ₀ − γ₋₀ᵀμ_X^k)² + (σ_{Y,k} − √(γ₋₀ᵀΓ_X^k γ₋₀ + σ²))² ]
//! ```
//!
//! It is minimized by projected steepest descent with Armijo backtracking,
//! keeping `σ²` inside a box proportional to the pooled response variance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::GroupMoments;
use crate::error::{Error, Result};
use crate::fit::{normalize_weights, FitDiagnostics, Method, RegressionFit};
use crate::moment::{fit_moment, WeightVector};

/// Trial points whose smallest radicand falls below this are rejected by the
/// line search.
pub const RADICAND_FLOOR: f64 = 1e-12;

/// Parameters of the transported distribution: coefficients `(γ₀, γ₋₀)` and
/// noise variance `σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtParams {
    pub gamma: Vec<f64>,
    pub sigma2: f64,
}

impl OtParams {
    pub fn new(gamma: Vec<f64>, sigma2: f64) -> Self {
        Self { gamma, sigma2 }
    }

    /// Flattened `(γ₀, …, γ_d, σ²)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.gamma.clone();
        v.push(self.sigma2);
        v
    }

    pub fn from_slice(theta: &[f64]) -> Self {
        let (sigma2, gamma) = theta.split_last().expect("empty parameter vector");
        Self {
            gamma: gamma.to_vec(),
            sigma2: *sigma2,
        }
    }
}

/// Group probabilities `π_k`, positive and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupWeights(Vec<f64>);

impl GroupWeights {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        normalize_weights(pi, "group probabilities").map(Self)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtConfig {
    /// Stop once the infinity norm of the projected gradient is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c: f64,
    pub shrink: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    /// `σ²` is kept in `[lower · σ̂²_Y, upper · σ̂²_Y]` (pooled response variance).
    pub sigma2_lower: f64,
    pub sigma2_upper: f64,
    /// Evaluate the Hessian at the solution and report positive-definiteness.
    pub check_hessian: bool,
    /// Keep the loss value of every accepted iterate.
    pub record_trace: bool,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
            armijo_c: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
            max_backtracks: 80,
            sigma2_lower: 1e-8,
            sigma2_upper: 10.0,
            check_hessian: true,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtFitDiagnostics {
    pub iterations: usize,
    pub final_loss: f64,
    /// Infinity norm of the projected gradient at the returned point.
    pub final_gradient_norm: f64,
    pub converged: bool,
    pub hessian_spd: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<f64>>,
}

/// Group moments laid out flat for repeated loss evaluations.
struct Objective {
    d: usize,
    pi: Vec<f64>,
    mu_x: Vec<f64>,
    gamma_x: Vec<f64>,
    mu_y: Vec<f64>,
    sigma_y: Vec<f64>,
}

/// Per-group quantities at a parameter value.
struct GroupTerm {
    residual: f64,
    /// `Γ_X^k γ₋₀`
    gg: Vec<f64>,
    /// `√(γ₋₀ᵀΓ_X^kγ₋₀ + σ²)`
    s: f64,
}

impl Objective {
    fn new(moments: &GroupMoments, pi: &GroupWeights) -> Result<Self> {
        if pi.as_slice().len() != moments.k() {
            return Err(Error::InvalidWeights(format!(
                "{} group probabilities for {} groups",
                pi.as_slice().len(),
                moments.k()
            )));
        }
        let d = moments.d();
        let gs = moments.groups();
        Ok(Self {
            d,
            pi: pi.as_slice().to_vec(),
            mu_x: gs.iter().flat_map(|g| g.mu_x.iter().copied()).collect(),
            gamma_x: gs.iter().flat_map(|g| g.gamma_x.iter().copied()).collect(),
            mu_y: gs.iter().map(|g| g.mu_y).collect(),
            sigma_y: gs.iter().map(|g| g.sigma_y()).collect(),
        })
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() == self.d + 2 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "expected {} parameters, got {}",
                self.d + 2,
                theta.len()
            )))
        }
    }

    fn mu_x(&self, k: usize) -> &[f64] {
        &self.mu_x[k * self.d..(k + 1) * self.d]
    }

    /// Column-major, symmetric.
    fn gamma_x(&self, k: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.gamma_x[k * dd..(k + 1) * dd]
    }

    /// Returns `None` when a radicand is below `floor`.
    fn terms(&self, theta: &[f64], floor: f64) -> Option<Vec<GroupTerm>> {
        let d = self.d;
        let slopes = &theta[1..=d];
        let sigma2 = theta[d + 1];
        (0..self.pi.len())
            .map(|k| {
                let mu = self.mu_x(k);
                let g = self.gamma_x(k);
                let residual = self.mu_y[k] - theta[0] - dot(slopes, mu);
                let gg: Vec<f64> = (0..d).map(|i| (0..d).map(|j| g[i + j * d] * slopes[j]).sum()).collect();
                let radicand = dot(slopes, &gg) + sigma2;
                (radicand >= floor && radicand > 0.0).then(|| GroupTerm {
                    residual,
                    gg,
                    s: radicand.sqrt(),
                })
            })
            .collect()
    }

    fn value_of(&self, terms: &[GroupTerm]) -> f64 {
        terms
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let gap = self.sigma_y[k] - t.s;
                self.pi[k] * (t.residual * t.residual + gap * gap)
            })
            .sum()
    }

    fn gradient_of(&self, terms: &[GroupTerm]) -> Vec<f64> {
        let d = self.d;
        let mut grad = vec![0.0; d + 2];
        for (k, t) in terms.iter().enumerate() {
            let pi = self.pi[k];
            let ratio = self.sigma_y[k] / t.s;
            grad[0] -= 2.0 * pi * t.residual;
            for (j, (m, gg)) in self.mu_x(k).iter().zip(&t.gg).enumerate() {
                grad[j + 1] -= 2.0 * pi * (t.residual * m + (ratio - 1.0) * gg);
            }
            grad[d + 1] += pi * (1.0 - ratio);
        }
        grad
    }

    fn hessian_of(&self, terms: &[GroupTerm]) -> DMatrix<f64> {
        let d = self.d;
        let mut h = DMatrix::zeros(d + 2, d + 2);
        for (k, t) in terms.iter().enumerate() {
            let pi = self.pi[k];
            let mu = self.mu_x(k);
            let g = self.gamma_x(k);
            let s2 = t.s * t.s;
            let curv = self.sigma_y[k] / (s2 * t.s);
            h[(0, 0)] += 2.0 * pi;
            for i in 0..d {
                h[(0, i + 1)] += 2.0 * pi * mu[i];
                for j in 0..d {
                    let gij = g[i + j * d];
                    h[(i + 1, j + 1)] +=
                        2.0 * pi * (curv * (t.gg[i] * t.gg[j] - s2 * gij) + mu[i] * mu[j] + gij);
                }
                h[(i + 1, d + 1)] += pi * curv * t.gg[i];
            }
            h[(d + 1, d + 1)] += 0.5 * pi * curv;
        }
        for i in 0..d + 2 {
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }
        h
    }

    fn checked_terms(&self, theta: &[f64]) -> Result<Vec<GroupTerm>> {
        self.check_len(theta)?;
        self.terms(theta, 0.0).ok_or_else(|| {
            Error::Domain("γ₋₀ᵀΓ_X^kγ₋₀ + σ² must be positive in every group".into())
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Empirical Wasserstein loss at `params`.
pub fn wasserstein_loss(params: &OtParams, moments: &GroupMoments, pi: &GroupWeights) -> Result<f64> {
    let obj = Objective::new(moments, pi)?;
    let theta = params.to_vec();
    Ok(obj.value_of(&obj.checked_terms(&theta)?))
}

/// Analytic gradient with respect to `(γ₀, γ₋₀, σ²)`.
pub fn wasserstein_gradient(params: &OtParams, moments: &GroupMoments, pi: &GroupWeights) -> Result<Vec<f64>> {
    let obj = Objective::new(moments, pi)?;
    let theta = params.to_vec();
    Ok(obj.gradient_of(&obj.checked_terms(&theta)?))
}

/// Analytic Hessian with respect to `(γ₀, γ₋₀, σ²)`.
pub fn wasserstein_hessian(params: &OtParams, moments: &GroupMoments, pi: &GroupWeights) -> Result<DMatrix<f64>> {
    let obj = Objective::new(moments, pi)?;
    let theta = params.to_vec();
    Ok(obj.hessian_of(&obj.checked_terms(&theta)?))
}

/// Affine change of variables used by the descent loop.
///
/// The intercept is re-centered at the `π`-weighted mean of the group means
/// and every coordinate is scaled by the square root of a positive curvature
/// estimate, so that a unit step is of the right size in every direction.
struct Coordinates {
    d: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Coordinates {
    fn new(obj: &Objective, theta: &[f64]) -> Self {
        let d = obj.d;
        let k = obj.pi.len();
        let center: Vec<f64> = (0..d)
            .map(|j| (0..k).map(|g| obj.pi[g] * obj.mu_x(g)[j]).sum())
            .collect();
        let mut scale = vec![2.0_f64; d + 2];
        for j in 0..d {
            let h: f64 = (0..k)
                .map(|g| {
                    let dev = obj.mu_x(g)[j] - center[j];
                    2.0 * obj.pi[g] * (dev * dev + obj.gamma_x(g)[j + j * d])
                })
                .sum();
            scale[j + 1] = if h.is_finite() && h > 0.0 { h } else { 1.0 };
        }
        let slopes = &theta[1..=d];
        let h_sigma: f64 = (0..k)
            .map(|g| {
                let gm = obj.gamma_x(g);
                let q: f64 = (0..d)
                    .map(|i| (0..d).map(|j| slopes[i] * gm[i + j * d] * slopes[j]).sum::<f64>())
                    .sum();
                0.5 * obj.pi[g] / (q + theta[d + 1])
            })
            .sum();
        scale[d + 1] = if h_sigma.is_finite() && h_sigma > 0.0 { h_sigma } else { 1.0 };
        Self {
            d,
            center,
            scale: scale.into_iter().map(f64::sqrt).collect(),
        }
    }

    fn to_scaled(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = theta.to_vec();
        z[0] += dot(&self.center, &theta[1..=self.d]);
        for (zi, s) in z.iter_mut().zip(&self.scale) {
            *zi *= s;
        }
        z
    }

    fn to_theta(&self, z: &[f64]) -> Vec<f64> {
        let mut theta: Vec<f64> = z.iter().zip(&self.scale).map(|(v, s)| v / s).collect();
        theta[0] -= dot(&self.center, &theta[1..=self.d]);
        theta
    }

    fn gradient_to_scaled(&self, grad: &[f64]) -> Vec<f64> {
        let mut g = grad.to_vec();
        for j in 0..self.d {
            g[j + 1] -= self.center[j] * grad[0];
        }
        for (gi, s) in g.iter_mut().zip(&self.scale) {
            *gi /= s;
        }
        g
    }
}

/// Gradient with the `σ²` component zeroed where it points out of the box.
fn projected_gradient(grad: &[f64], sigma2: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut pg = grad.to_vec();
    let last = pg.len() - 1;
    if (sigma2 <= lo && pg[last] > 0.0) || (sigma2 >= hi && pg[last] < 0.0) {
        pg[last] = 0.0;
    }
    pg
}

/// Fits the Wasserstein estimator.
///
/// Starts from `init`, or from the moment fit (with `π` as group weights)
/// when `init` is `None`; `σ²` is projected into the box in either case.
/// Non-convergence is reported in the diagnostics, not as an error.
pub fn fit_ot(
    moments: &GroupMoments,
    pi: &GroupWeights,
    init: Option<&OtParams>,
    config: &OtConfig,
) -> Result<(RegressionFit, OtFitDiagnostics)> {
    let obj = Objective::new(moments, pi)?;
    let d = obj.d;
    let pooled = moments.pooled().sigma2_y;
    if !(pooled > 0.0) {
        return Err(Error::Domain("pooled response variance is zero".into()));
    }
    let lo = config.sigma2_lower * pooled;
    let hi = config.sigma2_upper * pooled;

    let mut theta = match init {
        Some(p) => {
            obj.check_len(&p.to_vec())?;
            p.to_vec()
        }
        None => {
            let weights = WeightVector::new(pi.as_slice().to_vec())?;
            fit_moment(moments, &weights)?.params()
        }
    };
    theta[d + 1] = theta[d + 1].clamp(lo, hi);

    let floor = RADICAND_FLOOR.min(lo);
    let mut terms = obj
        .terms(&theta, floor)
        .ok_or_else(|| Error::Domain("initial point outside the loss domain".into()))?;
    let mut loss = obj.value_of(&terms);
    let mut grad = obj.gradient_of(&terms);
    let mut trace = config.record_trace.then(|| vec![loss]);

    let coords = Coordinates::new(&obj, &theta);
    let z_lo = lo * coords.scale[d + 1];
    let z_hi = hi * coords.scale[d + 1];
    let mut z = coords.to_scaled(&theta);

    let mut iterations = 0;
    let mut gnorm = inf_norm(&projected_gradient(&grad, theta[d + 1], lo, hi));
    while gnorm > config.tolerance && iterations < config.max_iterations {
        let gz = coords.gradient_to_scaled(&grad);
        let mut step = config.initial_step;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let mut z_new: Vec<f64> = z.iter().zip(&gz).map(|(zi, gi)| zi - step * gi).collect();
            z_new[d + 1] = z_new[d + 1].clamp(z_lo, z_hi);
            let mut theta_new = coords.to_theta(&z_new);
            // unscaling a clamped coordinate can miss the bound by an ulp
            if z_new[d + 1] <= z_lo {
                theta_new[d + 1] = lo;
            } else if z_new[d + 1] >= z_hi {
                theta_new[d + 1] = hi;
            }
            if let Some(t_new) = obj.terms(&theta_new, floor) {
                let f_new = obj.value_of(&t_new);
                let decrease: f64 = gz.iter().zip(z_new.iter().zip(&z)).map(|(g, (a, b))| g * (a - b)).sum();
                if f_new <= loss + config.armijo_c * decrease {
                    accepted = Some((z_new, theta_new, t_new, f_new));
                    break;
                }
            }
            step *= config.shrink;
        }
        let Some((z_new, theta_new, t_new, f_new)) = accepted else {
            break;
        };
        iterations += 1;
        let stalled = z_new == z;
        z = z_new;
        theta = theta_new;
        terms = t_new;
        loss = f_new;
        grad = obj.gradient_of(&terms);
        gnorm = inf_norm(&projected_gradient(&grad, theta[d + 1], lo, hi));
        if let Some(tr) = trace.as_mut() {
            tr.push(loss);
        }
        if stalled {
            break;
        }
    }

    let converged = gnorm <= config.tolerance;
    let hessian_spd = config.check_hessian.then(|| {
        let h = obj.hessian_of(&terms);
        SymmetricEigen::new(h).eigenvalues.min() > 0.0
    });
    let diagnostics = OtFitDiagnostics {
        iterations,
        final_loss: loss,
        final_gradient_norm: gnorm,
        converged,
        hessian_spd,
        loss_trace: trace,
    };
    let fit = RegressionFit {
        beta: theta[..=d].to_vec(),
        sigma2_eps: theta[d + 1],
        method: Method::Ot,
        diagnostics: FitDiagnostics {
            clamped: false,
            raw_sigma2: None,
            iterations: Some(iterations),
            final_loss: Some(loss),
            final_gradient_norm: Some(gnorm),
            converged: Some(converged),
            hessian_spd,
        },
    };
    Ok((fit, diagnostics))
}
