//! Loss models and their dual oracles.
//!
//! Each model bundles the loss `l(theta, xi)`, the asymptotic growth rate
//! `kappa(theta)` (below which the dual term is infinite), the growth rate
//! function `C(theta)`, the attainment-radius bound `R`, and the per-sample
//! dual term `h(theta, lambda, xi) = sup_zeta { l(theta, zeta) - lambda *
//! d^p(zeta, xi) }` together with lower/upper bound oracles `a`/`b`.
//!
//! For the SVM hinge, logistic, and Huber losses (order p = 1) `h` has a
//! closed form and `a = b = h`. For the SVM restricted to a hypercube domain
//! `[0, l]^m` the exact `h` is a convex program; only the closed-form bounds
//! are provided: `a` is the plain hinge loss and `b` evaluates a feasible
//! point of the dual program.

use std::fmt;

use crate::dataio::{Dataset, LabeledSample, MetricSpec, Norm, Task};
use crate::error::WdroError;
use crate::vecs::{dot, l2_norm, scale};
use crate::Result;

/// Relative tolerance when checking `lambda >= kappa(theta)`.
pub const LAMBDA_DOMAIN_TOL: f64 = 1e-9;

/// Loss family selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    SvmHinge,
    Logistic,
    Huber { delta: f64 },
    HypercubeSvm { side: f64 },
}

impl LossKind {
    /// Parse the CLI form `svm | logistic | huber:<delta> | hypercube-svm:<l>`.
    pub fn parse(s: &str) -> Result<LossKind> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("svm") {
            return Ok(LossKind::SvmHinge);
        }
        if s.eq_ignore_ascii_case("logistic") {
            return Ok(LossKind::Logistic);
        }
        if let Some(rest) = s.strip_prefix("huber:") {
            let delta: f64 = rest
                .parse()
                .map_err(|_| WdroError::Config(format!("invalid huber delta '{rest}'")))?;
            if delta.is_nan() || delta <= 0.0 {
                return Err(WdroError::Domain("huber delta must be > 0".into()));
            }
            return Ok(LossKind::Huber { delta });
        }
        if let Some(rest) = s.strip_prefix("hypercube-svm:") {
            let side: f64 = rest
                .parse()
                .map_err(|_| WdroError::Config(format!("invalid hypercube side '{rest}'")))?;
            if side.is_nan() || side <= 0.0 {
                return Err(WdroError::Domain("hypercube side must be > 0".into()));
            }
            return Ok(LossKind::HypercubeSvm { side });
        }
        Err(WdroError::Config(format!(
            "unknown loss '{s}' (expected svm | logistic | huber:<delta> | hypercube-svm:<l>)"
        )))
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::SvmHinge => write!(f, "svm"),
            LossKind::Logistic => write!(f, "logistic"),
            LossKind::Huber { delta } => write!(f, "huber:{delta}"),
            LossKind::HypercubeSvm { side } => write!(f, "hypercube-svm:{side}"),
        }
    }
}

/// Which term of the two-branch maximum attained the value of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The unperturbed-label branch (always the case for regression).
    Original,
    /// The flipped-label branch, offset by `-lambda * gamma`.
    FlippedLabel,
}

/// Value, theta-subgradient, and active branch of a dual oracle query.
#[derive(Debug, Clone)]
pub struct DualOracleOutput {
    pub value: f64,
    pub subgrad_theta: Vec<f64>,
    pub active_branch: Branch,
}

/// A loss family together with the ground metric it is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct LossModel {
    pub kind: LossKind,
    pub metric: MetricSpec,
}

fn hinge(z: f64) -> f64 {
    (1.0 - z).max(0.0)
}

/// Hinge derivative in z; the kink at z = 1 takes the zero branch.
fn hinge_grad(z: f64) -> f64 {
    if z < 1.0 {
        -1.0
    } else {
        0.0
    }
}

/// log(1 + exp(-z)) without overflow for large |z|.
fn logloss(z: f64) -> f64 {
    (-z.abs()).exp().ln_1p() + (-z).max(0.0)
}

/// d/dz log(1 + exp(-z)) = -sigmoid(-z), computed stably.
fn logloss_grad(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + z.exp())
    }
}

fn huber(z: f64, delta: f64) -> f64 {
    if z.abs() <= delta {
        0.5 * z * z
    } else {
        delta * (z.abs() - 0.5 * delta)
    }
}

fn huber_grad(z: f64, delta: f64) -> f64 {
    if z.abs() <= delta {
        z
    } else {
        delta * z.signum()
    }
}

impl LossModel {
    pub fn new(kind: LossKind, metric: MetricSpec) -> Result<Self> {
        match kind {
            LossKind::Huber { delta } if delta.is_nan() || delta <= 0.0 => {
                Err(WdroError::Domain("huber delta must be > 0".into()))
            }
            LossKind::HypercubeSvm { side } if side.is_nan() || side <= 0.0 => {
                Err(WdroError::Domain("hypercube side must be > 0".into()))
            }
            _ => Ok(LossModel { kind, metric }),
        }
    }

    /// The task this loss is defined for.
    pub fn task(&self) -> Task {
        match self.kind {
            LossKind::Huber { .. } => Task::Regression,
            _ => Task::Classification,
        }
    }

    fn check_dim(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        if theta.len() != x.len() {
            return Err(WdroError::Dim {
                expected: x.len(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_order(&self) -> Result<()> {
        if self.metric.p != 1 {
            return Err(WdroError::Unsupported(format!(
                "dual oracles are defined for Wasserstein order p = 1, got p = {}",
                self.metric.p
            )));
        }
        Ok(())
    }

    fn dual_norm(&self, v: &[f64]) -> f64 {
        self.metric.feature_norm.dual().eval(v)
    }

    /// Dual norm of `(theta, -1)` on the feature space with the label
    /// coordinate appended (regression losses).
    fn dual_norm_appended(&self, theta: &[f64]) -> f64 {
        let mut v = theta.to_vec();
        v.push(-1.0);
        self.dual_norm(&v)
    }

    /// The loss value `l(theta, xi)`.
    pub fn loss_value(&self, theta: &[f64], xi: &LabeledSample) -> Result<f64> {
        self.check_dim(theta, &xi.x)?;
        let z = dot(theta, &xi.x);
        Ok(match self.kind {
            LossKind::SvmHinge | LossKind::HypercubeSvm { .. } => hinge(xi.y * z),
            LossKind::Logistic => logloss(xi.y * z),
            LossKind::Huber { delta } => huber(z - xi.y, delta),
        })
    }

    /// Asymptotic growth rate `kappa(theta)`; `h` is infinite below it.
    pub fn kappa(&self, theta: &[f64]) -> Result<f64> {
        self.check_order()?;
        Ok(match self.kind {
            LossKind::SvmHinge | LossKind::Logistic => self.dual_norm(theta),
            LossKind::Huber { delta } => delta * self.dual_norm_appended(theta),
            LossKind::HypercubeSvm { .. } => 0.0,
        })
    }

    /// Growth rate function `C(theta)` bounding `l` by `C(theta) (1 + d^p)`.
    pub fn growth_c(&self, theta: &[f64]) -> Result<f64> {
        self.check_order()?;
        Ok(self.growth_c_value(theta))
    }

    /// `C(theta)` without the order gate; the multiplier bound `tau` keeps
    /// general `p` in its formula and needs this value for any order.
    pub(crate) fn growth_c_value(&self, theta: &[f64]) -> f64 {
        match self.kind {
            LossKind::SvmHinge | LossKind::Logistic | LossKind::HypercubeSvm { .. } => {
                self.dual_norm(theta)
            }
            LossKind::Huber { delta } => delta * self.dual_norm_appended(theta),
        }
    }

    /// Lipschitz bound on `theta -> C(theta)` over an L2 ball of radius 1 in
    /// `dim` coordinates; used to maximize `C` over the hypothesis ball.
    pub fn growth_c_ball_lipschitz(&self, dim: usize) -> f64 {
        let c_eq = self
            .metric
            .feature_norm
            .dual()
            .max_over_unit_l2_ball(dim);
        match self.kind {
            LossKind::Huber { delta } => delta * c_eq,
            _ => c_eq,
        }
    }

    /// Bound `R` on the attainment radius entering the budget allocation.
    /// `dim` is the feature dimension (only the hypercube bound uses it).
    pub fn r_bound(&self, dim: usize) -> f64 {
        let gamma = self.metric.gamma;
        match self.kind {
            LossKind::SvmHinge | LossKind::Logistic => gamma,
            LossKind::Huber { .. } => 0.0,
            LossKind::HypercubeSvm { side } => {
                gamma + side * (dim as f64).powf(1.0 / self.metric.p as f64)
            }
        }
    }

    fn check_lambda_domain(&self, theta: &[f64], lambda: f64) -> Result<f64> {
        let kappa = self.kappa(theta)?;
        if lambda < kappa - LAMBDA_DOMAIN_TOL * kappa.max(1.0) {
            return Err(WdroError::Domain(format!(
                "lambda = {lambda} below kappa(theta) = {kappa}; h is infinite there"
            )));
        }
        Ok(kappa)
    }

    /// Exact dual term `h(theta, lambda, xi)` with a theta-subgradient of the
    /// active branch. Ties in the branch maximum resolve to the original-label
    /// branch. Unsupported for the hypercube SVM (use [`Self::h_lower`] /
    /// [`Self::h_upper`]).
    pub fn h_exact(
        &self,
        theta: &[f64],
        lambda: f64,
        xi: &LabeledSample,
    ) -> Result<DualOracleOutput> {
        self.check_dim(theta, &xi.x)?;
        self.check_lambda_domain(theta, lambda)?;
        let gamma = self.metric.gamma;
        let z = dot(theta, &xi.x);
        match self.kind {
            LossKind::SvmHinge | LossKind::Logistic => {
                type Scalar = fn(f64) -> f64;
                let (lf, lg): (Scalar, Scalar) = match self.kind {
                    LossKind::SvmHinge => (hinge, hinge_grad),
                    _ => (logloss, logloss_grad),
                };
                let t = xi.y * z;
                let original = lf(t);
                let flipped = lf(-t) - lambda * gamma;
                if original >= flipped {
                    Ok(DualOracleOutput {
                        value: original,
                        subgrad_theta: scale(&xi.x, lg(t) * xi.y),
                        active_branch: Branch::Original,
                    })
                } else {
                    Ok(DualOracleOutput {
                        value: flipped,
                        subgrad_theta: scale(&xi.x, -lg(-t) * xi.y),
                        active_branch: Branch::FlippedLabel,
                    })
                }
            }
            LossKind::Huber { delta } => {
                let r = z - xi.y;
                Ok(DualOracleOutput {
                    value: huber(r, delta),
                    subgrad_theta: scale(&xi.x, huber_grad(r, delta)),
                    active_branch: Branch::Original,
                })
            }
            LossKind::HypercubeSvm { .. } => Err(WdroError::Unsupported(
                "exact h is a convex program for the hypercube SVM; use h_lower/h_upper".into(),
            )),
        }
    }

    /// Lower bound oracle `a(theta, lambda, xi)`: the exact value for the
    /// closed-form losses, the plain hinge loss for the hypercube SVM.
    pub fn h_lower(&self, theta: &[f64], lambda: f64, xi: &LabeledSample) -> Result<f64> {
        match self.kind {
            LossKind::HypercubeSvm { .. } => {
                self.check_order()?;
                self.loss_value(theta, xi)
            }
            _ => Ok(self.h_exact(theta, lambda, xi)?.value),
        }
    }

    /// Upper bound oracle `b(theta, lambda, xi)`: the exact value for the
    /// closed-form losses; for the hypercube SVM, the objective of a feasible
    /// point of the dual program.
    pub fn h_upper(&self, theta: &[f64], lambda: f64, xi: &LabeledSample) -> Result<f64> {
        match self.kind {
            LossKind::HypercubeSvm { side } => {
                self.check_order()?;
                self.check_dim(theta, &xi.x)?;
                if lambda < 0.0 {
                    return Err(WdroError::Domain(format!(
                        "lambda must be >= 0, got {lambda}"
                    )));
                }
                let gamma = self.metric.gamma;
                let y = xi.y;
                let dual = self.dual_norm(theta);
                // Feasible multipliers: p^± and the componentwise slack z^±.
                let (p_plus, p_minus, z_plus, z_minus) = if dual > lambda {
                    let c = lambda * y / dual;
                    let p_plus = scale(theta, -c);
                    let p_minus = scale(theta, c);
                    let z_plus: Vec<f64> =
                        theta.iter().map(|&t| ((-y + c) * t).max(0.0)).collect();
                    let z_minus: Vec<f64> =
                        theta.iter().map(|&t| ((y - c) * t).max(0.0)).collect();
                    (p_plus, p_minus, z_plus, z_minus)
                } else {
                    (
                        scale(theta, -y),
                        scale(theta, y),
                        vec![0.0; theta.len()],
                        vec![0.0; theta.len()],
                    )
                };
                let term_plus = 1.0 + side * z_plus.iter().sum::<f64>() + dot(&xi.x, &p_plus);
                let term_minus = 1.0 + side * z_minus.iter().sum::<f64>() + dot(&xi.x, &p_minus)
                    - gamma * lambda;
                Ok(term_plus.max(term_minus).max(0.0))
            }
            _ => Ok(self.h_exact(theta, lambda, xi)?.value),
        }
    }

    /// One subgradient of `theta -> kappa(theta)`. Needed by training when
    /// the minimizing multiplier sits on the boundary `lambda = kappa(theta)`,
    /// where the risk picks up a `sigma^p * grad kappa` term that the
    /// fixed-lambda oracles cannot see.
    pub fn kappa_subgrad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_order()?;
        fn dual_norm_subgrad(norm: Norm, v: &[f64]) -> Vec<f64> {
            match norm.dual() {
                Norm::L2 => {
                    let n = l2_norm(v);
                    if n > 0.0 {
                        scale(v, 1.0 / n)
                    } else {
                        vec![0.0; v.len()]
                    }
                }
                Norm::L1 => v
                    .iter()
                    .map(|x| if *x != 0.0 { x.signum() } else { 0.0 })
                    .collect(),
                Norm::Linf => {
                    let mut best = 0usize;
                    for (j, x) in v.iter().enumerate() {
                        if x.abs() > v[best].abs() {
                            best = j;
                        }
                    }
                    let mut g = vec![0.0; v.len()];
                    if v[best] != 0.0 {
                        g[best] = v[best].signum();
                    }
                    g
                }
            }
        }
        Ok(match self.kind {
            LossKind::SvmHinge | LossKind::Logistic => {
                dual_norm_subgrad(self.metric.feature_norm, theta)
            }
            LossKind::Huber { delta } => {
                let mut v = theta.to_vec();
                v.push(-1.0);
                let mut g = dual_norm_subgrad(self.metric.feature_norm, &v);
                g.pop();
                scale(&g, delta)
            }
            LossKind::HypercubeSvm { .. } => vec![0.0; theta.len()],
        })
    }

    /// Derivative of the active branch of `h` with respect to `lambda`:
    /// `-gamma` on the flipped-label branch, 0 otherwise.
    pub fn h_lambda_derivative(&self, branch: Branch) -> f64 {
        match branch {
            Branch::FlippedLabel => -self.metric.gamma,
            Branch::Original => 0.0,
        }
    }

    /// Data-empirical Lipschitz constant of `theta -> l(theta, xi)` over the
    /// dataset: `max_i ||x_i||_2 * sup|L'|`, with the label coordinate
    /// appended for the Huber residual.
    pub fn lipschitz_estimate(&self, ds: &Dataset) -> f64 {
        match self.kind {
            LossKind::Huber { delta } => {
                delta
                    * ds.samples()
                        .iter()
                        .map(|s| (dot(&s.x, &s.x) + 1.0).sqrt())
                        .fold(0.0_f64, f64::max)
            }
            _ => ds
                .samples()
                .iter()
                .map(|s| l2_norm(&s.x))
                .fold(0.0_f64, f64::max),
        }
    }

    /// Per-sample Lipschitz bound for `theta -> h(theta, lambda, xi)`.
    pub fn sample_lipschitz(&self, xi: &LabeledSample) -> f64 {
        match self.kind {
            LossKind::Huber { delta } => delta * (dot(&xi.x, &xi.x) + 1.0).sqrt(),
            _ => l2_norm(&xi.x),
        }
    }
}
