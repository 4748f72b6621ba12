//! Grid-sampling construction of dual coresets, plus the uniform baseline.
//!
//! The construction stratifies samples twice at a fixed anchor point
//! `(theta_anc, lambda_anc)`: once by the lower bounds `a_i` and once by the
//! upper bounds `b_i` of the dual terms `h_i`, each into layers delimited by
//! doubling multiples of the respective mean. Cell `(i, j)` is the
//! intersection of lower layer `i` and upper layer `j`; each nonempty cell is
//! sampled uniformly without replacement and every drawn index `k` carries
//! the weight `|C_ij| / (n |Q_ij|)`, which keeps the weighted dual objective
//! an unbiased estimate of the full one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataio::{Dataset, LabeledSample, MetricSpec, Task};
use crate::error::WdroError;
use crate::losses::LossModel;
use crate::rng::substream;
use crate::Result;

const TAG_UNIFORM: u64 = 0x756e_6966;

/// Clamp applied to `lambda_anc` when the anchor formula degenerates to 0.
pub const LAMBDA_ANC_FLOOR: f64 = 1e-6;

/// Everything the grid construction needs before partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    /// Center of the hypothesis ball.
    pub theta_anc: Vec<f64>,
    /// Radius of the hypothesis ball (L2).
    pub l_p: f64,
    /// Anchor multiplier; the query interval is `[lambda_anc - l_d,
    /// lambda_anc + l_d]` and covers `[kappa(theta), tau(theta)]` on the ball.
    pub lambda_anc: f64,
    /// Multiplier radius; set equal to `lambda_anc`.
    pub l_d: f64,
    /// Reference point of the growth-rate bound.
    pub xi0: LabeledSample,
    /// Largest distance from a sample to `xi0`.
    pub rho: f64,
}

impl Anchors {
    /// Stable content digest, recorded in coreset metadata.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325; // FNV-1a
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for v in &self.theta_anc {
            eat(v.to_bits());
        }
        eat(self.l_p.to_bits());
        eat(self.lambda_anc.to_bits());
        eat(self.l_d.to_bits());
        for v in &self.xi0.x {
            eat(v.to_bits());
        }
        eat(self.xi0.y.to_bits());
        eat(self.rho.to_bits());
        h
    }
}

/// Reference point and spread of the data: `xi0` is the coordinatewise
/// feature centroid with the majority label (classification, ties to +1) or
/// the median label (regression); `rho = max_i d(xi_i, xi0)`.
pub fn compute_xi0_rho(ds: &Dataset, metric: &MetricSpec) -> (LabeledSample, f64) {
    let n = ds.len() as f64;
    let mut centroid = vec![0.0; ds.dim()];
    for s in ds.samples() {
        for (c, v) in centroid.iter_mut().zip(&s.x) {
            *c += v;
        }
    }
    for c in centroid.iter_mut() {
        *c /= n;
    }
    let y0 = match ds.task() {
        Task::Classification => {
            let pos = ds.samples().iter().filter(|s| s.y > 0.0).count();
            if 2 * pos >= ds.len() {
                1.0
            } else {
                -1.0
            }
        }
        Task::Regression => {
            let mut ys: Vec<f64> = ds.samples().iter().map(|s| s.y).collect();
            ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mid = ys.len() / 2;
            if ys.len() % 2 == 1 {
                ys[mid]
            } else {
                0.5 * (ys[mid - 1] + ys[mid])
            }
        }
    };
    let xi0 = LabeledSample { x: centroid, y: y0 };
    let rho = ds
        .samples()
        .iter()
        .map(|s| metric.distance(s, &xi0))
        .fold(0.0_f64, f64::max);
    (xi0, rho)
}

/// Upper bound `tau(theta)` on the minimizing multiplier:
/// `C(theta) * (2^{p-1} + (1 + 2^{p-1} rho^p) / sigma^p)`.
pub fn tau(model: &LossModel, theta: &[f64], sigma: f64, rho: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(WdroError::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    let p = model.metric.p as f64;
    let c = model.growth_c_value(theta);
    let two_p = 2.0_f64.powf(p - 1.0);
    Ok(c * (two_p + (1.0 + two_p * rho.powf(p)) / sigma.powf(p)))
}

/// Compute the anchors for a hypothesis ball `B(theta_anc, l_p)`:
/// `lambda_anc = max { kappa(theta_anc), max_ball tau(theta) / 2 }` with the
/// maximum of `C` over the ball evaluated in closed form, and `l_d =
/// lambda_anc`. A zero result is clamped to [`LAMBDA_ANC_FLOOR`].
pub fn compute_anchors(
    ds: &Dataset,
    model: &LossModel,
    sigma: f64,
    theta_anc: Vec<f64>,
    l_p: f64,
) -> Result<Anchors> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(WdroError::Domain(format!("sigma must be > 0, got {sigma}")));
    }
    if l_p < 0.0 {
        return Err(WdroError::Domain(format!("l_p must be >= 0, got {l_p}")));
    }
    if theta_anc.len() != ds.dim() {
        return Err(WdroError::Dim {
            expected: ds.dim(),
            got: theta_anc.len(),
        });
    }
    let (xi0, rho) = compute_xi0_rho(ds, &model.metric);
    let c_max =
        model.growth_c(&theta_anc)? + model.growth_c_ball_lipschitz(ds.dim()) * l_p;
    let p = model.metric.p as f64;
    let two_p = 2.0_f64.powf(p - 1.0);
    let tau_max = c_max * (two_p + (1.0 + two_p * rho.powf(p)) / sigma.powf(p));
    let mut lambda_anc = model.kappa(&theta_anc)?.max(tau_max / 2.0);
    if lambda_anc <= 0.0 {
        lambda_anc = LAMBDA_ANC_FLOOR;
    }
    Ok(Anchors {
        theta_anc,
        l_p,
        lambda_anc,
        l_d: lambda_anc,
        xi0,
        rho,
    })
}

/// The two-sided layer partition evaluated at the anchors.
#[derive(Debug, Clone)]
pub struct GridPartition {
    /// Mean of the lower bounds `a_i`.
    pub a_mean: f64,
    /// Mean of the upper bounds `b_i`.
    pub b_mean: f64,
    /// Layer count exponent `N = ceil(log2 n)`; layers run `0..=N`.
    pub levels: usize,
    /// Nonempty cells `(i, j) -> member sample indices` (ascending).
    pub cells: BTreeMap<(usize, usize), Vec<usize>>,
    /// Lower bounds at the anchor, by sample index.
    pub a: Vec<f64>,
    /// Upper bounds at the anchor, by sample index.
    pub b: Vec<f64>,
}

fn ceil_log2(n: usize) -> usize {
    let mut k = 0;
    let mut v = 1usize;
    while v < n {
        v <<= 1;
        k += 1;
    }
    k
}

/// Layer index for `value` relative to `mean`: layer 0 holds `value <= mean`
/// (all values when `mean` is 0), layer `j >= 1` holds `(2^{j-1} mean, 2^j
/// mean]`; values above the top layer clamp to `levels`.
fn layer(value: f64, mean: f64, levels: usize) -> usize {
    if mean <= 0.0 || value <= mean {
        return 0;
    }
    let mut j = 1;
    let mut bound = 2.0 * mean;
    while value > bound && j < levels {
        bound *= 2.0;
        j += 1;
    }
    j
}

/// Evaluate the bound oracles at the anchors and build the cell partition.
pub fn build_grid(ds: &Dataset, model: &LossModel, anchors: &Anchors) -> Result<GridPartition> {
    let n = ds.len();
    let theta = &anchors.theta_anc;
    let lambda = anchors.lambda_anc;
    let ab: Vec<(f64, f64)> = ds
        .samples()
        .par_iter()
        .map(|s| {
            let a = model.h_lower(theta, lambda, s)?;
            let b = model.h_upper(theta, lambda, s)?;
            Ok((a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let a: Vec<f64> = ab.iter().map(|&(a, _)| a).collect();
    let b: Vec<f64> = ab.iter().map(|&(_, b)| b).collect();
    let a_mean = a.iter().sum::<f64>() / n as f64;
    let b_mean = b.iter().sum::<f64>() / n as f64;
    let levels = ceil_log2(n);
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for k in 0..n {
        let i = layer(a[k], a_mean, levels);
        let j = layer(b[k], b_mean, levels);
        cells.entry((i, j)).or_default().push(k);
    }
    Ok(GridPartition {
        a_mean,
        b_mean,
        levels,
        cells,
        a,
        b,
    })
}

impl GridPartition {
    /// `sum_ij |C_ij| 2^i` (lower side) and `... 2^j` (upper side); both are
    /// at most `3n` by construction.
    pub fn layer_mass(&self) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (&(i, j), members) in &self.cells {
            lo += members.len() as f64 * (1u64 << i) as f64;
            hi += members.len() as f64 * (1u64 << j) as f64;
        }
        (lo, hi)
    }
}

/// Model-derived constants entering the per-cell allocation weights.
#[derive(Debug, Clone, Copy)]
pub struct AllocParams {
    /// Empirical Lipschitz constant of the loss over the data.
    pub lipschitz: f64,
    /// Attainment-radius bound `R` of the loss.
    pub r_bound: f64,
    /// Hypothesis ball radius.
    pub l_p: f64,
    /// Multiplier radius.
    pub l_d: f64,
}

impl AllocParams {
    pub fn for_problem(ds: &Dataset, model: &LossModel, anchors: &Anchors) -> Self {
        AllocParams {
            lipschitz: model.lipschitz_estimate(ds),
            r_bound: model.r_bound(ds.dim()),
            l_p: anchors.l_p,
            l_d: anchors.l_d,
        }
    }
}

/// Distribute a total budget `s` over the nonempty cells proportionally to
/// the squared deviation-to-resolution ratio
/// `((2^j B - mu_i 2^{i-1} A + 2 L l_p + 2 R l_d) / ((2^{j-1} + 2^{i-1}) A))^2`,
/// with at least one draw per cell and at most the cell size; surplus or
/// deficit is shifted greedily by descending weight until the counts sum to
/// `min(s, n)`.
pub fn allocate_budget(
    grid: &GridPartition,
    s: usize,
    params: &AllocParams,
) -> Result<BTreeMap<(usize, usize), usize>> {
    let ncells = grid.cells.len();
    if s < ncells {
        return Err(WdroError::Budget { min_feasible: ncells });
    }
    let n: usize = grid.cells.values().map(|c| c.len()).sum();
    let target = s.min(n);

    let eps_a = (1e-12 * grid.b_mean).max(1e-300);
    let denom_mean = grid.a_mean.max(eps_a);
    let mut weights: Vec<((usize, usize), f64)> = grid
        .cells
        .iter()
        .map(|(&(i, j), _)| {
            let mu = if i == 0 { 0.0 } else { 1.0 };
            let pow_j = 2.0_f64.powi(j as i32);
            let pow_i_half = 2.0_f64.powi(i as i32 - 1);
            let pow_j_half = 2.0_f64.powi(j as i32 - 1);
            let num = pow_j * grid.b_mean - mu * pow_i_half * grid.a_mean
                + 2.0 * params.lipschitz * params.l_p
                + 2.0 * params.r_bound * params.l_d;
            let den = (pow_j_half + pow_i_half) * denom_mean;
            ((i, j), (num / den).powi(2))
        })
        .collect();
    let caps: Vec<((usize, usize), usize)> = grid
        .cells
        .iter()
        .map(|(&key, members)| (key, members.len()))
        .collect();
    Ok(distribute(&mut weights, &caps, s, target))
}

/// Turn per-cell weights into draw counts: `min(cap, max(1, round(s w / W)))`
/// per cell, then shift surplus/deficit one draw at a time (descending
/// weight for additions, ascending for removals) until the total is
/// exactly `target`.
fn distribute(
    weights: &mut [((usize, usize), f64)],
    caps: &[((usize, usize), usize)],
    s: usize,
    target: usize,
) -> BTreeMap<(usize, usize), usize> {
    let caps: BTreeMap<(usize, usize), usize> = caps.iter().copied().collect();
    let total_w: f64 = weights.iter().map(|&(_, w)| w).sum();
    if total_w.is_nan() || total_w <= 0.0 || !total_w.is_finite() {
        // fully degenerate weights: spread evenly
        for w in weights.iter_mut() {
            w.1 = 1.0;
        }
    }
    let total_w: f64 = weights.iter().map(|&(_, w)| w).sum();

    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(key, w) in weights.iter() {
        let raw = (s as f64 * w / total_w).round() as usize;
        counts.insert(key, raw.max(1).min(caps[&key]));
    }

    weights.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    let mut total: usize = counts.values().sum();
    while total < target {
        let mut moved = false;
        for &(key, _) in weights.iter() {
            if total == target {
                break;
            }
            let c = counts.get_mut(&key).unwrap();
            if *c < caps[&key] {
                *c += 1;
                total += 1;
                moved = true;
            }
        }
        debug_assert!(moved, "target unreachable despite capacity check");
        if !moved {
            break;
        }
    }
    while total > target {
        let mut moved = false;
        for &(key, _) in weights.iter().rev() {
            if total == target {
                break;
            }
            let c = counts.get_mut(&key).unwrap();
            if *c > 1 {
                *c -= 1;
                total -= 1;
                moved = true;
            }
        }
        debug_assert!(moved, "cannot shrink below one draw per cell");
        if !moved {
            break;
        }
    }
    counts
}

/// Provenance metadata carried by a serialized coreset.
#[derive(Debug, Clone, PartialEq)]
pub struct CoresetMeta {
    pub sigma: f64,
    pub p: u32,
    pub gamma: f64,
    pub norm: String,
    pub loss: String,
    pub seed: u64,
    pub budget: usize,
    pub n: usize,
    pub anchors_digest: u64,
}

/// Sparse nonnegative mass vector over sample indices; weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Coreset {
    /// `(sample index, weight)` pairs, ascending by index.
    pub entries: Vec<(usize, f64)>,
    pub meta: CoresetMeta,
}

impl Coreset {
    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn sum_weights(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    /// The weighted dual objective at fixed per-sample values.
    pub fn weighted_sum(&self, values: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * values[i]).sum()
    }

    /// Text form: JSON with `indices`, `weights` (17 significant digits), and
    /// `meta`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("{\n  \"indices\": [");
        for (k, (i, _)) in self.entries.iter().enumerate() {
            if k > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{i}");
        }
        out.push_str("],\n  \"weights\": [");
        for (k, (_, w)) in self.entries.iter().enumerate() {
            if k > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{w:.16e}");
        }
        let m = &self.meta;
        let _ = write!(
            out,
            "],\n  \"meta\": {{\"sigma\": {:.16e}, \"p\": {}, \"gamma\": {:.16e}, \
             \"norm\": \"{}\", \"loss\": \"{}\", \"seed\": {}, \"budget\": {}, \
             \"n\": {}, \"anchors_digest\": \"{:016x}\"}}\n}}\n",
            m.sigma, m.p, m.gamma, m.norm, m.loss, m.seed, m.budget, m.n, m.anchors_digest
        );
        out
    }

    pub fn from_text(text: &str) -> Result<Coreset> {
        let v: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| WdroError::Parse { line: 1, msg: format!("coreset json: {e}") })?;
        let bad = |msg: &str| WdroError::Parse { line: 1, msg: msg.into() };
        let indices = v["indices"].as_array().ok_or_else(|| bad("missing indices"))?;
        let weights = v["weights"].as_array().ok_or_else(|| bad("missing weights"))?;
        if indices.len() != weights.len() {
            return Err(bad("indices/weights length mismatch"));
        }
        let entries: Vec<(usize, f64)> = indices
            .iter()
            .zip(weights)
            .map(|(i, w)| {
                Ok((
                    i.as_u64().ok_or_else(|| bad("bad index"))? as usize,
                    w.as_f64().ok_or_else(|| bad("bad weight"))?,
                ))
            })
            .collect::<Result<_>>()?;
        let m = &v["meta"];
        let meta = CoresetMeta {
            sigma: m["sigma"].as_f64().ok_or_else(|| bad("meta.sigma"))?,
            p: m["p"].as_u64().ok_or_else(|| bad("meta.p"))? as u32,
            gamma: m["gamma"].as_f64().ok_or_else(|| bad("meta.gamma"))?,
            norm: m["norm"].as_str().ok_or_else(|| bad("meta.norm"))?.to_string(),
            loss: m["loss"].as_str().ok_or_else(|| bad("meta.loss"))?.to_string(),
            seed: m["seed"].as_u64().ok_or_else(|| bad("meta.seed"))?,
            budget: m["budget"].as_u64().ok_or_else(|| bad("meta.budget"))? as usize,
            n: m["n"].as_u64().ok_or_else(|| bad("meta.n"))? as usize,
            anchors_digest: u64::from_str_radix(
                m["anchors_digest"].as_str().ok_or_else(|| bad("meta.anchors_digest"))?,
                16,
            )
            .map_err(|_| bad("meta.anchors_digest"))?,
        };
        Ok(Coreset { entries, meta })
    }
}

/// Draw the per-cell uniform samples for a fixed grid and allocation. Each
/// cell uses the substream `(seed, i, j)`, so the result is independent of
/// cell evaluation order.
pub fn draw_from_grid(
    grid: &GridPartition,
    counts: &BTreeMap<(usize, usize), usize>,
    n: usize,
    seed: u64,
) -> Vec<(usize, f64)> {
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (&(i, j), members) in &grid.cells {
        let q = counts[&(i, j)];
        let w = members.len() as f64 / (n as f64 * q as f64);
        let mut rng = substream(seed, &[i as u64, j as u64]);
        let chosen = rand::seq::index::sample(&mut rng, members.len(), q);
        for idx in chosen.iter() {
            entries.push((members[idx], w));
        }
    }
    entries.sort_by_key(|&(i, _)| i);
    entries
}

/// Build a dual coreset of support size `s` by grid sampling.
pub fn sample_coreset(
    ds: &Dataset,
    model: &LossModel,
    sigma: f64,
    anchors: &Anchors,
    s: usize,
    seed: u64,
) -> Result<Coreset> {
    let n = ds.len();
    if s == 0 || s > n {
        return Err(WdroError::Domain(format!(
            "budget must satisfy 1 <= s <= n, got s = {s}, n = {n}"
        )));
    }
    let grid = build_grid(ds, model, anchors)?;
    let params = AllocParams::for_problem(ds, model, anchors);
    let counts = allocate_budget(&grid, s, &params)?;
    let entries = draw_from_grid(&grid, &counts, n, seed);
    Ok(Coreset {
        entries,
        meta: CoresetMeta {
            sigma,
            p: model.metric.p,
            gamma: model.metric.gamma,
            norm: model.metric.feature_norm.to_string(),
            loss: model.kind.to_string(),
            seed,
            budget: s,
            n,
            anchors_digest: anchors.digest(),
        },
    })
}

/// Baseline: `s` indices uniform without replacement, each weighted `1/s`.
pub fn uniform_coreset(ds: &Dataset, s: usize, seed: u64) -> Result<Coreset> {
    let n = ds.len();
    if s == 0 || s > n {
        return Err(WdroError::Domain(format!(
            "budget must satisfy 1 <= s <= n, got s = {s}, n = {n}"
        )));
    }
    let mut rng = substream(seed, &[TAG_UNIFORM]);
    let mut entries: Vec<(usize, f64)> = rand::seq::index::sample(&mut rng, n, s)
        .iter()
        .map(|i| (i, 1.0 / s as f64))
        .collect();
    entries.sort_by_key(|&(i, _)| i);
    Ok(Coreset {
        entries,
        meta: CoresetMeta {
            sigma: 0.0,
            p: 1,
            gamma: 0.0,
            norm: "-".into(),
            loss: "uniform".into(),
            seed,
            budget: s,
            n,
            anchors_digest: 0,
        },
    })
}
