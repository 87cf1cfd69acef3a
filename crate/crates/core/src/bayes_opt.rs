//! Gaussian-process optimization of feedback gains over a simulation plant
//! and a budget-limited "real" plant.
//!
//! Both fidelities share one GP whose covariance is
//!
//! ```text
//! k((x, d), (x', d')) = k_sim(x, x') + [d = d' = real] * k_eps(x, x')
//! ```
//!
//! so simulation data shapes the real-cost model while real evaluations
//! learn the sim-to-real error on top of it.
//!
//! Query points are chosen by an [`Acquisition`]. The default
//! [`EntropyProxy`] is a Monte-Carlo stand-in for entropy search: it
//! estimates how much one more evaluation would shrink the entropy of the
//! distribution of the real-cost minimizer over a seeded candidate set.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corrective::FeedbackGains;
use crate::cpg_gait::CpgParams;
use crate::surrogate_sim::{make_real_plant, run_sequence, standard_test_sequence, PlantParams, RealityGap, RunTrace, Segment};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RqKernelParams {
    pub variance: f64,
    pub length_scale: f64,
    /// Shape; large values approach the squared-exponential kernel.
    pub alpha: f64,
}

impl RqKernelParams {
    pub fn new(variance: f64, length_scale: f64, alpha: f64) -> Result<Self> {
        let p = RqKernelParams {
            variance,
            length_scale,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.variance, self.length_scale, self.alpha].iter().all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("kernel variance, length scale and shape must be positive"))
        }
    }

    fn eval_sq(&self, sq_dist: f64) -> f64 {
        let l2 = self.length_scale * self.length_scale;
        self.variance * (1.0 + sq_dist / (2.0 * self.alpha * l2)).powf(-self.alpha)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(alloc::format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum())
}

/// Rational-quadratic covariance `s² (1 + r² / (2 a l²))^-a`.
pub fn rq_kernel(x1: &[f64], x2: &[f64], p: &RqKernelParams) -> Result<f64> {
    Ok(p.eval_sq(sq_dist(x1, x2)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fidelity {
    Sim,
    Real,
}

impl Fidelity {
    pub fn as_str(self) -> &'static str {
        match self {
            Fidelity::Sim => "sim",
            Fidelity::Real => "real",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPoint {
    pub x: Vec<f64>,
    pub fidelity: Fidelity,
}

impl AugmentedPoint {
    pub fn new(x: Vec<f64>, fidelity: Fidelity) -> Self {
        AugmentedPoint { x, fidelity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeKernel {
    pub sim: RqKernelParams,
    /// Sim-to-real error term, active only between two real points.
    pub error: RqKernelParams,
}

impl CompositeKernel {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.error.validate()
    }

    fn eval(&self, x1: &[f64], d1: Fidelity, x2: &[f64], d2: Fidelity) -> Result<f64> {
        let r2 = sq_dist(x1, x2)?;
        let mut k = self.sim.eval_sq(r2);
        if d1 == Fidelity::Real && d2 == Fidelity::Real {
            k += self.error.eval_sq(r2);
        }
        Ok(k)
    }
}

impl Default for CompositeKernel {
    /// Suited to inputs scaled to the unit cube and standardized outputs.
    fn default() -> Self {
        CompositeKernel {
            sim: RqKernelParams {
                variance: 1.0,
                length_scale: 0.35,
                alpha: 1.0,
            },
            error: RqKernelParams {
                variance: 0.3,
                length_scale: 0.5,
                alpha: 1.0,
            },
        }
    }
}

pub fn composite_kernel(a1: &AugmentedPoint, a2: &AugmentedPoint, k: &CompositeKernel) -> Result<f64> {
    k.eval(&a1.x, a1.fidelity, &a2.x, a2.fidelity)
}

/// Largest diagonal regularization tried before giving up.
pub const MAX_JITTER: f64 = 1e-2;

/// Zero-mean GP regression with the composite kernel.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    points: Vec<AugmentedPoint>,
    kernel: CompositeKernel,
    /// Noise variance actually used, after any escalation.
    noise: f64,
    chol_l: DMatrix<f64>,
    weights: DVector<f64>,
}

fn cholesky_with_jitter(mut m: DMatrix<f64>, start: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    let mut jitter = start;
    let mut applied = 0.0;
    loop {
        for i in 0..n {
            m[(i, i)] += jitter - applied;
        }
        applied = jitter;
        if let Some(c) = m.clone().cholesky() {
            return Ok((c.unpack(), jitter));
        }
        jitter = if jitter > 0.0 { jitter * 10.0 } else { 1e-10 };
        if jitter > MAX_JITTER * (1.0 + 1e-12) {
            return Err(Error::Conditioning(alloc::format!("matrix is not positive definite with jitter up to {MAX_JITTER}")));
        }
    }
}

impl GaussianProcess {
    pub fn fit(points: Vec<AugmentedPoint>, values: &[f64], kernel: CompositeKernel, noise: f64) -> Result<Self> {
        kernel.validate()?;
        if points.is_empty() || points.len() != values.len() {
            return Err(Error::invalid("need one value per point and at least one point"));
        }
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::invalid("noise variance must be non-negative"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observed values must be finite"));
        }
        let n = points.len();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let k = composite_kernel(&points[i], &points[j], &kernel)?;
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
        }
        let (chol_l, noise) = cholesky_with_jitter(gram, noise)?;
        let y = DVector::from_column_slice(values);
        let z = chol_l.solve_lower_triangular(&y).ok_or_else(|| Error::Conditioning("triangular solve failed".to_string()))?;
        let weights = chol_l
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::Conditioning("triangular solve failed".to_string()))?;
        Ok(GaussianProcess {
            points,
            kernel,
            noise,
            chol_l,
            weights,
        })
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cross(&self, queries: &[AugmentedPoint]) -> Result<DMatrix<f64>> {
        let mut k = DMatrix::zeros(self.points.len(), queries.len());
        for (j, q) in queries.iter().enumerate() {
            for (i, p) in self.points.iter().enumerate() {
                k[(i, j)] = composite_kernel(p, q, &self.kernel)?;
            }
        }
        Ok(k)
    }

    /// Posterior mean and variance of the latent function at `q`.
    pub fn predict(&self, q: &AugmentedPoint) -> Result<(f64, f64)> {
        let (mean, cov) = self.joint(core::slice::from_ref(q))?;
        Ok((mean[0], cov[(0, 0)]))
    }

    /// Joint posterior over `queries`; the covariance excludes observation
    /// noise and its diagonal is clamped at zero.
    pub fn joint(&self, queries: &[AugmentedPoint]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let ks = self.cross(queries)?;
        let mean = ks.tr_mul(&self.weights);
        let v = self
            .chol_l
            .solve_lower_triangular(&ks)
            .ok_or_else(|| Error::Conditioning("triangular solve failed".to_string()))?;
        let m = queries.len();
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let prior = composite_kernel(&queries[i], &queries[j], &self.kernel)?;
                let c = prior - v.column(i).dot(&v.column(j));
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
            cov[(i, i)] = cov[(i, i)].max(0.0);
        }
        Ok((mean, cov))
    }
}

/// Which plane's cost drives the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostPlane {
    #[default]
    Sagittal,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostPair {
    pub alpha: f64,
    pub beta: f64,
}

impl CostPair {
    pub fn get(&self, plane: CostPlane) -> f64 {
        match plane {
            CostPlane::Sagittal => self.alpha,
            CostPlane::Lateral => self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub point: AugmentedPoint,
    pub cost: CostPair,
    /// Number of seeded runs averaged into `cost`.
    pub runs: usize,
}

pub fn gp_posterior(records: &[EvalRecord], plane: CostPlane, k: &CompositeKernel, noise: f64, query: &AugmentedPoint) -> Result<(f64, f64)> {
    let points = records.iter().map(|r| r.point.clone()).collect();
    let values: Vec<f64> = records.iter().map(|r| r.cost.get(plane)).collect();
    GaussianProcess::fit(points, &values, *k, noise)?.predict(query)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConfig {
    /// Weight of the `|x|²` gain penalty.
    pub regularization: f64,
    /// Added to both costs when the run ends in a fall.
    pub fall_penalty: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            regularization: 0.01,
            fall_penalty: 100.0,
        }
    }
}

fn trapezoid(values: impl Iterator<Item = f64>, dt: f64) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for v in values {
        if let Some(p) = prev {
            total += 0.5 * (p + v) * dt;
        }
        prev = Some(v);
    }
    total
}

/// Time integral of `|e_P|` per plane plus the gain penalty.
pub fn evaluate_cost(trace: &RunTrace, cfg: &CostConfig, gains: &[f64]) -> Result<CostPair> {
    if !(cfg.regularization.is_finite() && cfg.regularization >= 0.0) {
        return Err(Error::invalid("regularization weight must be non-negative"));
    }
    if trace.samples.is_empty() || !(trace.dt > 0.0) {
        return Err(Error::invalid("trace is empty"));
    }
    let penalty = cfg.regularization * gains.iter().map(|g| g * g).sum::<f64>();
    let fall = if trace.fallen { cfg.fall_penalty } else { 0.0 };
    let alpha = trapezoid(trace.samples.iter().map(|s| s.e_p_alpha.abs()), trace.dt) + penalty + fall;
    let beta = trapezoid(trace.samples.iter().map(|s| s.e_p_beta.abs()), trace.dt) + penalty + fall;
    if !(alpha.is_finite() && beta.is_finite()) {
        return Err(Error::invalid("cost is not finite"));
    }
    Ok(CostPair { alpha, beta })
}

/// Axis-aligned box of admissible gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("bounds need matching, non-empty lower and upper vectors"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
            return Err(Error::invalid("every lower bound must be finite and below its upper bound"));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, u))| (v - l) / (u - l)).collect()
    }

    pub fn from_unit(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, u))| (l + t.clamp(0.0, 1.0) * (u - l)).clamp(*l, *u))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptBudget {
    pub max_real: usize,
    pub max_total: usize,
    /// Seeded simulation runs averaged per simulation record.
    pub sim_average_n: usize,
    /// A real query must promise this many times the best simulation
    /// acquisition value. `f64::INFINITY` forbids real queries.
    pub sim_bias_weight: f64,
}

impl Default for OptBudget {
    fn default() -> Self {
        OptBudget {
            max_real: 15,
            max_total: 60,
            sim_average_n: 4,
            sim_bias_weight: 2.0,
        }
    }
}

impl OptBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_real > self.max_total {
            return Err(Error::Config("real evaluation budget exceeds the total budget".into()));
        }
        if self.max_total == 0 || self.sim_average_n == 0 {
            return Err(Error::Config("total budget and simulation averaging must be positive".into()));
        }
        if !(self.sim_bias_weight >= 1.0) {
            return Err(Error::Config("simulation bias weight must be at least 1".into()));
        }
        Ok(())
    }
}

/// Evaluations spent so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BudgetState {
    pub real: usize,
    pub total: usize,
}

impl BudgetState {
    pub fn of(records: &[EvalRecord]) -> Self {
        BudgetState {
            real: records.iter().filter(|r| r.point.fidelity == Fidelity::Real).count(),
            total: records.len(),
        }
    }

    pub fn real_left(&self, b: &OptBudget) -> bool {
        self.real < b.max_real
    }

    /// Real queries may not run ahead of the total budget: the share of real
    /// evaluations spent stays at or below the share of all evaluations.
    pub fn real_paced(&self, b: &OptBudget) -> bool {
        self.real * b.max_total <= self.total * b.max_real
    }

    pub fn exhausted(&self, b: &OptBudget) -> bool {
        self.total >= b.max_total || (b.max_real > 0 && self.real >= b.max_real)
    }
}

/// Model state handed to an acquisition. Inputs live in the unit cube and
/// outputs are standardized, so lower is better.
#[derive(Debug)]
pub struct AcquisitionContext<'a> {
    pub gp: &'a GaussianProcess,
    /// Candidate locations in the unit cube.
    pub candidates: &'a [Vec<f64>],
    /// Lowest standardized value observed per fidelity.
    pub best_sim: Option<f64>,
    pub best_real: Option<f64>,
}

/// Scores of every candidate at both fidelities. Higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionScores {
    pub sim: Vec<f64>,
    pub real: Vec<f64>,
}

pub trait Acquisition {
    fn score(&self, ctx: &AcquisitionContext<'_>, rng: &mut ChaCha8Rng) -> Result<AcquisitionScores>;
}

/// Monte-Carlo information gain about the real-cost minimizer.
///
/// Joint posterior samples over the candidates (real and simulated) give an
/// estimate of the minimizer distribution. Each possible query is then
/// fantasized at a few Gauss-Hermite outcomes and the samples are updated
/// pathwise, which yields the expected entropy after the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyProxy {
    pub samples: usize,
}

impl Default for EntropyProxy {
    fn default() -> Self {
        EntropyProxy { samples: 256 }
    }
}

/// Standard normal quadrature nodes and probabilities.
const FANTASY_NODES: [(f64, f64); 5] = [
    (-2.856_970_013_872_806, 0.011_257_411_327_720_69),
    (-1.355_626_179_974_266, 0.222_075_922_005_612_65),
    (0.0, 0.533_333_333_333_333_3),
    (1.355_626_179_974_266, 0.222_075_922_005_612_65),
    (2.856_970_013_872_806, 0.011_257_411_327_720_69),
];

fn entropy_of_counts(counts: &[u32], total: usize) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

impl Acquisition for EntropyProxy {
    fn score(&self, ctx: &AcquisitionContext<'_>, rng: &mut ChaCha8Rng) -> Result<AcquisitionScores> {
        let m = ctx.candidates.len();
        let s = self.samples.max(2);
        let queries: Vec<AugmentedPoint> = [Fidelity::Real, Fidelity::Sim]
            .iter()
            .flat_map(|&f| ctx.candidates.iter().map(move |x| AugmentedPoint::new(x.clone(), f)))
            .collect();
        let (mean, cov) = ctx.gp.joint(&queries)?;
        let scale = cov.diagonal().mean().max(1e-12);
        let (l, _) = cholesky_with_jitter(cov.clone(), 1e-10 * scale)?;

        let n = queries.len();
        let z = DMatrix::from_fn(n, s, |_, _| StandardNormal.sample(rng));
        let eps: Vec<f64> = (0..s).map(|_| StandardNormal.sample(rng)).collect();
        let mut paths = &l * z;
        for mut col in paths.column_iter_mut() {
            col += &mean;
        }

        let mut counts = vec![0u32; m];
        for col in paths.column_iter() {
            counts[argmin(col.rows(0, m).iter().copied())] += 1;
        }
        let prior_entropy = entropy_of_counts(&counts, s);

        let noise = ctx.gp.noise();
        let mut gain = vec![0.0; n];
        let mut updated = vec![0.0; m];
        for q in 0..n {
            let var_y = cov[(q, q)] + noise;
            if var_y <= 1e-14 {
                continue;
            }
            let sd_y = var_y.sqrt();
            let mut expected = 0.0;
            for &(node, weight) in FANTASY_NODES.iter() {
                let y = mean[q] + sd_y * node;
                counts.iter_mut().for_each(|c| *c = 0);
                for (j, col) in paths.column_iter().enumerate() {
                    let shift = (y - col[q] - noise.sqrt() * eps[j]) / var_y;
                    for (i, u) in updated.iter_mut().enumerate() {
                        *u = col[i] + cov[(i, q)] * shift;
                    }
                    counts[argmin(updated.iter().copied())] += 1;
                }
                expected += weight * entropy_of_counts(&counts, s);
            }
            gain[q] = (prior_entropy - expected).max(0.0);
        }
        let sim = gain.split_off(m);
        Ok(AcquisitionScores { sim, real: gain })
    }
}

/// Expected improvement per fidelity, against the best value observed at
/// that fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpectedImprovement;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * core::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = var.max(0.0).sqrt();
    if sd < 1e-12 {
        return (best - mean).max(0.0);
    }
    let z = (best - mean) / sd;
    (best - mean) * normal_cdf(z) + sd * normal_pdf(z)
}

impl Acquisition for ExpectedImprovement {
    fn score(&self, ctx: &AcquisitionContext<'_>, _rng: &mut ChaCha8Rng) -> Result<AcquisitionScores> {
        let mut sim = Vec::with_capacity(ctx.candidates.len());
        let mut real = Vec::with_capacity(ctx.candidates.len());
        for x in ctx.candidates {
            let (ms, vs) = ctx.gp.predict(&AugmentedPoint::new(x.clone(), Fidelity::Sim))?;
            let (mr, vr) = ctx.gp.predict(&AugmentedPoint::new(x.clone(), Fidelity::Real))?;
            let reference = ctx.best_sim.unwrap_or(0.0);
            sim.push(expected_improvement(ms, vs, reference));
            real.push(expected_improvement(mr, vr, ctx.best_real.unwrap_or(reference)));
        }
        Ok(AcquisitionScores { sim, real })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcquisitionKind {
    EntropyProxy(EntropyProxy),
    ExpectedImprovement,
}

impl Default for AcquisitionKind {
    fn default() -> Self {
        AcquisitionKind::EntropyProxy(EntropyProxy::default())
    }
}

impl Acquisition for AcquisitionKind {
    fn score(&self, ctx: &AcquisitionContext<'_>, rng: &mut ChaCha8Rng) -> Result<AcquisitionScores> {
        match self {
            AcquisitionKind::EntropyProxy(a) => a.score(ctx, rng),
            AcquisitionKind::ExpectedImprovement => ExpectedImprovement.score(ctx, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Kernel over the unit cube and standardized log-costs.
    pub kernel: CompositeKernel,
    pub noise: f64,
    pub budget: OptBudget,
    pub acquisition: AcquisitionKind,
    /// Uniform candidates per selection.
    pub candidates: usize,
    /// Extra candidates scattered around the incumbents.
    pub local_candidates: usize,
    /// Random simulation points added after the initial gains.
    pub initial_random: usize,
    pub plane: CostPlane,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kernel: CompositeKernel::default(),
            noise: 1e-4,
            budget: OptBudget::default(),
            acquisition: AcquisitionKind::default(),
            candidates: 48,
            local_candidates: 16,
            initial_random: 4,
            plane: CostPlane::Sagittal,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.budget.validate()?;
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config("GP noise must be non-negative".into()));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidate count must be positive".into()));
        }
        Ok(())
    }
}

fn standardized_targets(records: &[EvalRecord], plane: CostPlane) -> Vec<f64> {
    let logs: Vec<f64> = records.iter().map(|r| r.cost.get(plane).max(1e-12).ln()).collect();
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    logs.iter().map(|v| (v - mean) / sd).collect()
}

fn uniform_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// Chooses the next evaluation.
pub fn select_next(records: &[EvalRecord], cfg: &OptimizerConfig, bounds: &Bounds, state: BudgetState, seed: u64) -> Result<AugmentedPoint> {
    cfg.validate()?;
    if state.exhausted(&cfg.budget) {
        return Err(Error::BudgetExhausted);
    }
    let dim = bounds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if records.is_empty() {
        return Ok(AugmentedPoint::new(bounds.from_unit(&uniform_point(dim, &mut rng)), Fidelity::Sim));
    }
    if records.iter().any(|r| r.point.x.len() != dim) {
        return Err(Error::invalid("record dimension does not match the bounds"));
    }

    let unit: Vec<AugmentedPoint> = records
        .iter()
        .map(|r| AugmentedPoint::new(bounds.to_unit(&r.point.x), r.point.fidelity))
        .collect();
    let targets = standardized_targets(records, cfg.plane);
    let best_of = |f: Fidelity| {
        unit.iter()
            .zip(&targets)
            .filter(|(p, _)| p.fidelity == f)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(p, t)| (p.x.clone(), *t))
    };
    let best_sim = best_of(Fidelity::Sim);
    let best_real = best_of(Fidelity::Real);
    let gp = GaussianProcess::fit(unit, &targets, cfg.kernel, cfg.noise)?;

    let mut candidates: Vec<Vec<f64>> = (0..cfg.candidates).map(|_| uniform_point(dim, &mut rng)).collect();
    let anchors: Vec<&Vec<f64>> = best_real.iter().chain(best_sim.iter()).map(|(x, _)| x).collect();
    for k in 0..cfg.local_candidates {
        let anchor = anchors[k % anchors.len()];
        let local = anchor
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (v + 0.05 * z).clamp(0.0, 1.0)
            })
            .collect();
        candidates.push(local);
    }

    let ctx = AcquisitionContext {
        gp: &gp,
        candidates: &candidates,
        best_sim: best_sim.as_ref().map(|b| b.1),
        best_real: best_real.as_ref().map(|b| b.1),
    };
    let scores = cfg.acquisition.score(&ctx, &mut rng)?;
    let pick = |v: &[f64]| {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, s) in v.iter().enumerate() {
            if *s > best.1 {
                best = (i, *s);
            }
        }
        best
    };
    let (sim_idx, sim_score) = pick(&scores.sim);
    let (real_idx, real_score) = pick(&scores.real);
    let w = cfg.budget.sim_bias_weight;
    let go_real = state.real_left(&cfg.budget) && state.real_paced(&cfg.budget) && w.is_finite() && real_score > 0.0 && real_score > w * sim_score;
    Ok(if go_real {
        AugmentedPoint::new(bounds.from_unit(&candidates[real_idx]), Fidelity::Real)
    } else {
        AugmentedPoint::new(bounds.from_unit(&candidates[sim_idx]), Fidelity::Sim)
    })
}

/// One seeded evaluation request.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalJob {
    pub x: Vec<f64>,
    pub fidelity: Fidelity,
    pub seed: u64,
}

/// Cost of a gain vector on either plant.
pub trait Objective {
    fn evaluate(&self, x: &[f64], fidelity: Fidelity, seed: u64) -> Result<CostPair>;

    /// Evaluates independent jobs; implementations may run them in parallel
    /// as long as results come back in job order.
    fn evaluate_batch(&self, jobs: &[EvalJob]) -> Result<Vec<CostPair>> {
        jobs.iter().map(|j| self.evaluate(&j.x, j.fidelity, j.seed)).collect()
    }
}

/// A single scalar gain that the optimizer may tune.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainParam {
    ArmAngleXP,
    ArmAngleXD,
    ArmAngleYP,
    ArmAngleYD,
    SuppFootAngleXP,
    SuppFootAngleXD,
    ContFootAngleXI,
    ComShiftXI,
    ComShiftYI,
    TimingSpeedUp,
    TimingSlowDown,
}

impl GainParam {
    pub const ALL: [GainParam; 11] = [
        GainParam::ArmAngleXP,
        GainParam::ArmAngleXD,
        GainParam::ArmAngleYP,
        GainParam::ArmAngleYD,
        GainParam::SuppFootAngleXP,
        GainParam::SuppFootAngleXD,
        GainParam::ContFootAngleXI,
        GainParam::ComShiftXI,
        GainParam::ComShiftYI,
        GainParam::TimingSpeedUp,
        GainParam::TimingSlowDown,
    ];

    /// Dotted key as used in gain files.
    pub fn key(self) -> &'static str {
        match self {
            GainParam::ArmAngleXP => "arm_angle_x.p",
            GainParam::ArmAngleXD => "arm_angle_x.d",
            GainParam::ArmAngleYP => "arm_angle_y.p",
            GainParam::ArmAngleYD => "arm_angle_y.d",
            GainParam::SuppFootAngleXP => "supp_foot_angle_x.p",
            GainParam::SuppFootAngleXD => "supp_foot_angle_x.d",
            GainParam::ContFootAngleXI => "cont_foot_angle_x.i",
            GainParam::ComShiftXI => "com_shift_x.i",
            GainParam::ComShiftYI => "com_shift_y.i",
            GainParam::TimingSpeedUp => "timing.speed_up",
            GainParam::TimingSlowDown => "timing.slow_down",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        GainParam::ALL.into_iter().find(|g| g.key() == key)
    }

    pub fn value_mut(self, g: &mut FeedbackGains) -> &mut f64 {
        match self {
            GainParam::ArmAngleXP => &mut g.arm_angle_x.p,
            GainParam::ArmAngleXD => &mut g.arm_angle_x.d,
            GainParam::ArmAngleYP => &mut g.arm_angle_y.p,
            GainParam::ArmAngleYD => &mut g.arm_angle_y.d,
            GainParam::SuppFootAngleXP => &mut g.supp_foot_angle_x.p,
            GainParam::SuppFootAngleXD => &mut g.supp_foot_angle_x.d,
            GainParam::ContFootAngleXI => &mut g.cont_foot_angle_x.i,
            GainParam::ComShiftXI => &mut g.com_shift_x.i,
            GainParam::ComShiftYI => &mut g.com_shift_y.i,
            GainParam::TimingSpeedUp => &mut g.timing_speed_up,
            GainParam::TimingSlowDown => &mut g.timing_slow_down,
        }
    }

    pub fn get(self, g: &FeedbackGains) -> f64 {
        let mut copy = *g;
        *self.value_mut(&mut copy)
    }

    pub fn set(self, g: &mut FeedbackGains, value: f64) {
        *self.value_mut(g) = value;
    }
}

/// Closed-loop cost of the gains on a simulation/real plant pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GainObjective {
    pub base_gains: FeedbackGains,
    pub params: Vec<GainParam>,
    pub cpg: CpgParams,
    pub sequence: Vec<Segment>,
    pub sim_plant: PlantParams,
    pub real_plant: PlantParams,
    pub cost: CostConfig,
}

impl GainObjective {
    /// Sagittal arm-angle P and D on the standard test sequence, starting
    /// from the hand-tuned gains.
    pub fn sagittal_arm(sim_plant: PlantParams, gap: &RealityGap) -> Self {
        GainObjective {
            base_gains: FeedbackGains::tuned_default(),
            params: vec![GainParam::ArmAngleYP, GainParam::ArmAngleYD],
            cpg: CpgParams::default(),
            sequence: standard_test_sequence(),
            sim_plant,
            real_plant: make_real_plant(&sim_plant, gap),
            cost: CostConfig::default(),
        }
    }

    /// Box used with [`GainObjective::sagittal_arm`].
    pub fn sagittal_arm_bounds() -> Bounds {
        Bounds {
            lower: vec![0.0, 0.0],
            upper: vec![5.0, 1.0],
        }
    }

    pub fn gains(&self, x: &[f64]) -> Result<FeedbackGains> {
        if x.len() != self.params.len() {
            return Err(Error::invalid("gain vector length does not match the tuned parameters"));
        }
        let mut g = self.base_gains;
        for (p, v) in self.params.iter().zip(x) {
            p.set(&mut g, *v);
        }
        Ok(g)
    }

    pub fn initial_x(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.get(&self.base_gains)).collect()
    }
}

impl Objective for GainObjective {
    fn evaluate(&self, x: &[f64], fidelity: Fidelity, seed: u64) -> Result<CostPair> {
        let gains = self.gains(x)?;
        let base = match fidelity {
            Fidelity::Sim => &self.sim_plant,
            Fidelity::Real => &self.real_plant,
        };
        let plant = PlantParams {
            seed: base.seed.wrapping_add(seed),
            ..*base
        };
        let trace = run_sequence(&gains, &self.cpg, &self.sequence, &plant)?;
        evaluate_cost(&trace, &self.cost, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    /// Best real record if any real evaluation happened, else best sim.
    pub best: EvalRecord,
    pub history: Vec<EvalRecord>,
}

impl OptimizationResult {
    pub fn real_count(&self) -> usize {
        BudgetState::of(&self.history).real
    }
}

fn best_record(history: &[EvalRecord], plane: CostPlane) -> Option<EvalRecord> {
    let pick = |f: Fidelity| {
        history
            .iter()
            .filter(|r| r.point.fidelity == f)
            .min_by(|a, b| a.cost.get(plane).total_cmp(&b.cost.get(plane)))
    };
    pick(Fidelity::Real).or_else(|| pick(Fidelity::Sim)).cloned()
}

fn record<O: Objective + ?Sized>(objective: &O, point: AugmentedPoint, budget: &OptBudget, rng: &mut ChaCha8Rng) -> Result<EvalRecord> {
    let runs = match point.fidelity {
        Fidelity::Sim => budget.sim_average_n,
        Fidelity::Real => 1,
    };
    let jobs: Vec<EvalJob> = (0..runs)
        .map(|_| EvalJob {
            x: point.x.clone(),
            fidelity: point.fidelity,
            seed: rng.random(),
        })
        .collect();
    let costs = objective.evaluate_batch(&jobs)?;
    let n = costs.len() as f64;
    let cost = CostPair {
        alpha: costs.iter().map(|c| c.alpha).sum::<f64>() / n,
        beta: costs.iter().map(|c| c.beta).sum::<f64>() / n,
    };
    Ok(EvalRecord { point, cost, runs })
}

/// Bayesian optimization starting from `x_init`, which is evaluated first
/// in simulation and, if the real budget allows, on the real plant.
pub fn optimize<O: Objective + ?Sized>(objective: &O, cfg: &OptimizerConfig, bounds: &Bounds, x_init: &[f64], seed: u64) -> Result<OptimizationResult> {
    cfg.validate()?;
    if !bounds.contains(x_init) {
        return Err(Error::invalid("initial gains lie outside the bounds"));
    }
    let budget = &cfg.budget;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history: Vec<EvalRecord> = Vec::new();

    let mut initial = vec![AugmentedPoint::new(x_init.to_vec(), Fidelity::Sim)];
    if budget.max_real > 0 {
        initial.push(AugmentedPoint::new(x_init.to_vec(), Fidelity::Real));
    }
    for _ in 0..cfg.initial_random {
        initial.push(AugmentedPoint::new(bounds.from_unit(&uniform_point(bounds.dim(), &mut rng)), Fidelity::Sim));
    }
    for point in initial {
        if BudgetState::of(&history).exhausted(budget) {
            break;
        }
        history.push(record(objective, point, budget, &mut rng)?);
    }

    loop {
        let state = BudgetState::of(&history);
        if state.exhausted(budget) {
            break;
        }
        let point = select_next(&history, cfg, bounds, state, rng.random())?;
        history.push(record(objective, point, budget, &mut rng)?);
    }

    let best = recommend(&history, cfg, bounds)?;
    Ok(OptimizationResult { best, history })
}

/// The evaluated record of the preferred fidelity with the lowest posterior
/// mean, which discounts single lucky evaluations.
fn recommend(history: &[EvalRecord], cfg: &OptimizerConfig, bounds: &Bounds) -> Result<EvalRecord> {
    let fidelity = if history.iter().any(|r| r.point.fidelity == Fidelity::Real) {
        Fidelity::Real
    } else {
        Fidelity::Sim
    };
    let unit: Vec<AugmentedPoint> = history
        .iter()
        .map(|r| AugmentedPoint::new(bounds.to_unit(&r.point.x), r.point.fidelity))
        .collect();
    let gp = GaussianProcess::fit(unit.clone(), &standardized_targets(history, cfg.plane), cfg.kernel, cfg.noise)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in unit.iter().enumerate().filter(|(_, p)| p.fidelity == fidelity) {
        let (mean, _) = gp.predict(p)?;
        if best.is_none_or(|b| mean < b.1) {
            best = Some((i, mean));
        }
    }
    best.map(|(i, _)| history[i].clone()).ok_or(Error::BudgetExhausted)
}

/// Baseline with the same evaluation split: uniformly random gains are
/// simulated, and the best of them are then tried on the real plant.
pub fn random_search<O: Objective + ?Sized>(objective: &O, cfg: &OptimizerConfig, bounds: &Bounds, x_init: &[f64], seed: u64) -> Result<OptimizationResult> {
    cfg.validate()?;
    let budget = &cfg.budget;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim_count = budget.max_total - budget.max_real;
    let mut history = Vec::with_capacity(budget.max_total);
    for k in 0..sim_count {
        let x = if k == 0 {
            x_init.to_vec()
        } else {
            bounds.from_unit(&uniform_point(bounds.dim(), &mut rng))
        };
        history.push(record(objective, AugmentedPoint::new(x, Fidelity::Sim), budget, &mut rng)?);
    }
    let mut ranked: Vec<&EvalRecord> = history.iter().collect();
    ranked.sort_by(|a, b| a.cost.get(cfg.plane).total_cmp(&b.cost.get(cfg.plane)));
    let finalists: Vec<Vec<f64>> = ranked.iter().take(budget.max_real).map(|r| r.point.x.clone()).collect();
    for x in finalists {
        history.push(record(objective, AugmentedPoint::new(x, Fidelity::Real), budget, &mut rng)?);
    }
    let best = best_record(&history, cfg.plane).ok_or(Error::BudgetExhausted)?;
    Ok(OptimizationResult { best, history })
}

/// Names of the history CSV columns for `dim` gains.
pub fn history_header(params: &[GainParam]) -> String {
    let mut h = String::from("iter,delta");
    for p in params {
        h.push(',');
        h.push_str(p.key());
    }
    h.push_str(",J_alpha,J_beta");
    h
}
