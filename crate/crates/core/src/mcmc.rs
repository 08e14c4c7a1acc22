//! Gibbs / Metropolis-within-Gibbs sampler for the full model.
//!
//! One sweep runs, in order: latent paths (beam, per-family blocked
//! updates, initial state), auxiliary table counts, DP scaling parameters,
//! base weights, sticky fraction, total concentration, transition rows,
//! atoms, and finally missing locations with the auxiliary start points.
//!
//! Table counts and hyperparameters are drawn with the transition rows
//! integrated out, so rows are redrawn from their full conditional right
//! after; the next sweep's path update sees rows consistent with the
//! current weights and counts.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::base_measure::{
    mat2, BaseMeasure, BaseMeasureMode, CompositeLabel, Family, LabelOrder, LabelSpace, PriorConfig, StickWeights,
};
use crate::error::{Error, Result};
use crate::hmm::{
    beam_sample_path, count_nonempty, count_transitions, split_update_path, truncated_geometric_ln_pmf,
    update_initial_state, EmissionCache, LatentPath, RowPrior, RowSet, Trajectory, TransitionCounts,
};
use crate::random::{self, stream, ChainRng};
use crate::stap::{bearing_angle, rotation_matrix, stap_logpdf, BearingAngle, Location, StapParams};

// stream purposes
const PATHS: u64 = 1;
const TABLES: u64 = 2;
const HYPER: u64 = 3;
const ROWS: u64 = 4;
const ATOMS: u64 = 5;
const MISSING: u64 = 6;
const INIT: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rho_scale")]
    pub rho_proposal_scale: f64,
    #[serde(default)]
    pub mode: BaseMeasureMode,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub init: InitConfig,
}

fn default_rho_scale() -> f64 {
    0.1
}

/// Starting values of the hyperparameters and of the paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub gamma: f64,
    pub concentration: f64,
    pub sticky_fraction: f64,
    /// Number of step-feature clusters giving the initial paths.
    pub clusters: usize,
    /// Half-width of the moving average applied to the step features.
    pub smoothing: usize,
    /// Atom-only sweeps run on the initial paths before the chain starts.
    pub atom_warmup: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { gamma: 1.0, concentration: 10.0, sticky_fraction: 0.5, clusters: 4, smoothing: 5, atom_warmup: 10 }
    }
}

impl McmcConfig {
    pub fn new(iterations: usize, burnin: usize, thin: usize) -> Self {
        McmcConfig {
            iterations,
            burnin,
            thin,
            seed: 0,
            rho_proposal_scale: 0.1,
            mode: BaseMeasureMode::Factorized,
            threads: None,
            init: InitConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burnin >= self.iterations {
            return Err(Error::Config("mcmc.burnin must be smaller than mcmc.iterations".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("mcmc.thin must be at least 1".into()));
        }
        if !(self.rho_proposal_scale > 0.0) {
            return Err(Error::Config("mcmc.rho_proposal_scale must be positive".into()));
        }
        let i = &self.init;
        if !(i.gamma > 0.0 && i.concentration > 0.0 && (0.0..=1.0).contains(&i.sticky_fraction) && i.clusters > 0) {
            return Err(Error::Config("mcmc.init values out of range".into()));
        }
        Ok(())
    }

    /// Number of draws kept after burn-in and thinning.
    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burnin) / self.thin
    }

    pub fn keeps(&self, sweep: usize) -> bool {
        sweep > self.burnin && (sweep - self.burnin).is_multiple_of(self.thin)
    }
}

/// DP scaling parameters plus the transition concentration.
///
/// `gamma` holds one value per weight vector: five in the factorized mode,
/// one for the shared-vector mode, one per animal in the independent mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub gamma: Vec<f64>,
    /// alpha + nu
    pub concentration: f64,
    /// nu / (alpha + nu)
    pub sticky_fraction: f64,
}

impl HyperState {
    pub fn alpha(&self) -> f64 {
        self.concentration * (1.0 - self.sticky_fraction)
    }

    pub fn nu(&self) -> f64 {
        self.concentration * self.sticky_fraction
    }
}

/// Table counts of the transition restaurants, with the sticky overrides
/// removed and tallied per weight vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuxiliaryVars {
    /// `b[j][(l, k)]`
    pub tables: Vec<FxHashMap<(CompositeLabel, CompositeLabel), u64>>,
    /// `w[j][l]`
    pub overrides: Vec<FxHashMap<CompositeLabel, u64>>,
    /// `b_bar` summed per atom, one vector per weight vector.
    pub tallies: Vec<Vec<u64>>,
    pub total_tables: u64,
    pub total_overrides: u64,
}

/// Weight vectors of a base measure in a fixed flat order.
pub fn weight_vectors(base: &BaseMeasure) -> Vec<&Vec<f64>> {
    base.groups.iter().flat_map(|g| g.weights.vectors()).collect()
}

fn vector_slots(base: &BaseMeasure, group: usize) -> (usize, usize) {
    match base.mode {
        BaseMeasureMode::Factorized => (0, 5),
        BaseMeasureMode::SharedVector => (0, 1),
        BaseMeasureMode::Independent => (group, 1),
    }
}

/// Draw table counts `b_{jlk}` (number of occupied tables among `n_{jlk}`
/// customers at concentration `alpha beta_k + nu [l = k]`) and the sticky
/// overrides `w_{jl} ~ Bin(b_{jll}, nu / (nu + alpha beta_l))`.
pub fn sample_aux_tables<R: Rng + ?Sized>(
    counts: &[TransitionCounts],
    base: &BaseMeasure,
    hyper: &HyperState,
    rng: &mut R,
) -> AuxiliaryVars {
    let (alpha, nu) = (hyper.alpha(), hyper.nu());
    let n_vectors = weight_vectors(base).len();
    let l_trunc = base.truncation;
    let mut aux = AuxiliaryVars {
        tables: Vec::with_capacity(counts.len()),
        overrides: Vec::with_capacity(counts.len()),
        tallies: vec![vec![0; l_trunc]; n_vectors],
        ..Default::default()
    };
    for (j, c) in counts.iter().enumerate() {
        let g = base.group_of(j);
        let group = &base.groups[g];
        let (first, width) = vector_slots(base, g);
        let mut tables = FxHashMap::default();
        let mut overrides = FxHashMap::default();
        for (l, k, n) in c.iter() {
            let beta_k = group.composite_weight(k);
            let is_self = l == k;
            let conc = alpha * beta_k + if is_self { nu } else { 0.0 };
            let b = random::crp_tables(n as u64, conc, rng);
            let mut b_bar = b;
            if is_self && b > 0 {
                let p = if nu + alpha * beta_k > 0.0 { nu / (nu + alpha * beta_k) } else { 0.0 };
                let w = random::binomial(b, p, rng);
                overrides.insert(*l, w);
                aux.total_overrides += w;
                b_bar -= w;
            }
            aux.total_tables += b;
            tables.insert((*l, *k), b);
            if b_bar > 0 {
                for v in 0..width {
                    aux.tallies[first + v][k.0[v] as usize] += b_bar;
                }
            }
        }
        aux.tables.push(tables);
        aux.overrides.push(overrides);
    }
    aux
}

/// Dirichlet parameters `gamma / L + b_bar` of one weight vector's full
/// conditional.
pub fn beta_full_conditional(tally: &[u64], gamma: f64) -> Vec<f64> {
    let l = tally.len() as f64;
    tally.iter().map(|&b| gamma / l + b as f64).collect()
}

pub fn sample_beta_vector<R: Rng + ?Sized>(tally: &[u64], gamma: f64, rng: &mut R) -> Vec<f64> {
    random::dirichlet(&beta_full_conditional(tally, gamma), rng)
}

/// Full-conditional draw of every weight vector.
pub fn sample_beta_vectors<R: Rng + ?Sized>(aux: &AuxiliaryVars, hyper: &HyperState, rng: &mut R) -> Vec<Vec<f64>> {
    aux.tallies.iter().zip(&hyper.gamma).map(|(t, &g)| sample_beta_vector(t, g, rng)).collect()
}

/// Probability of the `shape + k` component in the two-part Gamma mixture
/// for a DP scaling parameter: the odds `(a + k - 1) / (n (b - ln xi))`
/// turned into a probability.
pub fn gamma_mixture_weight(shape: f64, k: f64, rate_post: f64, n: f64) -> f64 {
    let odds = (shape + k - 1.0) / (n * rate_post);
    if odds.is_infinite() {
        1.0
    } else {
        odds / (1.0 + odds)
    }
}

/// Update of a DP scaling parameter given `k` tables among `n` customers.
pub fn sample_gamma<R: Rng + ?Sized>(current: f64, k: u64, n: u64, shape: f64, rate: f64, rng: &mut R) -> f64 {
    if n == 0 {
        return random::gamma(shape, rate, rng).max(f64::MIN_POSITIVE);
    }
    let xi = random::beta(current + 1.0, n as f64, rng).max(f64::MIN_POSITIVE);
    let rate_post = rate - xi.ln();
    let pi = gamma_mixture_weight(shape, k as f64, rate_post, n as f64);
    let s = if random::bernoulli(pi, rng) { shape + k as f64 } else { shape + k as f64 - 1.0 };
    random::gamma(s.max(0.0), rate_post, rng).max(f64::MIN_POSITIVE)
}

/// Table count for the finite Dirichlet(gamma / L) prior given per-atom
/// tallies: the number of occupied tables when each atom's customers are
/// seated with concentration `gamma / L`.
pub fn effective_tables<R: Rng + ?Sized>(tally: &[u64], gamma: f64, rng: &mut R) -> u64 {
    let c = gamma / tally.len() as f64;
    tally.iter().map(|&b| random::crp_tables(b, c, rng)).sum()
}

/// `nu / (alpha + nu) ~ Beta(a + sum w, b + sum b - sum w)`.
pub fn sticky_full_conditional(total_overrides: u64, total_tables: u64, a: f64, b: f64) -> (f64, f64) {
    let w = total_overrides as f64;
    (a + w, b + total_tables as f64 - w)
}

pub fn sample_sticky_fraction<R: Rng + ?Sized>(total_overrides: u64, total_tables: u64, a: f64, b: f64, rng: &mut R) -> f64 {
    let (pa, pb) = sticky_full_conditional(total_overrides, total_tables, a, b);
    random::beta(pa, pb, rng)
}

/// `alpha + nu` given the row totals of every occupied row and the total
/// number of tables.
pub fn sample_concentration_total<R: Rng + ?Sized>(
    current: f64,
    row_totals: &[u64],
    total_tables: u64,
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> f64 {
    let mut sum_log_r1 = 0.0;
    let mut sum_r2 = 0u64;
    for &n in row_totals.iter().filter(|&&n| n > 0) {
        let r1 = random::beta(current + 1.0, n as f64, rng).max(f64::MIN_POSITIVE);
        sum_log_r1 += r1.ln();
        if random::bernoulli(n as f64 / (n as f64 + current), rng) {
            sum_r2 += 1;
        }
    }
    let s = shape + total_tables as f64 - sum_r2 as f64;
    random::gamma(s.max(0.0), rate - sum_log_r1, rng).max(f64::MIN_POSITIVE)
}

/// One emission `x | s, phi` together with the current parameters of the
/// behavior that generated it.
#[derive(Debug, Clone)]
pub struct AssignedEmission {
    pub x: Location,
    pub s: Location,
    pub phi: f64,
    pub theta: StapParams,
}

impl AssignedEmission {
    /// Precision of the emission noise, `R(rho phi) Sigma^-1 R(rho phi)'`.
    fn precision(&self) -> Matrix2<f64> {
        let r = rotation_matrix(self.theta.rho * self.phi);
        let si = self.theta.sigma.try_inverse().expect("SPD covariance");
        r * si * r.transpose()
    }
}

/// Bivariate normal full conditional `N(mean, cov)` of a mu atom.
pub fn mu_full_conditional(prior: &PriorConfig, assigned: &[AssignedEmission]) -> (Vector2<f64>, Matrix2<f64>) {
    let w0i = mat2(&prior.mu_cov).try_inverse().expect("SPD prior");
    let mut prec = w0i;
    let mut lin = w0i * prior.mu_mean_v();
    for e in assigned {
        let th = &e.theta;
        let c = (1.0 - th.rho) * th.tau;
        if c == 0.0 {
            continue;
        }
        let p = e.precision();
        let d = e.x - e.s + c * e.s - th.rho * rotation_matrix(e.phi) * th.eta;
        prec += c * c * p;
        lin += c * p * d;
    }
    let cov = symmetric_inverse(&prec);
    (cov * lin, cov)
}

/// Bivariate normal full conditional of an eta atom.
pub fn eta_full_conditional(prior: &PriorConfig, assigned: &[AssignedEmission]) -> (Vector2<f64>, Matrix2<f64>) {
    let w0i = mat2(&prior.eta_cov).try_inverse().expect("SPD prior");
    let mut prec = w0i;
    let mut lin = w0i * prior.eta_mean_v();
    for e in assigned {
        let th = &e.theta;
        if th.rho == 0.0 {
            continue;
        }
        let p = e.precision();
        let a = th.rho * rotation_matrix(e.phi);
        let d = e.x - e.s - (1.0 - th.rho) * th.tau * (th.mu - e.s);
        prec += a.transpose() * p * a;
        lin += a.transpose() * p * d;
    }
    let cov = symmetric_inverse(&prec);
    (cov * lin, cov)
}

/// Untruncated normal `(mean, variance)` of a tau atom, or `None` when no
/// assigned emission carries information about it.
pub fn tau_full_conditional(assigned: &[AssignedEmission]) -> Option<(f64, f64)> {
    let mut prec = 0.0;
    let mut lin = 0.0;
    for e in assigned {
        let th = &e.theta;
        let g = (1.0 - th.rho) * (th.mu - e.s);
        if g == Vector2::zeros() {
            continue;
        }
        let p = e.precision();
        let d = e.x - e.s - th.rho * rotation_matrix(e.phi) * th.eta;
        prec += g.dot(&(p * g));
        lin += g.dot(&(p * d));
    }
    (prec > 0.0).then(|| (lin / prec, 1.0 / prec))
}

/// Inverse-Wishart `(df, scale)` full conditional of a sigma atom.
pub fn sigma_full_conditional(prior: &PriorConfig, assigned: &[AssignedEmission]) -> (f64, Matrix2<f64>) {
    let mut scale = mat2(&prior.sigma_scale);
    for e in assigned {
        let th = &e.theta;
        let r = rotation_matrix(th.rho * e.phi);
        let mean = e.s + (1.0 - th.rho) * th.tau * (th.mu - e.s) + th.rho * rotation_matrix(e.phi) * th.eta;
        let res = r.transpose() * (e.x - mean);
        scale += res * res.transpose();
    }
    (prior.sigma_df + assigned.len() as f64, scale)
}

fn symmetric_inverse(m: &Matrix2<f64>) -> Matrix2<f64> {
    let inv = m.try_inverse().expect("positive definite precision");
    (inv + inv.transpose()) * 0.5
}

pub fn sample_mu_atom<R: Rng + ?Sized>(prior: &PriorConfig, assigned: &[AssignedEmission], rng: &mut R) -> Location {
    if assigned.is_empty() {
        return prior.draw_mu(rng);
    }
    let (m, c) = mu_full_conditional(prior, assigned);
    random::mvn2(&m, &c, rng)
}

pub fn sample_eta_atom<R: Rng + ?Sized>(prior: &PriorConfig, assigned: &[AssignedEmission], rng: &mut R) -> Vector2<f64> {
    if assigned.is_empty() {
        return prior.draw_eta(rng);
    }
    let (m, c) = eta_full_conditional(prior, assigned);
    random::mvn2(&m, &c, rng)
}

pub fn sample_tau_atom<R: Rng + ?Sized>(prior: &PriorConfig, assigned: &[AssignedEmission], rng: &mut R) -> f64 {
    match tau_full_conditional(assigned) {
        None => prior.draw_tau(rng),
        Some((m, v)) => {
            let [lo, hi] = prior.tau_bounds;
            random::truncated_normal(m, v.sqrt(), lo.max(0.0), hi.min(1.0), rng)
        }
    }
}

pub fn sample_sigma_atom<R: Rng + ?Sized>(prior: &PriorConfig, assigned: &[AssignedEmission], rng: &mut R) -> Matrix2<f64> {
    let (df, scale) = sigma_full_conditional(prior, assigned);
    random::inverse_wishart2(df, &scale, rng)
}

fn rho_log_likelihood(rho: f64, assigned: &[AssignedEmission]) -> f64 {
    assigned
        .iter()
        .map(|e| {
            let th = StapParams { rho, ..e.theta.clone() };
            crate::hmm::EmissionParams::new(&th).log_density(&e.x, &e.s, e.phi)
        })
        .sum()
}

/// Density of the reflected Gaussian random walk on (0, 1).
fn reflected_density(to: f64, from: f64, scale: f64) -> f64 {
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = 0.0;
    for n in -4..=4 {
        let shift = 2.0 * n as f64;
        s += phi((to + shift - from) / scale) + phi((-to + shift - from) / scale);
    }
    s / scale
}

fn reflect01(mut x: f64) -> f64 {
    x = x.rem_euclid(2.0);
    if x > 1.0 {
        2.0 - x
    } else {
        x
    }
}

/// Proposal density of the rho move, with respect to point masses at 0 and
/// 1 plus Lebesgue measure on (0, 1).
pub fn rho_proposal_density(to: f64, from: f64, scale: f64) -> f64 {
    if to == 0.0 || to == 1.0 {
        0.2
    } else {
        0.6 * reflected_density(to, from, scale)
    }
}

pub fn propose_rho<R: Rng + ?Sized>(from: f64, scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if u < 0.2 {
        0.0
    } else if u < 0.4 {
        1.0
    } else {
        loop {
            let x = reflect01(from + scale * random::std_normal(rng));
            if x > 0.0 && x < 1.0 {
                return x;
            }
        }
    }
}

/// Log acceptance ratio of moving rho from `from` to `to`.
pub fn rho_log_acceptance(from: f64, to: f64, prior: &PriorConfig, assigned: &[AssignedEmission], scale: f64) -> f64 {
    if from == to {
        return 0.0;
    }
    prior.rho_log_prior(to) + rho_log_likelihood(to, assigned) + rho_proposal_density(from, to, scale).ln()
        - prior.rho_log_prior(from)
        - rho_log_likelihood(from, assigned)
        - rho_proposal_density(to, from, scale).ln()
}

/// Metropolis-Hastings update of a rho atom.
pub fn sample_rho_atom<R: Rng + ?Sized>(
    current: f64,
    prior: &PriorConfig,
    assigned: &[AssignedEmission],
    scale: f64,
    rng: &mut R,
) -> f64 {
    let prop = propose_rho(current, scale, rng);
    let lr = rho_log_acceptance(current, prop, prior, assigned, scale);
    if random::open01(rng).ln() < lr {
        prop
    } else {
        current
    }
}

/// Bearing used by emission `e` (into location `e - 1`), recomputed from
/// the current locations with the same zero-displacement fallback as
/// [`Trajectory::bearings`].
fn local_bearing(traj: &Trajectory, e: usize) -> f64 {
    let mut i = e;
    while i >= 1 {
        if let Ok(b) = bearing_angle(traj.previous(i - 1), &traj.locations[i - 1]) {
            return b.value();
        }
        i -= 1;
    }
    BearingAngle::default().value()
}

/// Sum of the emission log densities that involve location `q`.
pub fn location_log_target(traj: &Trajectory, q: usize, path: &LatentPath, cache: &mut EmissionCache) -> f64 {
    let last = (q + 2).min(traj.len() - 1);
    (q.max(1)..=last)
        .map(|e| {
            let phi = local_bearing(traj, e);
            cache.params(&path.states[e]).log_density(&traj.locations[e], &traj.locations[e - 1], phi)
        })
        .sum()
}

/// Random-walk Metropolis update of a missing location.
pub fn sample_missing_location<R: Rng + ?Sized>(
    traj: &mut Trajectory,
    q: usize,
    path: &LatentPath,
    cache: &mut EmissionCache,
    scale: f64,
    rng: &mut R,
) -> Location {
    let current = traj.locations[q];
    let before = location_log_target(traj, q, path, cache);
    let prop = current + scale * Vector2::new(random::std_normal(rng), random::std_normal(rng));
    traj.locations[q] = prop;
    let after = location_log_target(traj, q, path, cache);
    if !(random::open01(rng).ln() < after - before) {
        traj.locations[q] = current;
    }
    traj.locations[q]
}

fn s0_log_target(traj: &Trajectory, path: &LatentPath, cache: &mut EmissionCache) -> f64 {
    let phi = local_bearing(traj, 1);
    cache.params(&path.states[1]).log_density(&traj.locations[1], &traj.locations[0], phi)
}

/// Update of the auxiliary start point, uniform on the domain a priori: one
/// independence move from the prior and one random-walk move.
pub fn sample_s0<R: Rng + ?Sized>(
    traj: &mut Trajectory,
    path: &LatentPath,
    cache: &mut EmissionCache,
    prior: &PriorConfig,
    scale: f64,
    rng: &mut R,
) -> Location {
    for step in 0..2 {
        let current = traj.s0;
        let before = s0_log_target(traj, path, cache);
        let prop = if step == 0 {
            prior.domain.sample(rng)
        } else {
            current + scale * Vector2::new(random::std_normal(rng), random::std_normal(rng))
        };
        if !prior.domain.contains(&prop) {
            continue;
        }
        traj.s0 = prop;
        let after = s0_log_target(traj, path, cache);
        if !(random::open01(rng).ln() < after - before) {
            traj.s0 = current;
        }
    }
    traj.s0
}

/// A behavior present in one stored draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub id: u32,
    pub group: usize,
    pub label: CompositeLabel,
    pub weight: f64,
    pub theta: StapParams,
}

/// Compact record of one retained sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub sweep: usize,
    pub hyper: HyperState,
    /// Every label present in any path (including initial states).
    pub behaviors: Vec<Behavior>,
    /// Global behavior ids per animal, all `T` states.
    pub paths: Vec<Vec<u32>>,
    /// Sampled probability of every occupied transition, `(from, to, pi)`.
    pub transitions: Vec<Vec<(u32, u32, f64)>>,
    /// Imputed values of the missing locations, `(index, point)`.
    pub imputed: Vec<Vec<(usize, [f64; 2])>>,
    pub s0: Vec<[f64; 2]>,
    /// Number of distinct emitting behaviors per animal.
    pub k: Vec<usize>,
    /// Emission log-likelihood.
    pub loglik: f64,
    /// Emission plus transition plus initial-state log density.
    pub complete_loglik: f64,
}

impl Draw {
    pub fn behavior(&self, id: u32) -> Option<&Behavior> {
        self.behaviors.iter().find(|b| b.id == id)
    }

    pub fn behavior_map(&self) -> FxHashMap<u32, &Behavior> {
        self.behaviors.iter().map(|b| (b.id, b)).collect()
    }
}

/// Output of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub mode: BaseMeasureMode,
    pub animals: Vec<String>,
    /// Global behavior id -> (group, label).
    pub labels: Vec<(usize, CompositeLabel)>,
    pub draws: Vec<Draw>,
}

/// Everything the sampler updates.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub base: BaseMeasure,
    pub orders: Vec<LabelOrder>,
    pub rows: Vec<RowSet>,
    pub paths: Vec<LatentPath>,
    pub hyper: HyperState,
    pub aux: AuxiliaryVars,
    /// Trajectories holding the current imputations and start points.
    pub data: Vec<Trajectory>,
}

impl ChainState {
    pub fn counts(&self) -> Vec<TransitionCounts> {
        self.paths.iter().map(count_transitions).collect()
    }
}

/// A running chain.
pub struct Sampler {
    pub prior: PriorConfig,
    pub cfg: McmcConfig,
    pub state: ChainState,
    pub space: LabelSpace,
    pub sweep: usize,
    registry: FxHashMap<(usize, CompositeLabel), u32>,
    labels: Vec<(usize, CompositeLabel)>,
}

impl Sampler {
    pub fn new(data: Vec<Trajectory>, prior: PriorConfig, cfg: McmcConfig) -> Result<Self> {
        prior.validate()?;
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::TooFew { what: "animals", needed: 1, got: 0 });
        }
        if cfg.mode == BaseMeasureMode::Independent && data.len() > u16::MAX as usize {
            return Err(Error::Config("too many animals".into()));
        }
        let space = LabelSpace { mode: cfg.mode, truncation: prior.truncation, animals: data.len() };
        let mut rng = stream(cfg.seed, &[INIT]);
        let n_gamma = match cfg.mode {
            BaseMeasureMode::Factorized => 5,
            BaseMeasureMode::SharedVector => 1,
            BaseMeasureMode::Independent => data.len(),
        };
        let hyper = HyperState {
            gamma: vec![cfg.init.gamma; n_gamma],
            concentration: cfg.init.concentration,
            sticky_fraction: cfg.init.sticky_fraction,
        };
        let base = BaseMeasure::draw(&space, &prior, &hyper.gamma, &mut rng);
        let mut data = data;
        for traj in &mut data {
            impute_linear(traj);
            if !prior.domain.contains(&traj.s0) {
                traj.s0 = prior.domain.sample(&mut rng);
            }
        }
        let clusters = feature_clusters(&data, cfg.init.clusters, cfg.init.smoothing, &mut rng);
        let paths = initial_paths(&clusters, &base, &mut rng);
        let orders = base.groups.iter().map(|g| LabelOrder::new(&g.weights)).collect();
        let state = ChainState { base, orders, rows: Vec::new(), paths, hyper, aux: AuxiliaryVars::default(), data };
        let mut sampler = Sampler { prior, cfg, state, space, sweep: 0, registry: FxHashMap::default(), labels: Vec::new() };
        for w in 0..sampler.cfg.init.atom_warmup {
            let mut r = stream(sampler.cfg.seed, &[INIT, 1, w as u64]);
            sampler.update_atoms(&mut r)?;
        }
        sampler.resample_rows(0);
        Ok(sampler)
    }

    fn pool(&self) -> Option<rayon::ThreadPool> {
        self.cfg
            .threads
            .map(|n| rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("thread pool"))
    }

    /// One full sweep.
    pub fn step(&mut self) -> Result<()> {
        self.sweep += 1;
        let s = self.sweep as u64;
        let seed = self.cfg.seed;
        self.update_paths()?;
        let counts = self.state.counts();

        let mut rng = stream(seed, &[s, TABLES]);
        self.state.aux = sample_aux_tables(&counts, &self.state.base, &self.state.hyper, &mut rng);

        let mut rng = stream(seed, &[s, HYPER]);
        let aux = &self.state.aux;
        let customers: Vec<u64> = aux.tallies.iter().map(|t| t.iter().sum()).collect();
        for (v, tally) in aux.tallies.iter().enumerate() {
            let g = self.state.hyper.gamma[v];
            let k = effective_tables(tally, g, &mut rng);
            self.state.hyper.gamma[v] =
                sample_gamma(g, k, customers[v], self.prior.gamma.shape, self.prior.gamma.rate, &mut rng);
        }
        let betas = sample_beta_vectors(aux, &self.state.hyper, &mut rng);
        let mut it = betas.into_iter();
        for group in &mut self.state.base.groups {
            for w in group.weights.vectors_mut() {
                *w = it.next().expect("one vector per tally");
            }
        }
        self.state.hyper.sticky_fraction = sample_sticky_fraction(
            aux.total_overrides,
            aux.total_tables,
            self.prior.sticky.a,
            self.prior.sticky.b,
            &mut rng,
        );
        let row_totals: Vec<u64> = counts
            .iter()
            .flat_map(|c| c.counts.values().map(|r| r.values().map(|&n| n as u64).sum::<u64>()))
            .collect();
        self.state.hyper.concentration = sample_concentration_total(
            self.state.hyper.concentration,
            &row_totals,
            aux.total_tables,
            self.prior.concentration.shape,
            self.prior.concentration.rate,
            &mut rng,
        );
        self.state.orders = self.state.base.groups.iter().map(|g| LabelOrder::new(&g.weights)).collect();

        self.resample_rows(s);
        let mut rng = stream(seed, &[s, ATOMS]);
        self.update_atoms(&mut rng)?;
        self.update_locations();
        Ok(())
    }

    fn update_paths(&mut self) -> Result<()> {
        let s = self.sweep as u64;
        let seed = self.cfg.seed;
        let pool = self.pool();
        let st = &mut self.state;
        let (alpha, nu) = (st.hyper.alpha(), st.hyper.nu());
        let base = &st.base;
        let orders = &st.orders;
        let space = self.space;
        let epsilon = self.prior.epsilon;
        let factorized = base.mode.is_factorized();
        let work = |(j, ((path, rows), traj)): (usize, ((&mut LatentPath, &mut RowSet), &Trajectory))| -> Result<()> {
            let g = base.group_of(j);
            let group = &base.groups[g];
            let mut prior = RowPrior::with_order(group, orders[g].clone(), alpha, nu);
            let mut cache = EmissionCache::new(group);
            let phis = traj.bearings();
            let mut rng = stream(seed, &[s, PATHS, j as u64]);
            let tag = |e: Error| match e {
                Error::NonFinite { time, detail, .. } => Error::NonFinite { animal: j, time, detail },
                other => other,
            };
            let mut next = beam_sample_path(traj, &phis, path, rows, &mut prior, &mut cache, None, &mut rng).map_err(tag)?;
            if factorized {
                for f in Family::ALL {
                    next = split_update_path(traj, &phis, &next, f, rows, &mut prior, &mut cache, &mut rng).map_err(tag)?;
                }
            }
            update_initial_state(&mut next, rows, &prior, &space, epsilon, &mut rng);
            *path = next;
            Ok(())
        };
        let run = |paths: &mut Vec<LatentPath>, rows: &mut Vec<RowSet>, data: &Vec<Trajectory>| -> Result<()> {
            paths
                .par_iter_mut()
                .zip(rows.par_iter_mut())
                .zip(data.par_iter())
                .enumerate()
                .map(work)
                .collect::<Result<Vec<()>>>()
                .map(|_| ())
        };
        match pool {
            Some(p) => p.install(|| run(&mut st.paths, &mut st.rows, &st.data)),
            None => run(&mut st.paths, &mut st.rows, &st.data),
        }
    }

    fn resample_rows(&mut self, s: u64) {
        let seed = self.cfg.seed;
        let pool = self.pool();
        let st = &mut self.state;
        let (alpha, nu) = (st.hyper.alpha(), st.hyper.nu());
        let base = &st.base;
        let orders = &st.orders;
        let paths = &st.paths;
        let job = || -> Vec<RowSet> {
            paths
                .par_iter()
                .enumerate()
                .map(|(j, p)| {
                    let g = base.group_of(j);
                    let prior = RowPrior::with_order(&base.groups[g], orders[g].clone(), alpha, nu);
                    let mut rng = stream(seed, &[s, ROWS, j as u64]);
                    RowSet::resample(&count_transitions(p), &prior, &mut rng)
                })
                .collect()
        };
        st.rows = match pool {
            Some(p) => p.install(job),
            None => job(),
        };
    }

    /// Full-conditional updates of every atom, family by family.
    fn update_atoms(&mut self, rng: &mut ChainRng) -> Result<()> {
        let st = &mut self.state;
        let prior = &self.prior;
        let scale = self.cfg.rho_proposal_scale;
        let phis: Vec<Vec<BearingAngle>> = st.data.iter().map(|t| t.bearings()).collect();
        let l = st.base.truncation;
        for g in 0..st.base.groups.len() {
            let animals: Vec<usize> = (0..st.paths.len()).filter(|&j| st.base.group_of(j) == g).collect();
            for family in Family::ALL {
                let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); l];
                for &j in &animals {
                    for (t, lab) in st.paths[j].states.iter().enumerate().skip(1) {
                        buckets[lab.get(family)].push((j, t));
                    }
                }
                let group = &st.base.groups[g];
                let assigned: Vec<Vec<AssignedEmission>> = buckets
                    .iter()
                    .map(|b| {
                        b.iter()
                            .map(|&(j, t)| AssignedEmission {
                                x: st.data[j].locations[t],
                                s: st.data[j].locations[t - 1],
                                phi: phis[j][t].value(),
                                theta: group.composite_atoms(&st.paths[j].states[t]),
                            })
                            .collect()
                    })
                    .collect();
                let atoms = &mut st.base.groups[g].atoms;
                for (p, a) in assigned.iter().enumerate() {
                    match family {
                        Family::Mu => atoms.mu[p] = sample_mu_atom(prior, a, rng),
                        Family::Eta => atoms.eta[p] = sample_eta_atom(prior, a, rng),
                        Family::Sigma => atoms.sigma[p] = sample_sigma_atom(prior, a, rng),
                        Family::Tau => atoms.tau[p] = sample_tau_atom(prior, a, rng),
                        Family::Rho => {
                            atoms.rho[p] = if a.is_empty() {
                                prior.draw_rho(rng)
                            } else {
                                sample_rho_atom(atoms.rho[p], prior, a, scale, rng)
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn update_locations(&mut self) {
        let s = self.sweep as u64;
        let seed = self.cfg.seed;
        let pool = self.pool();
        let st = &mut self.state;
        let base = &st.base;
        let paths = &st.paths;
        let prior = &self.prior;
        let job = |data: &mut Vec<Trajectory>| {
            data.par_iter_mut().enumerate().for_each(|(j, traj)| {
                let group = base.group(j);
                let mut cache = EmissionCache::new(group);
                let mut rng = stream(seed, &[s, MISSING, j as u64]);
                let path = &paths[j];
                let missing: Vec<usize> = traj.missing().collect();
                for q in missing {
                    let sigma = group.composite_atoms(&path.states[q]).sigma;
                    let scale = (sigma.trace() / 2.0).sqrt();
                    sample_missing_location(traj, q, path, &mut cache, scale, &mut rng);
                }
                let sigma = group.composite_atoms(&path.states[1]).sigma;
                let scale = sigma.trace().sqrt();
                sample_s0(traj, path, &mut cache, prior, scale, &mut rng);
            })
        };
        match pool {
            Some(p) => p.install(|| job(&mut st.data)),
            None => job(&mut st.data),
        }
    }

    /// Emission log-likelihood per animal.
    pub fn log_likelihoods(&self) -> Vec<f64> {
        let st = &self.state;
        st.data
            .iter()
            .enumerate()
            .map(|(j, traj)| {
                let mut cache = EmissionCache::new(st.base.group(j));
                crate::hmm::path_log_likelihood(&st.paths[j], traj, &traj.bearings(), &mut cache)
            })
            .collect()
    }

    pub fn check_finite(&self) -> Result<f64> {
        let ll = self.log_likelihoods();
        for (j, v) in ll.iter().enumerate() {
            if !v.is_finite() {
                let traj = &self.state.data[j];
                let phis = traj.bearings();
                let group = self.state.base.group(j);
                for t in 1..traj.len() {
                    let lab = self.state.paths[j].states[t];
                    let th = group.composite_atoms(&lab);
                    let d = stap_logpdf(&th, &traj.locations[t], &traj.locations[t - 1], phis[t]);
                    if !matches!(d, Ok(x) if x.is_finite()) {
                        return Err(Error::NonFinite { animal: j, time: t, detail: format!("behavior {lab}: {d:?}") });
                    }
                }
                return Err(Error::NonFinite { animal: j, time: 0, detail: format!("log-likelihood {v}") });
            }
        }
        Ok(ll.iter().sum())
    }

    fn global_id(&mut self, group: usize, label: CompositeLabel) -> u32 {
        if let Some(&id) = self.registry.get(&(group, label)) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push((group, label));
        self.registry.insert((group, label), id);
        id
    }

    /// Record the current state.
    pub fn snapshot(&mut self, loglik: f64) -> Draw {
        let n = self.state.paths.len();
        let mut behaviors: Vec<Behavior> = Vec::new();
        let mut seen: FxHashMap<(usize, CompositeLabel), u32> = FxHashMap::default();
        let mut paths = Vec::with_capacity(n);
        for j in 0..n {
            let g = self.state.base.group_of(j);
            let states = self.state.paths[j].states.clone();
            let mut ids = Vec::with_capacity(states.len());
            for lab in states {
                let id = match seen.get(&(g, lab)) {
                    Some(&id) => id,
                    None => {
                        let id = self.global_id(g, lab);
                        seen.insert((g, lab), id);
                        let group = &self.state.base.groups[g];
                        behaviors.push(Behavior {
                            id,
                            group: g,
                            label: lab,
                            weight: group.composite_weight(&lab),
                            theta: group.composite_atoms(&lab),
                        });
                        id
                    }
                };
                ids.push(id);
            }
            paths.push(ids);
        }
        let st = &self.state;
        let mut transitions = Vec::with_capacity(n);
        let mut trans_ll = 0.0;
        let mut init_ll = 0.0;
        for j in 0..n {
            let g = st.base.group_of(j);
            let counts = count_transitions(&st.paths[j]);
            let mut tr = Vec::new();
            for (l, k, c) in counts.iter() {
                let p = st.rows[j].get(l).map_or(0.0, |r| r.prob(k));
                trans_ll += c as f64 * p.ln();
                tr.push((seen[&(g, *l)], seen[&(g, *k)], p));
            }
            transitions.push(tr);
            init_ll += truncated_geometric_ln_pmf(self.prior.epsilon, self.space.size(), self.space.rank(&st.paths[j].states[0]));
        }
        Draw {
            sweep: self.sweep,
            hyper: st.hyper.clone(),
            behaviors,
            paths,
            transitions,
            imputed: st
                .data
                .iter()
                .map(|t| t.missing().map(|q| (q, [t.locations[q].x, t.locations[q].y])).collect())
                .collect(),
            s0: st.data.iter().map(|t| [t.s0.x, t.s0.y]).collect(),
            k: st.paths.iter().map(|p| count_nonempty(p.emitting())).collect(),
            loglik,
            complete_loglik: loglik + trans_ll + init_ll,
        }
    }

    pub fn labels(&self) -> &[(usize, CompositeLabel)] {
        &self.labels
    }

    /// Run all configured sweeps, writing one progress line per sweep.
    pub fn run(&mut self, mut progress: Option<&mut dyn Write>) -> Result<PosteriorDraws> {
        let mut draws = Vec::with_capacity(self.cfg.stored_draws());
        if let Some(w) = progress.as_mut() {
            let ks: Vec<String> = (1..=self.state.paths.len()).map(|j| format!("K_{j}")).collect();
            writeln!(w, "iter,loglik,{}", ks.join(",")).map_err(|e| Error::io("progress", e))?;
        }
        while self.sweep < self.cfg.iterations {
            self.step()?;
            let ll = self.check_finite()?;
            if let Some(w) = progress.as_mut() {
                let ks: Vec<String> = self.state.paths.iter().map(|p| count_nonempty(p.emitting()).to_string()).collect();
                writeln!(w, "{},{ll},{}", self.sweep, ks.join(",")).map_err(|e| Error::io("progress", e))?;
            }
            if self.cfg.keeps(self.sweep) {
                let d = self.snapshot(ll);
                draws.push(d);
            }
        }
        Ok(PosteriorDraws {
            mode: self.cfg.mode,
            animals: self.state.data.iter().map(|t| t.animal_id.clone()).collect(),
            labels: self.labels.clone(),
            draws,
        })
    }
}

/// Run a chain from scratch.
pub fn run_chain(
    data: Vec<Trajectory>,
    prior: PriorConfig,
    cfg: McmcConfig,
    progress: Option<&mut dyn Write>,
) -> Result<PosteriorDraws> {
    Sampler::new(data, prior, cfg)?.run(progress)
}

/// Fill missing locations by linear interpolation between the nearest
/// observed neighbours (constant extrapolation after the last one).
pub fn impute_linear(traj: &mut Trajectory) {
    let n = traj.len();
    let mut last_obs = 0;
    let mut i = 1;
    while i < n {
        if traj.observed[i] {
            last_obs = i;
            i += 1;
            continue;
        }
        let next = (i..n).find(|&k| traj.observed[k]);
        let a = traj.locations[last_obs];
        match next {
            Some(b_idx) => {
                let b = traj.locations[b_idx];
                for k in i..b_idx {
                    let w = (k - last_obs) as f64 / (b_idx - last_obs) as f64;
                    traj.locations[k] = a + w * (b - a);
                }
                i = b_idx;
            }
            None => {
                for k in i..n {
                    traj.locations[k] = a;
                }
                i = n;
            }
        }
    }
}

/// Piecewise-constant starting path: blocks of `block` steps, each given a
/// label drawn from the base weights.
/// Per-time features: log step length, cosine of the turn, and net
/// displacement over the smoothing window relative to path length.
fn step_features(traj: &Trajectory, window: usize) -> Vec<[f64; 3]> {
    let n = traj.len();
    let pts: Vec<Location> = std::iter::once(traj.s0).chain(traj.locations.iter().copied()).collect();
    let raw: Vec<[f64; 2]> = (1..n)
        .map(|t| {
            let d = pts[t + 1] - pts[t];
            let back = pts[t] - pts[t - 1];
            let cos = if d.norm() > 0.0 && back.norm() > 0.0 { d.dot(&back) / (d.norm() * back.norm()) } else { 0.0 };
            [(d.norm() + 1e-12).ln(), cos]
        })
        .collect();
    (0..raw.len())
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(raw.len());
            let w = (hi - lo) as f64;
            let len: f64 = (lo..hi).map(|k| (traj.locations[k + 1] - traj.locations[k]).norm()).sum();
            let net = (traj.locations[hi] - traj.locations[lo]).norm();
            [
                raw[lo..hi].iter().map(|r| r[0]).sum::<f64>() / w,
                raw[lo..hi].iter().map(|r| r[1]).sum::<f64>() / w,
                if len > 0.0 { net / len } else { 0.0 },
            ]
        })
        .collect()
}

/// k-means (k-means++ seeding, Lloyd iterations) on step features pooled
/// over animals; returns a cluster per emitting time of every animal.
fn feature_clusters<R: Rng + ?Sized>(data: &[Trajectory], k: usize, window: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let feats: Vec<Vec<[f64; 3]>> = data.iter().map(|t| step_features(t, window)).collect();
    let all: Vec<[f64; 3]> = feats.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let mut mean = [0.0; 3];
    let mut sd = [0.0; 3];
    for c in 0..3 {
        mean[c] = all.iter().map(|f| f[c]).sum::<f64>() / n;
        sd[c] = (all.iter().map(|f| (f[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    }
    let z: Vec<[f64; 3]> = all.iter().map(|f| std::array::from_fn(|c| (f[c] - mean[c]) / sd[c])).collect();
    let dist = |a: &[f64; 3], b: &[f64; 3]| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
    let mut centers = vec![z[rng.random_range(0..z.len())]];
    while centers.len() < k.min(z.len()) {
        let d: Vec<f64> = z.iter().map(|p| centers.iter().map(|c| dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
        if d.iter().sum::<f64>() == 0.0 {
            break;
        }
        centers.push(z[random::categorical(&d, rng)]);
    }
    let mut assign = vec![0usize; z.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, p) in z.iter().enumerate() {
            let best = (0..centers.len()).min_by(|&a, &b| dist(p, &centers[a]).total_cmp(&dist(p, &centers[b]))).unwrap_or(0);
            if best != assign[i] {
                assign[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64; 3]> = z.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                *center = std::array::from_fn(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64);
            }
        }
        if !changed {
            break;
        }
    }
    let mut out = Vec::with_capacity(feats.len());
    let mut at = 0;
    for f in &feats {
        out.push(assign[at..at + f.len()].to_vec());
        at += f.len();
    }
    out
}

/// Paths labelling every cluster with a distinct label drawn from the
/// animal's weights; the initial state copies the first emitting one.
fn initial_paths<R: Rng + ?Sized>(clusters: &[Vec<usize>], base: &BaseMeasure, rng: &mut R) -> Vec<LatentPath> {
    let mut shared: FxHashMap<(usize, usize), CompositeLabel> = FxHashMap::default();
    clusters
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let g = base.group_of(j);
            let group = base.group(j);
            let mut labels = Vec::with_capacity(c.len() + 1);
            for &k in c {
                if !shared.contains_key(&(g, k)) {
                    let mut tries = 0;
                    let fresh = loop {
                        tries += 1;
                        let l = match &group.weights {
                            StickWeights::Factorized(ws) => {
                                CompositeLabel(std::array::from_fn(|f| random::categorical(&ws[f], rng) as u16))
                            }
                            StickWeights::Joint(w) => CompositeLabel::tied(random::categorical(w, rng) as u16),
                        };
                        if tries > 1000 || !shared.iter().any(|(key, v)| key.0 == g && *v == l) {
                            break l;
                        }
                    };
                    shared.insert((g, k), fresh);
                }
                let label = shared[&(g, k)];
                labels.push(label);
            }
            labels.insert(0, labels[0]);
            LatentPath::new(labels)
        })
        .collect()
}
