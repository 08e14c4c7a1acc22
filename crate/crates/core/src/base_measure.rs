//! Shared base measure built from five per-parameter Dirichlet processes.
//!
//! Each parameter family (`mu`, `eta`, `sigma`, `tau`, `rho`) has its own
//! truncated stick-breaking weights and its own table of `L` atoms. A
//! behavior is a [`CompositeLabel`], one atom index per family; its weight
//! is the product of the five indexed weights and its parameters are the
//! five indexed atoms. Two behaviors with the same index in a family share
//! that parameter exactly.
//!
//! The `L^5` composite space is never materialised. [`LabelOrder`] walks it
//! lazily in decreasing weight order, which is all the sampler needs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random;
use crate::stap::{Location, StapParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mu,
    Eta,
    Sigma,
    Tau,
    Rho,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Mu, Family::Eta, Family::Sigma, Family::Tau, Family::Rho];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Mu => "mu",
            Family::Eta => "eta",
            Family::Sigma => "sigma",
            Family::Tau => "tau",
            Family::Rho => "rho",
        }
    }

    /// Number of free scalar parameters in one atom.
    pub fn dimension(self) -> usize {
        match self {
            Family::Mu | Family::Eta => 2,
            Family::Sigma => 3,
            Family::Tau | Family::Rho => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One atom index per family, zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompositeLabel(pub [u16; 5]);

impl CompositeLabel {
    pub fn new(mu: u16, eta: u16, sigma: u16, tau: u16, rho: u16) -> Self {
        CompositeLabel([mu, eta, sigma, tau, rho])
    }

    /// The label used by the single-DP modes: every family points at atom `p`.
    pub fn tied(p: u16) -> Self {
        CompositeLabel([p; 5])
    }

    pub fn get(&self, family: Family) -> usize {
        self.0[family.index()] as usize
    }

    pub fn with(mut self, family: Family, idx: usize) -> Self {
        self.0[family.index()] = idx as u16;
        self
    }

    /// True when every family other than `family` has the same index.
    pub fn agrees_except(&self, other: &CompositeLabel, family: Family) -> bool {
        let skip = family.index();
        (0..5).all(|i| i == skip || self.0[i] == other.0[i])
    }
}

impl fmt::Display for CompositeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.0;
        write!(f, "{}:{}:{}:{}:{}", c[0], c[1], c[2], c[3], c[4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum BaseMeasureMode {
    /// Five independent DPs combined through composite labels.
    #[default]
    #[serde(rename = "m1")]
    Factorized,
    /// One DP over whole parameter vectors shared by every animal.
    #[serde(rename = "m2")]
    SharedVector,
    /// One DP over whole parameter vectors per animal.
    #[serde(rename = "m3")]
    Independent,
}

impl BaseMeasureMode {
    pub fn name(self) -> &'static str {
        match self {
            BaseMeasureMode::Factorized => "m1",
            BaseMeasureMode::SharedVector => "m2",
            BaseMeasureMode::Independent => "m3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Some(BaseMeasureMode::Factorized),
            "m2" => Some(BaseMeasureMode::SharedVector),
            "m3" => Some(BaseMeasureMode::Independent),
            _ => None,
        }
    }

    pub fn is_factorized(self) -> bool {
        self == BaseMeasureMode::Factorized
    }
}

/// Label space induced by a mode, the truncation level and the number of
/// animals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSpace {
    pub mode: BaseMeasureMode,
    pub truncation: usize,
    pub animals: usize,
}

pub fn apply_mode(mode: BaseMeasureMode, truncation: usize, animals: usize) -> LabelSpace {
    LabelSpace { mode, truncation, animals }
}

impl LabelSpace {
    /// Number of labels reachable by one animal.
    pub fn size(&self) -> u64 {
        match self.mode {
            BaseMeasureMode::Factorized => (self.truncation as u64).pow(5),
            _ => self.truncation as u64,
        }
    }

    /// Number of disjoint label spaces (one per atom group).
    pub fn groups(&self) -> usize {
        match self.mode {
            BaseMeasureMode::Independent => self.animals,
            _ => 1,
        }
    }

    pub fn group_of(&self, animal: usize) -> usize {
        match self.mode {
            BaseMeasureMode::Independent => animal,
            _ => 0,
        }
    }

    /// Zero-based position of a label in the canonical ordering used by the
    /// geometric initial-state distribution.
    pub fn rank(&self, label: &CompositeLabel) -> u64 {
        match self.mode {
            BaseMeasureMode::Factorized => {
                let l = self.truncation as u64;
                label.0.iter().rev().fold(0u64, |acc, &c| acc * l + c as u64)
            }
            _ => label.0[0] as u64,
        }
    }

    pub fn from_rank(&self, rank: u64) -> CompositeLabel {
        match self.mode {
            BaseMeasureMode::Factorized => {
                let l = self.truncation as u64;
                let mut r = rank;
                let mut c = [0u16; 5];
                for slot in &mut c {
                    *slot = (r % l) as u16;
                    r /= l;
                }
                CompositeLabel(c)
            }
            _ => CompositeLabel::tied(rank as u16),
        }
    }

    pub fn contains(&self, label: &CompositeLabel) -> bool {
        let l = self.truncation as u16;
        match self.mode {
            BaseMeasureMode::Factorized => label.0.iter().all(|&c| c < l),
            _ => label.0[0] < l && label.0.iter().all(|&c| c == label.0[0]),
        }
    }
}

/// Parameter values available to one group of animals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSet {
    pub mu: Vec<Location>,
    pub eta: Vec<Vector2<f64>>,
    pub sigma: Vec<Matrix2<f64>>,
    pub tau: Vec<f64>,
    pub rho: Vec<f64>,
}

impl AtomSet {
    pub fn draw<R: Rng + ?Sized>(prior: &PriorConfig, truncation: usize, rng: &mut R) -> Self {
        let mut s = AtomSet {
            mu: Vec::with_capacity(truncation),
            eta: Vec::with_capacity(truncation),
            sigma: Vec::with_capacity(truncation),
            tau: Vec::with_capacity(truncation),
            rho: Vec::with_capacity(truncation),
        };
        for _ in 0..truncation {
            s.mu.push(prior.draw_mu(rng));
            s.eta.push(prior.draw_eta(rng));
            s.sigma.push(prior.draw_sigma(rng));
            s.tau.push(prior.draw_tau(rng));
            s.rho.push(prior.draw_rho(rng));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn redraw<R: Rng + ?Sized>(&mut self, family: Family, p: usize, prior: &PriorConfig, rng: &mut R) {
        match draw_atom(family, prior, rng) {
            AtomValue::Point(v) if family == Family::Mu => self.mu[p] = v,
            AtomValue::Point(v) => self.eta[p] = v,
            AtomValue::Matrix(m) => self.sigma[p] = m,
            AtomValue::Scalar(x) if family == Family::Tau => self.tau[p] = x,
            AtomValue::Scalar(x) => self.rho[p] = x,
        }
    }

    pub fn value(&self, family: Family, p: usize) -> AtomValue {
        match family {
            Family::Mu => AtomValue::Point(self.mu[p]),
            Family::Eta => AtomValue::Point(self.eta[p]),
            Family::Sigma => AtomValue::Matrix(self.sigma[p]),
            Family::Tau => AtomValue::Scalar(self.tau[p]),
            Family::Rho => AtomValue::Scalar(self.rho[p]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AtomValue {
    Point(Vector2<f64>),
    Matrix(Matrix2<f64>),
    Scalar(f64),
}

/// Stick weights of one group: five vectors in the factorized mode, a
/// single vector over whole parameter vectors otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StickWeights {
    Factorized([Vec<f64>; 5]),
    Joint(Vec<f64>),
}

impl StickWeights {
    pub fn vectors(&self) -> Vec<&Vec<f64>> {
        match self {
            StickWeights::Factorized(v) => v.iter().collect(),
            StickWeights::Joint(v) => vec![v],
        }
    }

    pub fn vectors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            StickWeights::Factorized(v) => v.iter_mut().collect(),
            StickWeights::Joint(v) => vec![v],
        }
    }
}

/// Atoms plus weights for one group of animals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomGroup {
    pub atoms: AtomSet,
    pub weights: StickWeights,
}

impl AtomGroup {
    /// `beta_k` of a composite label (product of the indexed weights).
    pub fn composite_weight(&self, label: &CompositeLabel) -> f64 {
        match &self.weights {
            StickWeights::Factorized(w) => composite_weight(label, w),
            StickWeights::Joint(w) => w[label.0[0] as usize],
        }
    }

    pub fn composite_atoms(&self, label: &CompositeLabel) -> StapParams {
        composite_atoms(label, &self.atoms)
    }
}

/// The full base measure of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasure {
    pub mode: BaseMeasureMode,
    pub truncation: usize,
    pub groups: Vec<AtomGroup>,
}

impl BaseMeasure {
    /// Prior draw using the weak-limit Dirichlet weights.
    pub fn draw<R: Rng + ?Sized>(space: &LabelSpace, prior: &PriorConfig, gammas: &[f64], rng: &mut R) -> Self {
        let l = space.truncation;
        let groups = (0..space.groups())
            .map(|g| {
                let atoms = AtomSet::draw(prior, l, rng);
                let weights = match space.mode {
                    BaseMeasureMode::Factorized => StickWeights::Factorized(std::array::from_fn(|f| dirichlet_weights(gammas[f], l, rng))),
                    _ => StickWeights::Joint(dirichlet_weights(gammas[g], l, rng)),
                };
                AtomGroup { atoms, weights }
            })
            .collect();
        BaseMeasure { mode: space.mode, truncation: l, groups }
    }

    pub fn space(&self, animals: usize) -> LabelSpace {
        apply_mode(self.mode, self.truncation, animals)
    }

    pub fn group_of(&self, animal: usize) -> usize {
        match self.mode {
            BaseMeasureMode::Independent => animal,
            _ => 0,
        }
    }

    pub fn group(&self, animal: usize) -> &AtomGroup {
        &self.groups[self.group_of(animal)]
    }

    pub fn theta(&self, animal: usize, label: &CompositeLabel) -> StapParams {
        self.group(animal).composite_atoms(label)
    }

    pub fn weight(&self, animal: usize, label: &CompositeLabel) -> f64 {
        self.group(animal).composite_weight(label)
    }
}

/// Stick-breaking weights built from explicit stick fractions; the final
/// weight takes whatever is left.
pub fn weights_from_sticks(sticks: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sticks.len() + 1);
    let mut left = 1.0;
    for &v in sticks {
        out.push(left * v);
        left *= 1.0 - v;
    }
    out.push(left);
    out
}

/// Truncated GEM(gamma) weights of length `l` (Beta(1, gamma) sticks).
pub fn stick_breaking_weights<R: Rng + ?Sized>(gamma: f64, l: usize, rng: &mut R) -> Vec<f64> {
    assert!(gamma > 0.0 && l >= 2);
    let sticks: Vec<f64> = (0..l - 1).map(|_| random::beta(1.0, gamma, rng)).collect();
    weights_from_sticks(&sticks)
}

/// Weak-limit weights: symmetric Dirichlet(gamma / l, ..., gamma / l).
pub fn dirichlet_weights<R: Rng + ?Sized>(gamma: f64, l: usize, rng: &mut R) -> Vec<f64> {
    assert!(gamma > 0.0 && l >= 2);
    random::dirichlet(&vec![gamma / l as f64; l], rng)
}

pub fn composite_weight(label: &CompositeLabel, weights: &[Vec<f64>; 5]) -> f64 {
    Family::ALL.iter().map(|&f| weights[f.index()][label.get(f)]).product()
}

pub fn composite_atoms(label: &CompositeLabel, atoms: &AtomSet) -> StapParams {
    StapParams {
        mu: atoms.mu[label.get(Family::Mu)],
        eta: atoms.eta[label.get(Family::Eta)],
        sigma: atoms.sigma[label.get(Family::Sigma)],
        tau: atoms.tau[label.get(Family::Tau)],
        rho: atoms.rho[label.get(Family::Rho)],
    }
}

/// Recover the label of an assembled parameter vector by exact lookup in
/// each family's table (first match wins).
pub fn decompose(theta: &StapParams, atoms: &AtomSet) -> Option<CompositeLabel> {
    let mu = atoms.mu.iter().position(|v| *v == theta.mu)?;
    let eta = atoms.eta.iter().position(|v| *v == theta.eta)?;
    let sigma = atoms.sigma.iter().position(|v| *v == theta.sigma)?;
    let tau = atoms.tau.iter().position(|v| *v == theta.tau)?;
    let rho = atoms.rho.iter().position(|v| *v == theta.rho)?;
    Some(CompositeLabel::new(mu as u16, eta as u16, sigma as u16, tau as u16, rho as u16))
}

pub fn draw_atom<R: Rng + ?Sized>(family: Family, prior: &PriorConfig, rng: &mut R) -> AtomValue {
    match family {
        Family::Mu => AtomValue::Point(prior.draw_mu(rng)),
        Family::Eta => AtomValue::Point(prior.draw_eta(rng)),
        Family::Sigma => AtomValue::Matrix(prior.draw_sigma(rng)),
        Family::Tau => AtomValue::Scalar(prior.draw_tau(rng)),
        Family::Rho => AtomValue::Scalar(prior.draw_rho(rng)),
    }
}

/// Rectangular spatial domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for Domain {
    fn default() -> Self {
        Domain { x: [-5.0, 5.0], y: [-5.0, 5.0] }
    }
}

impl Domain {
    pub fn contains(&self, p: &Location) -> bool {
        p.x >= self.x[0] && p.x <= self.x[1] && p.y >= self.y[0] && p.y <= self.y[1]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Location {
        Location::new(
            self.x[0] + rng.random::<f64>() * (self.x[1] - self.x[0]),
            self.y[0] + rng.random::<f64>() * (self.y[1] - self.y[0]),
        )
    }
}

/// Gamma(shape, rate) prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        random::gamma(self.shape, self.rate, rng)
    }
}

/// Beta(a, b) prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

/// Hyperparameters of the whole hierarchy. Missing keys take the values
/// used for the sheepdog analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub mu_mean: [f64; 2],
    pub mu_cov: [[f64; 2]; 2],
    pub eta_mean: [f64; 2],
    pub eta_cov: [[f64; 2]; 2],
    pub sigma_df: f64,
    pub sigma_scale: [[f64; 2]; 2],
    /// Uniform prior bounds for tau, inside (0, 1).
    pub tau_bounds: [f64; 2],
    /// Mixture weights of the rho prior: mass at 0, mass at 1, uniform.
    pub rho_weights: [f64; 3],
    /// Prior on each DP scaling parameter gamma.
    pub gamma: GammaPrior,
    /// Prior on alpha + nu.
    pub concentration: GammaPrior,
    /// Prior on nu / (alpha + nu).
    pub sticky: BetaPrior,
    pub domain: Domain,
    /// Parameter of the geometric initial-state distribution.
    pub epsilon: f64,
    /// Truncation level L of every weak-limit DP.
    pub truncation: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            mu_mean: [0.0, 0.0],
            mu_cov: [[20.0, 0.0], [0.0, 20.0]],
            eta_mean: [0.0, 0.0],
            eta_cov: [[20.0, 0.0], [0.0, 20.0]],
            sigma_df: 3.0,
            sigma_scale: [[1.0, 0.0], [0.0, 1.0]],
            tau_bounds: [0.0, 1.0],
            rho_weights: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            gamma: GammaPrior { shape: 0.01, rate: 0.01 },
            concentration: GammaPrior { shape: 0.01, rate: 0.01 },
            sticky: BetaPrior { a: 1.0, b: 1.0 },
            domain: Domain::default(),
            epsilon: 0.00001,
            truncation: 100,
        }
    }
}

pub fn mat2(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, cov) in [("mu_cov", &self.mu_cov), ("eta_cov", &self.eta_cov), ("sigma_scale", &self.sigma_scale)] {
            if !crate::stap::is_spd(&mat2(cov)) {
                return bad(format!("priors.{name} must be symmetric positive definite"));
            }
        }
        if !(self.sigma_df > 1.0) {
            return bad("priors.sigma_df must exceed 1".into());
        }
        let [lo, hi] = self.tau_bounds;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("priors.tau_bounds must satisfy 0 <= lo < hi <= 1".into());
        }
        if self.rho_weights.iter().any(|w| *w < 0.0) || (self.rho_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("priors.rho_weights must be nonnegative and sum to 1".into());
        }
        for (name, g) in [("gamma", self.gamma), ("concentration", self.concentration)] {
            if !(g.shape > 0.0 && g.rate > 0.0) {
                return bad(format!("priors.{name} shape and rate must be positive"));
            }
        }
        if !(self.sticky.a > 0.0 && self.sticky.b > 0.0) {
            return bad("priors.sticky a and b must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("priors.epsilon must lie in (0, 1]".into());
        }
        if self.truncation < 2 || self.truncation > u16::MAX as usize {
            return bad("priors.truncation must be at least 2".into());
        }
        if !(self.domain.x[0] < self.domain.x[1] && self.domain.y[0] < self.domain.y[1]) {
            return bad("priors.domain bounds are empty".into());
        }
        Ok(())
    }

    pub fn mu_mean_v(&self) -> Vector2<f64> {
        Vector2::new(self.mu_mean[0], self.mu_mean[1])
    }

    pub fn eta_mean_v(&self) -> Vector2<f64> {
        Vector2::new(self.eta_mean[0], self.eta_mean[1])
    }

    pub fn draw_mu<R: Rng + ?Sized>(&self, rng: &mut R) -> Location {
        random::mvn2(&self.mu_mean_v(), &mat2(&self.mu_cov), rng)
    }

    pub fn draw_eta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector2<f64> {
        random::mvn2(&self.eta_mean_v(), &mat2(&self.eta_cov), rng)
    }

    pub fn draw_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix2<f64> {
        random::inverse_wishart2(self.sigma_df, &mat2(&self.sigma_scale), rng)
    }

    pub fn draw_tau<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let [lo, hi] = self.tau_bounds;
        loop {
            let t = lo + random::open01(rng) * (hi - lo);
            if t > 0.0 && t < 1.0 {
                return t;
            }
        }
    }

    pub fn draw_rho<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match random::categorical(&self.rho_weights, rng) {
            0 => 0.0,
            1 => 1.0,
            _ => random::open01(rng),
        }
    }

    /// Log prior density of a rho value with respect to
    /// `delta_0 + delta_1 + Lebesgue(0, 1)`.
    pub fn rho_log_prior(&self, rho: f64) -> f64 {
        let w = if rho == 0.0 {
            self.rho_weights[0]
        } else if rho == 1.0 {
            self.rho_weights[1]
        } else if rho > 0.0 && rho < 1.0 {
            self.rho_weights[2]
        } else {
            0.0
        };
        w.ln()
    }
}

/// Lazily generated sequence of composite labels in decreasing weight
/// order (ties broken by label), for one group's weights.
#[derive(Debug, Clone)]
pub struct LabelOrder {
    sorted: Vec<Vec<(u16, f64)>>,
    factorized: bool,
    heap: BinaryHeap<Frontier>,
    seen: FxHashSet<[u16; 5]>,
    emitted: Vec<(CompositeLabel, f64)>,
    total: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Frontier {
    weight: f64,
    ranks: [u16; 5],
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .partial_cmp(&other.weight)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.ranks.cmp(&self.ranks))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl LabelOrder {
    pub fn new(weights: &StickWeights) -> Self {
        let sort = |w: &Vec<f64>| {
            let mut v: Vec<(u16, f64)> = w.iter().enumerate().map(|(i, &x)| (i as u16, x)).collect();
            v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
            v
        };
        let (sorted, factorized): (Vec<_>, bool) = match weights {
            StickWeights::Factorized(ws) => (ws.iter().map(sort).collect(), true),
            StickWeights::Joint(w) => (vec![sort(w)], false),
        };
        let total = if factorized {
            sorted.iter().map(|v| v.len() as u64).product()
        } else {
            sorted[0].len() as u64
        };
        let mut order = LabelOrder {
            sorted,
            factorized,
            heap: BinaryHeap::new(),
            seen: FxHashSet::default(),
            emitted: Vec::new(),
            total,
        };
        let start = [0u16; 5];
        let w = order.weight_of(&start);
        order.seen.insert(start);
        order.heap.push(Frontier { weight: w, ranks: start });
        order
    }

    fn weight_of(&self, ranks: &[u16; 5]) -> f64 {
        if self.factorized {
            (0..5).map(|f| self.sorted[f][ranks[f] as usize].1).product()
        } else {
            self.sorted[0][ranks[0] as usize].1
        }
    }

    fn label_of(&self, ranks: &[u16; 5]) -> CompositeLabel {
        if self.factorized {
            CompositeLabel(std::array::from_fn(|f| self.sorted[f][ranks[f] as usize].0))
        } else {
            CompositeLabel::tied(self.sorted[0][ranks[0] as usize].0)
        }
    }

    /// Size of the label space being enumerated.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// The `i`-th label in decreasing weight order, generating as needed.
    pub fn get(&mut self, i: usize) -> Option<(CompositeLabel, f64)> {
        while self.emitted.len() <= i {
            let top = self.heap.pop()?;
            let dims = if self.factorized { 5 } else { 1 };
            for f in 0..dims {
                let mut next = top.ranks;
                next[f] += 1;
                if (next[f] as usize) < self.sorted[f].len() && self.seen.insert(next) {
                    let weight = self.weight_of(&next);
                    self.heap.push(Frontier { weight, ranks: next });
                }
            }
            self.emitted.push((self.label_of(&top.ranks), top.weight));
        }
        Some(self.emitted[i])
    }
}
