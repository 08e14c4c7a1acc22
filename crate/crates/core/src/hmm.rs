//! Per-animal latent behaviors: sticky transition rows over composite
//! labels, transition counts, and the beam sampler for latent paths.
//!
//! A trajectory of `T` locations carries `T` latent states. State 0 is the
//! non-emitting initial state; state `i >= 1` generates location `i` from
//! location `i - 1` and the bearing into it (the bearing into location 0 is
//! taken from the auxiliary point `s0`).
//!
//! Transition rows are sparse: only some entries are realised, the rest of
//! the row is kept as one remainder mass together with its Dirichlet
//! parameter, and further entries are split off on demand in decreasing
//! order of base weight.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::base_measure::{AtomGroup, CompositeLabel, Family, LabelOrder, LabelSpace};
use crate::error::{Error, Result};
use crate::random;
use crate::stap::{bearings_with_fallback, BearingAngle, Location, StapParams};

/// Upper bound on realised entries per row; reaching it means the slice
/// variables have collapsed towards zero.
const MAX_ROW_ENTRIES: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub animal_id: String,
    pub times: Vec<f64>,
    /// Current values; missing entries hold their latest imputation.
    pub locations: Vec<Location>,
    pub observed: Vec<bool>,
    /// Auxiliary location before the first observation.
    pub s0: Location,
}

impl Trajectory {
    pub fn new(animal_id: impl Into<String>, times: Vec<f64>, locations: Vec<Location>, observed: Vec<bool>, s0: Location) -> Result<Self> {
        let animal_id = animal_id.into();
        let grid = |msg: String| Error::Grid { animal: animal_id.clone(), msg };
        if times.len() != locations.len() || times.len() != observed.len() {
            return Err(grid("times, locations and flags differ in length".into()));
        }
        if times.len() < 2 {
            return Err(grid("need at least two time points".into()));
        }
        if !observed[0] {
            return Err(grid("first location must be observed".into()));
        }
        let step = times[1] - times[0];
        if !(step > 0.0) {
            return Err(grid("times must be strictly increasing".into()));
        }
        for w in times.windows(2) {
            let d = w[1] - w[0];
            if !(d > 0.0) || ((d - step) / step).abs() > 1e-6 {
                return Err(grid(format!("unequal time step at t={}", w[1])));
            }
        }
        Ok(Trajectory { animal_id, times, locations, observed, s0 })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn missing(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed.iter().enumerate().filter(|(_, o)| !**o).map(|(i, _)| i)
    }

    /// Bearing entering each location's predecessor: entry `i >= 1` is the
    /// angle used by emission `i`. Entry 0 is unused.
    pub fn bearings(&self) -> Vec<BearingAngle> {
        let mut pts = Vec::with_capacity(self.len());
        pts.push(self.s0);
        pts.extend_from_slice(&self.locations[..self.len() - 1]);
        let mut out = Vec::with_capacity(self.len());
        out.push(BearingAngle::default());
        out.extend(bearings_with_fallback(&pts, BearingAngle::default()));
        out
    }

    /// Location preceding `i`, with `s0` before the first one.
    pub fn previous(&self, i: usize) -> &Location {
        if i == 0 {
            &self.s0
        } else {
            &self.locations[i - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentPath {
    pub states: Vec<CompositeLabel>,
}

impl LatentPath {
    pub fn new(states: Vec<CompositeLabel>) -> Self {
        LatentPath { states }
    }

    pub fn constant(label: CompositeLabel, len: usize) -> Self {
        LatentPath { states: vec![label; len] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// States that generate a location (all but the initial one).
    pub fn emitting(&self) -> &[CompositeLabel] {
        &self.states[1.min(self.states.len())..]
    }
}

/// Sparse counts `n[l][k]` for one animal.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    pub counts: BTreeMap<CompositeLabel, BTreeMap<CompositeLabel, u32>>,
}

impl TransitionCounts {
    pub fn get(&self, from: &CompositeLabel, to: &CompositeLabel) -> u32 {
        self.counts.get(from).and_then(|r| r.get(to)).copied().unwrap_or(0)
    }

    pub fn row(&self, from: &CompositeLabel) -> Option<&BTreeMap<CompositeLabel, u32>> {
        self.counts.get(from)
    }

    pub fn row_total(&self, from: &CompositeLabel) -> u32 {
        self.counts.get(from).map_or(0, |r| r.values().sum())
    }

    pub fn add(&mut self, from: CompositeLabel, to: CompositeLabel) {
        *self.counts.entry(from).or_default().entry(to).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().flat_map(|r| r.values()).map(|&c| c as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CompositeLabel, &CompositeLabel, u32)> {
        self.counts.iter().flat_map(|(l, r)| r.iter().map(move |(k, &c)| (l, k, c)))
    }
}

pub fn count_transitions(path: &LatentPath) -> TransitionCounts {
    let mut c = TransitionCounts::default();
    for w in path.states.windows(2) {
        c.add(w[0], w[1]);
    }
    c
}

/// Number of distinct labels among `states`.
pub fn count_nonempty(states: &[CompositeLabel]) -> usize {
    let mut seen: Vec<CompositeLabel> = states.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Prior mean of a transition probability: `(alpha beta_k + nu [self]) / (alpha + nu)`.
pub fn expected_transition(alpha: f64, nu: f64, beta_k: f64, is_self: bool) -> f64 {
    debug_assert!(alpha + nu > 0.0);
    let c = alpha + nu;
    alpha / c * beta_k + if is_self { nu / c } else { 0.0 }
}

/// Everything a row needs to split off new entries: base weights, their
/// ordering, and the two concentration parameters.
#[derive(Debug, Clone)]
pub struct RowPrior<'a> {
    pub group: &'a AtomGroup,
    pub order: LabelOrder,
    pub alpha: f64,
    pub nu: f64,
}

impl<'a> RowPrior<'a> {
    pub fn new(group: &'a AtomGroup, alpha: f64, nu: f64) -> Self {
        RowPrior { group, order: LabelOrder::new(&group.weights), alpha, nu }
    }

    pub fn with_order(group: &'a AtomGroup, order: LabelOrder, alpha: f64, nu: f64) -> Self {
        RowPrior { group, order, alpha, nu }
    }

    pub fn beta(&self, label: &CompositeLabel) -> f64 {
        self.group.composite_weight(label)
    }
}

/// One sampled row `pi_{j,l}` of a transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    pub source: CompositeLabel,
    entries: Vec<(CompositeLabel, f64)>,
    index: FxHashMap<CompositeLabel, usize>,
    remainder: f64,
    /// Base weight not yet realised.
    rem_beta: f64,
    self_realised: bool,
    cursor: usize,
    sorted: bool,
}

impl TransitionRow {
    /// A row with every entry given explicitly and no remainder.
    pub fn dense(source: CompositeLabel, entries: Vec<(CompositeLabel, f64)>) -> Self {
        let mut row = TransitionRow {
            source,
            entries,
            index: FxHashMap::default(),
            remainder: 0.0,
            rem_beta: 0.0,
            self_realised: true,
            cursor: usize::MAX,
            sorted: false,
        };
        row.sort();
        row
    }

    /// Draw from `Dir(alpha beta + nu delta_source + n)`, realising the
    /// targets with positive counts and the source itself.
    pub fn posterior<R: Rng + ?Sized>(
        source: CompositeLabel,
        counts: Option<&BTreeMap<CompositeLabel, u32>>,
        prior: &RowPrior,
        rng: &mut R,
    ) -> Self {
        let mut labels: Vec<CompositeLabel> = counts.map(|c| c.keys().copied().collect()).unwrap_or_default();
        if !labels.contains(&source) {
            labels.push(source);
        }
        let mut beta_sum = 0.0;
        let mut logs = Vec::with_capacity(labels.len() + 1);
        for k in &labels {
            let b = prior.beta(k);
            beta_sum += b;
            let n = counts.and_then(|c| c.get(k)).copied().unwrap_or(0) as f64;
            let a = prior.alpha * b + if *k == source { prior.nu } else { 0.0 } + n;
            logs.push(random::ln_gamma_variate(a, rng));
        }
        let rem_beta = (1.0 - beta_sum).max(0.0);
        logs.push(random::ln_gamma_variate(prior.alpha * rem_beta, rng));
        let probs = random::normalize_log(&logs);
        let remainder = probs[labels.len()];
        let entries = labels.into_iter().zip(probs).collect();
        let mut row = TransitionRow {
            source,
            entries,
            index: FxHashMap::default(),
            remainder,
            rem_beta,
            self_realised: true,
            cursor: 0,
            sorted: false,
        };
        row.sort();
        row
    }

    fn sort(&mut self) {
        self.entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        self.index.clear();
        self.index.extend(self.entries.iter().enumerate().map(|(i, e)| (e.0, i)));
        self.sorted = true;
    }

    pub fn prob(&self, target: &CompositeLabel) -> f64 {
        self.index.get(target).map_or(0.0, |&i| self.entries[i].1)
    }

    pub fn contains(&self, target: &CompositeLabel) -> bool {
        self.index.contains_key(target)
    }

    pub fn remainder(&self) -> f64 {
        self.remainder
    }

    /// Realised entries, in decreasing probability once [`Self::extend`]
    /// has run.
    pub fn entries(&self) -> &[(CompositeLabel, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum::<f64>() + self.remainder
    }

    fn remainder_shape(&self, prior: &RowPrior) -> f64 {
        prior.alpha * self.rem_beta + if self.self_realised { 0.0 } else { prior.nu }
    }

    /// Split the entry for `target` off the remainder (if not yet realised)
    /// and return its probability.
    pub fn realize<R: Rng + ?Sized>(&mut self, target: CompositeLabel, prior: &RowPrior, rng: &mut R) -> f64 {
        if let Some(&i) = self.index.get(&target) {
            return self.entries[i].1;
        }
        let b = prior.beta(&target);
        let is_self = target == self.source;
        let a = prior.alpha * b + if is_self { prior.nu } else { 0.0 };
        let rest = self.remainder_shape(prior) - a;
        let frac = if a <= 0.0 {
            0.0
        } else if rest <= 1e-300 {
            1.0
        } else {
            random::beta(a, rest, rng)
        };
        let p = self.remainder * frac;
        self.remainder *= 1.0 - frac;
        if frac == 1.0 {
            self.remainder = 0.0;
        }
        self.rem_beta = (self.rem_beta - b).max(0.0);
        if is_self {
            self.self_realised = true;
        }
        self.index.insert(target, self.entries.len());
        self.entries.push((target, p));
        self.sorted = false;
        p
    }

    /// Realise entries in decreasing base-weight order until the remainder
    /// drops below `u`, then restore the sorted order.
    pub fn extend<R: Rng + ?Sized>(&mut self, u: f64, prior: &mut RowPrior, rng: &mut R) -> Result<()> {
        while self.remainder >= u && self.remainder > 0.0 {
            let Some((label, beta)) = prior.order.get(self.cursor) else {
                self.absorb_remainder();
                break;
            };
            self.cursor += 1;
            if self.index.contains_key(&label) {
                continue;
            }
            if beta == 0.0 && label != self.source && self.self_realised {
                // every later label has zero base weight as well
                self.absorb_remainder();
                break;
            }
            self.realize(label, prior, rng);
            if self.entries.len() > MAX_ROW_ENTRIES {
                return Err(Error::InvalidParameter(format!(
                    "transition row exceeded {MAX_ROW_ENTRIES} entries (slice level {u:e})"
                )));
            }
        }
        if !self.sorted {
            self.sort();
        }
        Ok(())
    }

    fn absorb_remainder(&mut self) {
        let keep = 1.0 - self.remainder;
        if keep > 0.0 {
            for e in &mut self.entries {
                e.1 /= keep;
            }
        }
        self.remainder = 0.0;
        self.rem_beta = 0.0;
    }
}

/// Full-conditional draw of one transition row.
pub fn sample_transition_row<R: Rng + ?Sized>(
    source: CompositeLabel,
    counts: &TransitionCounts,
    prior: &RowPrior,
    rng: &mut R,
) -> TransitionRow {
    TransitionRow::posterior(source, counts.row(&source), prior, rng)
}

/// The sampled rows of one animal's transition matrix.
#[derive(Debug, Clone, Default)]
pub struct RowSet {
    pub rows: FxHashMap<CompositeLabel, TransitionRow>,
}

impl RowSet {
    /// Resample every row with counts, dropping all others (they are
    /// recreated from the prior when first needed).
    pub fn resample<R: Rng + ?Sized>(counts: &TransitionCounts, prior: &RowPrior, rng: &mut R) -> Self {
        let rows = counts
            .counts
            .iter()
            .map(|(l, c)| (*l, TransitionRow::posterior(*l, Some(c), prior, rng)))
            .collect();
        RowSet { rows }
    }

    pub fn row<R: Rng + ?Sized>(&mut self, source: CompositeLabel, prior: &RowPrior, rng: &mut R) -> &mut TransitionRow {
        self.rows.entry(source).or_insert_with(|| TransitionRow::posterior(source, None, prior, rng))
    }

    pub fn get(&self, source: &CompositeLabel) -> Option<&TransitionRow> {
        self.rows.get(source)
    }
}

/// Emission parameters of one behavior, pre-processed for repeated density
/// evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EmissionParams {
    mu: Location,
    eta: Vector2<f64>,
    sigma_inv: Matrix2<f64>,
    log_norm: f64,
    shrink: f64,
    rho: f64,
}

impl EmissionParams {
    pub fn new(theta: &StapParams) -> Self {
        let s = theta.sigma;
        let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
        let sigma_inv = Matrix2::new(s[(1, 1)], -s[(0, 1)], -s[(1, 0)], s[(0, 0)]) / det;
        EmissionParams {
            mu: theta.mu,
            eta: theta.eta,
            sigma_inv,
            log_norm: -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln(),
            shrink: (1.0 - theta.rho) * theta.tau,
            rho: theta.rho,
        }
    }

    /// `log f(x | s, phi)`.
    pub fn log_density(&self, x: &Location, s: &Location, phi: f64) -> f64 {
        let (sn, cs) = phi.sin_cos();
        let reta = Vector2::new(cs * self.eta.x - sn * self.eta.y, sn * self.eta.x + cs * self.eta.y);
        let mean = s + self.shrink * (self.mu - s) + self.rho * reta;
        let r = x - mean;
        let (s2, c2) = if self.rho == 0.0 {
            (0.0, 1.0)
        } else if self.rho == 1.0 {
            (sn, cs)
        } else {
            (self.rho * phi).sin_cos()
        };
        let v = Vector2::new(c2 * r.x + s2 * r.y, -s2 * r.x + c2 * r.y);
        self.log_norm - 0.5 * v.dot(&(self.sigma_inv * v))
    }
}

/// Lazily filled cache of [`EmissionParams`] for the labels of one group.
#[derive(Debug, Clone)]
pub struct EmissionCache<'a> {
    group: &'a AtomGroup,
    params: FxHashMap<CompositeLabel, EmissionParams>,
}

impl<'a> EmissionCache<'a> {
    pub fn new(group: &'a AtomGroup) -> Self {
        EmissionCache { group, params: FxHashMap::default() }
    }

    pub fn params(&mut self, label: &CompositeLabel) -> &EmissionParams {
        let group = self.group;
        self.params
            .entry(*label)
            .or_insert_with(|| EmissionParams::new(&group.composite_atoms(label)))
    }

    /// Log density of emission `i >= 1` of `traj` under `label`.
    pub fn log_density(&mut self, label: &CompositeLabel, traj: &Trajectory, phis: &[BearingAngle], i: usize) -> f64 {
        let (x, s, phi) = (traj.locations[i], traj.locations[i - 1], phis[i].value());
        self.params(label).log_density(&x, &s, phi)
    }
}

/// Emission log-likelihood of a whole path.
pub fn path_log_likelihood(path: &LatentPath, traj: &Trajectory, phis: &[BearingAngle], cache: &mut EmissionCache) -> f64 {
    (1..traj.len()).map(|i| cache.log_density(&path.states[i], traj, phis, i)).sum()
}

/// Beam sampler update of states `1..T` with the initial state held fixed.
///
/// With `restrict = Some(f)` only the `f` component of each state may
/// change, which gives a blocked update of that component's sequence.
#[allow(clippy::too_many_arguments)]
pub fn beam_sample_path<R: Rng + ?Sized>(
    traj: &Trajectory,
    phis: &[BearingAngle],
    path: &LatentPath,
    rows: &mut RowSet,
    prior: &mut RowPrior,
    emissions: &mut EmissionCache,
    restrict: Option<Family>,
    rng: &mut R,
) -> Result<LatentPath> {
    beam_sample_path_with_slices(traj, phis, path, rows, prior, emissions, restrict, rng).map(|(p, _)| p)
}

/// As [`beam_sample_path`], also returning the slice variables (entry 0 is
/// unused).
#[allow(clippy::too_many_arguments)]
pub fn beam_sample_path_with_slices<R: Rng + ?Sized>(
    traj: &Trajectory,
    phis: &[BearingAngle],
    path: &LatentPath,
    rows: &mut RowSet,
    prior: &mut RowPrior,
    emissions: &mut EmissionCache,
    restrict: Option<Family>,
    rng: &mut R,
) -> Result<(LatentPath, Vec<f64>)> {
    let t_len = path.len();
    assert_eq!(t_len, traj.len(), "path and trajectory lengths differ");
    if t_len < 2 {
        return Ok((path.clone(), vec![0.0; t_len]));
    }
    let z = &path.states;
    let mut u = vec![0.0; t_len];
    for t in 1..t_len {
        let p = rows.row(z[t - 1], prior, rng).realize(z[t], prior, rng);
        u[t] = random::open01(rng) * p;
    }
    let u_min = u[1..].iter().cloned().fold(f64::INFINITY, f64::min);

    let mut msgs: Vec<Vec<(CompositeLabel, f64)>> = Vec::with_capacity(t_len);
    msgs.push(vec![(z[0], 1.0)]);
    let mut acc: FxHashMap<CompositeLabel, usize> = FxHashMap::default();
    let mut extended: FxHashSet<CompositeLabel> = FxHashSet::default();
    for t in 1..t_len {
        acc.clear();
        let mut cand: Vec<(CompositeLabel, f64)> = Vec::new();
        for &(l, m) in &msgs[t - 1] {
            let row = rows.row(l, prior, rng);
            if extended.insert(l) {
                row.extend(u_min, prior, rng)?;
            }
            for &(k, p) in row.entries() {
                if p <= u[t] {
                    break;
                }
                if let Some(f) = restrict {
                    if !k.agrees_except(&z[t], f) {
                        continue;
                    }
                }
                match acc.get(&k) {
                    Some(&i) => cand[i].1 += m,
                    None => {
                        acc.insert(k, cand.len());
                        cand.push((k, m));
                    }
                }
            }
        }
        if cand.is_empty() {
            return Err(Error::EmptyCandidates(t));
        }
        let logs: Vec<f64> = cand
            .iter()
            .map(|(k, m)| m.ln() + emissions.log_density(k, traj, phis, t))
            .collect();
        if logs.iter().all(|l| !l.is_finite()) {
            return Err(Error::NonFinite { animal: 0, time: t, detail: "every candidate has zero density".into() });
        }
        let w = random::normalize_log(&logs);
        msgs.push(cand.into_iter().zip(w).map(|((k, _), w)| (k, w)).filter(|e| e.1 > 0.0).collect());
    }

    let mut out = vec![z[0]; t_len];
    let last = &msgs[t_len - 1];
    out[t_len - 1] = last[random::categorical(&last.iter().map(|e| e.1).collect::<Vec<_>>(), rng)].0;
    for t in (1..t_len - 1).rev() {
        let next = out[t + 1];
        let w: Vec<f64> = msgs[t]
            .iter()
            .map(|(l, m)| {
                let p = rows.get(l).map_or(0.0, |r| r.prob(&next));
                if p > u[t + 1] {
                    *m
                } else {
                    0.0
                }
            })
            .collect();
        if !w.iter().any(|&x| x > 0.0) {
            return Err(Error::EmptyCandidates(t));
        }
        out[t] = msgs[t][random::categorical(&w, rng)].0;
    }
    Ok((LatentPath::new(out), u))
}

/// Blocked update of one family's component along the path.
#[allow(clippy::too_many_arguments)]
pub fn split_update_path<R: Rng + ?Sized>(
    traj: &Trajectory,
    phis: &[BearingAngle],
    path: &LatentPath,
    family: Family,
    rows: &mut RowSet,
    prior: &mut RowPrior,
    emissions: &mut EmissionCache,
    rng: &mut R,
) -> Result<LatentPath> {
    beam_sample_path(traj, phis, path, rows, prior, emissions, Some(family), rng)
}

/// Draw from Geom(epsilon) on {1, 2, ...}.
pub fn sample_initial_state<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> u64 {
    assert!(epsilon > 0.0 && epsilon <= 1.0);
    if epsilon >= 1.0 {
        return 1;
    }
    let k = (random::open01(rng).ln() / (-epsilon).ln_1p()).floor();
    1 + k.min(u64::MAX as f64 / 2.0) as u64
}

/// Zero-based draw from Geom(epsilon) restricted to `0..size`.
pub fn truncated_geometric<R: Rng + ?Sized>(epsilon: f64, size: u64, rng: &mut R) -> u64 {
    if epsilon >= 1.0 {
        return 0;
    }
    let lq = (-epsilon).ln_1p();
    let mass = -(size as f64 * lq).exp_m1();
    let r = ((-random::open01(rng) * mass).ln_1p() / lq).floor();
    (r.max(0.0) as u64).min(size - 1)
}

/// Log pmf of [`truncated_geometric`].
pub fn truncated_geometric_ln_pmf(epsilon: f64, size: u64, rank: u64) -> f64 {
    if epsilon >= 1.0 {
        return if rank == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let lq = (-epsilon).ln_1p();
    epsilon.ln() + rank as f64 * lq - (-(size as f64 * lq).exp_m1()).ln()
}

/// Metropolis-Hastings update of the initial state. The proposal mixes the
/// geometric prior over label ranks with a uniform draw among the labels
/// visited by the rest of the path. Returns whether the move was accepted.
pub fn update_initial_state<R: Rng + ?Sized>(
    path: &mut LatentPath,
    rows: &mut RowSet,
    prior: &RowPrior,
    space: &LabelSpace,
    epsilon: f64,
    rng: &mut R,
) -> bool {
    if path.len() < 2 {
        return false;
    }
    let mut occupied: Vec<CompositeLabel> = path.states[1..].to_vec();
    occupied.sort_unstable();
    occupied.dedup();
    let size = space.size();
    let ln_q = |k: &CompositeLabel| {
        let geo = truncated_geometric_ln_pmf(epsilon, size, space.rank(k)).exp();
        let uni = if occupied.binary_search(k).is_ok() { 1.0 / occupied.len() as f64 } else { 0.0 };
        (0.5 * geo + 0.5 * uni).ln()
    };
    let ln_g = |k: &CompositeLabel| truncated_geometric_ln_pmf(epsilon, size, space.rank(k));
    let current = path.states[0];
    let proposal = if random::bernoulli(0.5, rng) {
        space.from_rank(truncated_geometric(epsilon, size, rng))
    } else {
        occupied[rng.random_range(0..occupied.len())]
    };
    if proposal == current {
        return true;
    }
    let z1 = path.states[1];
    let p_new = rows.row(proposal, prior, rng).realize(z1, prior, rng);
    let p_cur = rows.row(current, prior, rng).realize(z1, prior, rng);
    let log_ratio = ln_g(&proposal) + p_new.ln() + ln_q(&current) - ln_g(&current) - p_cur.ln() - ln_q(&proposal);
    if random::open01(rng).ln() < log_ratio {
        path.states[0] = proposal;
        true
    } else {
        false
    }
}
