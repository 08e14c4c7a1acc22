//! Posterior summaries: point-estimate partition, parameter-sharing
//! probabilities, model-comparison criteria, agreement, convergence, and
//! ellipse descriptors.
//!
//! Partitions cover the emitting time points only (locations `1..T` of
//! each animal); entry `i` of an animal's label vector refers to location
//! `i + 1`.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, SymmetricEigen};
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::base_measure::{BaseMeasureMode, CompositeLabel, Family};
use crate::error::{Error, Result};
use crate::hmm::{EmissionParams, Trajectory};
use crate::mcmc::{Behavior, Draw, PosteriorDraws};
use crate::stap::{stap_conditional_moments, BearingAngle, Location, StapParams};

/// Point-estimate behaviors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    /// Per animal, per emitting time: `1..=K_j`, numbered by decreasing
    /// occupancy within the animal.
    pub labels: Vec<Vec<u32>>,
    /// Cluster ids shared across animals (0-based), aligned with `labels`.
    pub clusters: Vec<Vec<u32>>,
}

impl Partition {
    pub fn k(&self, animal: usize) -> usize {
        self.labels[animal].iter().copied().max().unwrap_or(0) as usize
    }

    /// `n_{j,k}` for `k = 1..=K_j`.
    pub fn occupancy(&self, animal: usize) -> Vec<usize> {
        let mut n = vec![0; self.k(animal)];
        for &l in &self.labels[animal] {
            n[l as usize - 1] += 1;
        }
        n
    }

    /// Global cluster id of behavior `k` (1-based) of `animal`.
    pub fn cluster_of(&self, animal: usize, k: u32) -> u32 {
        let i = self.labels[animal].iter().position(|&l| l == k).expect("behavior present");
        self.clusters[animal][i]
    }

    /// Build from flat global cluster ids, renumbering each animal by
    /// decreasing occupancy (ties by first appearance).
    pub fn from_clusters(clusters: Vec<Vec<u32>>) -> Self {
        let labels = clusters
            .iter()
            .map(|c| {
                let mut count: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
                for (i, &x) in c.iter().enumerate() {
                    let e = count.entry(x).or_insert((0, i));
                    e.0 += 1;
                }
                let mut order: Vec<(u32, (usize, usize))> = count.into_iter().collect();
                order.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
                let rank: FxHashMap<u32, u32> = order.iter().enumerate().map(|(r, (x, _))| (*x, r as u32 + 1)).collect();
                c.iter().map(|x| rank[x]).collect()
            })
            .collect();
        Partition { labels, clusters }
    }
}

/// Relabel a flat assignment to `0..K` by order of first appearance.
pub fn canonical(assign: &[u32]) -> Vec<u32> {
    let mut map: FxHashMap<u32, u32> = FxHashMap::default();
    assign
        .iter()
        .map(|x| {
            let n = map.len() as u32;
            *map.entry(*x).or_insert(n)
        })
        .collect()
}

/// Variation-of-information lower-bound loss of `c` against a dense
/// posterior similarity matrix.
pub fn vi_lower_bound_loss(c: &[u32], psm: &[Vec<f64>]) -> f64 {
    let n = c.len();
    let mut total = 0.0;
    for i in 0..n {
        let size = c.iter().filter(|&&x| x == c[i]).count() as f64;
        let s: f64 = (0..n).filter(|&j| c[j] == c[i]).map(|j| psm[i][j]).sum();
        let p: f64 = psm[i].iter().sum();
        total += size.log2() - 2.0 * s.log2() + p.log2();
    }
    total / n as f64
}

/// Posterior similarity matrix of flat partitions.
pub fn similarity_matrix(parts: &[Vec<u32>]) -> Vec<Vec<f64>> {
    let n = parts[0].len();
    let d = parts.len() as f64;
    let mut psm = vec![vec![0.0; n]; n];
    for p in parts {
        for i in 0..n {
            for j in 0..n {
                if p[i] == p[j] {
                    psm[i][j] += 1.0 / d;
                }
            }
        }
    }
    psm
}

/// The candidate with the smallest loss (first one on ties).
pub fn best_partition<'a>(candidates: &'a [Vec<u32>], psm: &[Vec<f64>]) -> &'a [u32] {
    let mut best = 0;
    let mut best_loss = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let l = vi_lower_bound_loss(c, psm);
        if l < best_loss {
            best_loss = l;
            best = i;
        }
    }
    &candidates[best]
}

/// Draw-level partitions in compact form: per draw, dense ids over the
/// flat emitting positions.
struct DrawPartitions {
    parts: Vec<Vec<u16>>,
    sizes: Vec<Vec<u32>>,
    n: usize,
}

impl DrawPartitions {
    fn new(draws: &[Draw]) -> Self {
        let mut parts = Vec::with_capacity(draws.len());
        let mut sizes = Vec::with_capacity(draws.len());
        for d in draws {
            let flat: Vec<u32> = d.paths.iter().flat_map(|p| p[1..].iter().copied()).collect();
            let c = canonical(&flat);
            let k = c.iter().copied().max().map_or(0, |m| m as usize + 1);
            let mut s = vec![0u32; k];
            for &x in &c {
                s[x as usize] += 1;
            }
            parts.push(c.into_iter().map(|x| x as u16).collect());
            sizes.push(s);
        }
        let n = parts.first().map_or(0, |p: &Vec<u16>| p.len());
        DrawPartitions { parts, sizes, n }
    }

    /// `P_i = mean_d |cluster of i in d|`, summed as `sum_i log2 P_i`.
    fn const_term(&self) -> f64 {
        let d = self.parts.len() as f64;
        let mut p = vec![0.0; self.n];
        for (part, size) in self.parts.iter().zip(&self.sizes) {
            for i in 0..self.n {
                p[i] += size[part[i] as usize] as f64 / d;
            }
        }
        p.iter().map(|v| v.log2()).sum()
    }

    /// `S_i(B) = mean_d n_d(B, z_i)` for every position `i` and candidate
    /// cluster `B` (row-major `n x k`).
    fn cross(&self, c: &[u32], k: usize) -> Vec<f64> {
        let d = self.parts.len() as f64;
        let mut out = vec![0.0; self.n * k];
        for (part, size) in self.parts.iter().zip(&self.sizes) {
            let kd = size.len();
            let mut table = vec![0u32; k * kd];
            for i in 0..self.n {
                table[c[i] as usize * kd + part[i] as usize] += 1;
            }
            for i in 0..self.n {
                let z = part[i] as usize;
                let row = &mut out[i * k..(i + 1) * k];
                for (b, slot) in row.iter_mut().enumerate() {
                    let v = table[b * kd + z];
                    if v > 0 {
                        *slot += v as f64 / d;
                    }
                }
            }
        }
        out
    }

    /// Loss of `c` (canonical ids), up to the constant term.
    fn loss(&self, c: &[u32]) -> f64 {
        let k = c.iter().copied().max().map_or(0, |m| m as usize + 1);
        let d = self.parts.len() as f64;
        let mut size = vec![0usize; k];
        for &x in c {
            size[x as usize] += 1;
        }
        let mut s = vec![0.0; self.n];
        for (part, dsize) in self.parts.iter().zip(&self.sizes) {
            let kd = dsize.len();
            let mut table = vec![0u32; k * kd];
            for i in 0..self.n {
                table[c[i] as usize * kd + part[i] as usize] += 1;
            }
            for i in 0..self.n {
                s[i] += table[c[i] as usize * kd + part[i] as usize] as f64 / d;
            }
        }
        (0..self.n).map(|i| (size[c[i] as usize] as f64).log2() - 2.0 * s[i].log2()).sum()
    }
}

/// Greedy merging of clusters while the loss decreases.
fn greedy_merge(dp: &DrawPartitions, start: Vec<u32>) -> Vec<u32> {
    let mut c = canonical(&start);
    loop {
        let k = c.iter().copied().max().map_or(0, |m| m as usize + 1);
        if k < 2 {
            return c;
        }
        let cross = dp.cross(&c, k);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &x) in c.iter().enumerate() {
            members[x as usize].push(i);
        }
        let own = |i: usize| cross[i * k + c[i] as usize];
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..k {
            for b in a + 1..k {
                let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
                let mut delta = (na + nb) * (na + nb).log2() - na * na.log2() - nb * nb.log2();
                for &i in &members[a] {
                    delta -= 2.0 * ((own(i) + cross[i * k + b]).log2() - own(i).log2());
                }
                for &i in &members[b] {
                    delta -= 2.0 * ((own(i) + cross[i * k + a]).log2() - own(i).log2());
                }
                if delta < -1e-9 && best.is_none_or(|(d, _, _)| delta < d) {
                    best = Some((delta, a, b));
                }
            }
        }
        match best {
            None => return c,
            Some((_, a, b)) => {
                for x in &mut c {
                    if *x as usize == b {
                        *x = a as u32;
                    }
                }
                c = canonical(&c);
            }
        }
    }
}

fn fnv(c: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &x in c {
        h ^= x as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Point-estimate partition minimizing the posterior expected
/// variation-of-information lower bound over (a) up to `max_candidates`
/// distinct sampled partitions and (b) greedy merges of the best one.
///
/// Candidates are chosen by content hash, so the result does not depend
/// on the storage order of the draws.
pub fn map_partition(draws: &PosteriorDraws, max_candidates: usize) -> Result<Partition> {
    if draws.draws.len() < 2 {
        return Err(Error::TooFew { what: "draws", needed: 2, got: draws.draws.len() });
    }
    let dp = DrawPartitions::new(&draws.draws);
    let mut cands: Vec<(u64, Vec<u32>)> = dp
        .parts
        .iter()
        .map(|p| {
            let c: Vec<u32> = p.iter().map(|&x| x as u32).collect();
            (fnv(&c), c)
        })
        .collect();
    cands.sort();
    cands.dedup();
    cands.truncate(max_candidates.max(1));
    let mut best: Option<(f64, Vec<u32>)> = None;
    for (_, c) in cands {
        let l = dp.loss(&c);
        if best.as_ref().is_none_or(|(b, _)| l < *b) {
            best = Some((l, c));
        }
    }
    let (_, seed) = best.expect("at least one candidate");
    let flat = greedy_merge(&dp, seed);
    let lens: Vec<usize> = draws.draws[0].paths.iter().map(|p| p.len() - 1).collect();
    let mut clusters = Vec::with_capacity(lens.len());
    let mut at = 0;
    for n in lens {
        clusters.push(flat[at..at + n].to_vec());
        at += n;
    }
    Ok(Partition::from_clusters(clusters))
}

/// Posterior expected VI lower-bound loss of a partition (including the
/// constant term), computed from the draws.
pub fn partition_loss(draws: &PosteriorDraws, partition: &Partition) -> f64 {
    let dp = DrawPartitions::new(&draws.draws);
    let flat: Vec<u32> = canonical(&partition.clusters.concat());
    (dp.loss(&flat) + dp.const_term()) / dp.n as f64
}

/// Adjusted Rand index of two labelings of the same points.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len() as f64;
    let mut table: FxHashMap<(u32, u32), f64> = FxHashMap::default();
    let mut ra: FxHashMap<u32, f64> = FxHashMap::default();
    let mut rb: FxHashMap<u32, f64> = FxHashMap::default();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let c2 = |v: f64| v * (v - 1.0) / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// The draw label standing for each point-estimate behavior: for every
/// draw, the majority label among the behavior's time points.
pub fn representatives(draw: &Draw, partition: &Partition) -> Vec<Vec<u32>> {
    partition
        .labels
        .iter()
        .enumerate()
        .map(|(j, labels)| {
            let k = labels.iter().copied().max().unwrap_or(0) as usize;
            let mut votes: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                *votes[l as usize - 1].entry(draw.paths[j][i + 1]).or_default() += 1;
            }
            votes
                .into_iter()
                .map(|v| {
                    let mut best = (0usize, u32::MAX);
                    for (id, c) in v {
                        if c > best.0 {
                            best = (c, id);
                        }
                    }
                    best.1
                })
                .collect()
        })
        .collect()
}

/// Posterior probability that two behaviors take the same atom of one
/// family. Rows and columns run over `(animal, behavior)` pairs in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingMatrix {
    pub family: Family,
    pub behaviors: Vec<(usize, u32)>,
    pub entries: Vec<Vec<f64>>,
}

fn shares(mode: BaseMeasureMode, a: &Behavior, b: &Behavior, family: Family) -> bool {
    if a.group != b.group {
        return false;
    }
    match mode {
        BaseMeasureMode::Factorized => a.label.get(family) == b.label.get(family),
        _ => a.label == b.label,
    }
}

pub fn sharing_matrix(draws: &PosteriorDraws, partition: &Partition, family: Family) -> SharingMatrix {
    let behaviors: Vec<(usize, u32)> = (0..partition.labels.len())
        .flat_map(|j| (1..=partition.k(j) as u32).map(move |k| (j, k)))
        .collect();
    let nb = behaviors.len();
    let mut entries = vec![vec![0.0; nb]; nb];
    let nd = draws.draws.len() as f64;
    for d in &draws.draws {
        let reps = representatives(d, partition);
        let map = d.behavior_map();
        let rep: Vec<&Behavior> = behaviors.iter().map(|&(j, k)| map[&reps[j][k as usize - 1]]).collect();
        for a in 0..nb {
            for b in 0..nb {
                let (x, y) = (rep[a], rep[b]);
                let masked = match family {
                    Family::Mu => x.theta.rho == 1.0 || y.theta.rho == 1.0,
                    Family::Eta => x.theta.rho == 0.0 || y.theta.rho == 0.0,
                    _ => false,
                };
                if !masked && shares(draws.mode, x, y, family) {
                    entries[a][b] += 1.0 / nd;
                }
            }
        }
    }
    SharingMatrix { family, behaviors, entries }
}

/// Emission log density of location `t` of `traj` under `theta`.
fn emission(theta: &StapParams, traj: &Trajectory, phis: &[BearingAngle], t: usize) -> f64 {
    EmissionParams::new(theta).log_density(&traj.locations[t], &traj.locations[t - 1], phis[t].value())
}

/// Data with the imputations of one draw filled in.
fn with_imputations(data: &[Trajectory], draw: &Draw) -> Vec<Trajectory> {
    data.iter()
        .enumerate()
        .map(|(j, t)| {
            let mut t = t.clone();
            for &(q, p) in &draw.imputed[j] {
                t.locations[q] = Location::new(p[0], p[1]);
            }
            t.s0 = Location::new(draw.s0[j][0], draw.s0[j][1]);
            t
        })
        .collect()
}

/// Average of parameter vectors (elementwise, including the covariance).
pub fn mean_theta<'a>(thetas: impl Iterator<Item = &'a StapParams>) -> Option<StapParams> {
    let mut n = 0.0;
    let mut acc = StapParams { mu: Location::zeros(), eta: Location::zeros(), sigma: Matrix2::zeros(), tau: 0.0, rho: 0.0 };
    for t in thetas {
        n += 1.0;
        acc.mu += t.mu;
        acc.eta += t.eta;
        acc.sigma += t.sigma;
        acc.tau += t.tau;
        acc.rho += t.rho;
    }
    (n > 0.0).then(|| StapParams { mu: acc.mu / n, eta: acc.eta / n, sigma: acc.sigma / n, tau: acc.tau / n, rho: acc.rho / n })
}

/// Posterior mean parameters of every point-estimate behavior, from the
/// representative draw labels.
pub fn behavior_means(draws: &PosteriorDraws, partition: &Partition) -> Vec<Vec<StapParams>> {
    let mut acc: Vec<Vec<Vec<StapParams>>> =
        (0..partition.labels.len()).map(|j| vec![Vec::new(); partition.k(j)]).collect();
    for d in &draws.draws {
        let reps = representatives(d, partition);
        let map = d.behavior_map();
        for (j, r) in reps.iter().enumerate() {
            for (k, id) in r.iter().enumerate() {
                acc[j][k].push(map[id].theta.clone());
            }
        }
    }
    acc.into_iter()
        .map(|v| v.into_iter().map(|t| mean_theta(t.iter()).expect("nonempty draws")).collect())
        .collect()
}

/// Parts of the integrated completed likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IclTerms {
    pub emission: f64,
    pub transition: f64,
    pub free_parameters: usize,
    pub n: usize,
}

impl IclTerms {
    pub fn completed_loglik(&self) -> f64 {
        self.emission + self.transition
    }

    pub fn penalty(&self) -> f64 {
        0.5 * self.free_parameters as f64 * (self.n as f64).ln()
    }

    pub fn icl(&self) -> f64 {
        self.completed_loglik() - self.penalty()
    }
}

/// Number of distinct values of each family among the point-estimate
/// behaviors: connected components of the "shares with probability above
/// one half" graph.
fn distinct_atoms(sharing: &SharingMatrix) -> usize {
    let n = sharing.behaviors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for a in 0..n {
        for b in a + 1..n {
            if sharing.entries[a][b] > 0.5 {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
    }
    (0..n).filter(|&x| find(&mut parent, x) == x).count()
}

/// Completed log-likelihood at the point-estimate partition with posterior
/// mean parameters and maximum-likelihood transition frequencies, and the
/// BIC-type penalty.
pub fn icl_terms(draws: &PosteriorDraws, partition: &Partition, data: &[Trajectory]) -> IclTerms {
    let means = behavior_means(draws, partition);
    let mut emission_ll = 0.0;
    let mut transition_ll = 0.0;
    let mut n = 0;
    for (j, traj) in data.iter().enumerate() {
        let mean_imp = mean_imputation(draws, data, j);
        let phis = mean_imp.bearings();
        let labels = &partition.labels[j];
        for (i, &k) in labels.iter().enumerate() {
            emission_ll += emission(&means[j][k as usize - 1], &mean_imp, &phis, i + 1);
            n += 1;
        }
        let k = partition.k(j);
        let mut counts = vec![vec![0usize; k]; k];
        for w in labels.windows(2) {
            counts[w[0] as usize - 1][w[1] as usize - 1] += 1;
        }
        for row in &counts {
            let tot: usize = row.iter().sum();
            for &c in row.iter().filter(|&&c| c > 0) {
                transition_ll += c as f64 * (c as f64 / tot as f64).ln();
            }
        }
        let _ = traj;
    }
    let mut d = 0;
    for f in Family::ALL {
        let sm = sharing_matrix(draws, partition, f);
        d += f.dimension() * distinct_atoms(&sm);
    }
    for j in 0..data.len() {
        let k = partition.k(j);
        d += k * k.saturating_sub(1);
    }
    IclTerms { emission: emission_ll, transition: transition_ll, free_parameters: d, n }
}

pub fn icl(draws: &PosteriorDraws, partition: &Partition, data: &[Trajectory]) -> f64 {
    icl_terms(draws, partition, data).icl()
}

/// Trajectory `j` with missing locations set to their posterior means.
pub fn mean_imputation(draws: &PosteriorDraws, data: &[Trajectory], j: usize) -> Trajectory {
    let mut t = data[j].clone();
    let nd = draws.draws.len() as f64;
    let mut sums: BTreeMap<usize, Location> = BTreeMap::new();
    let mut s0 = Location::zeros();
    for d in &draws.draws {
        for &(q, p) in &d.imputed[j] {
            *sums.entry(q).or_insert_with(Location::zeros) += Location::new(p[0], p[1]);
        }
        s0 += Location::new(d.s0[j][0], d.s0[j][1]);
    }
    for (q, s) in sums {
        t.locations[q] = s / nd;
    }
    t.s0 = s0 / nd;
    t
}

/// Which conditional DIC construction to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DicVariant {
    /// Complete-data deviance, plug-in at the draw maximizing it.
    Five,
    /// Deviance conditional on the sampled states, plug-in at per-time
    /// posterior mean parameters.
    Seven,
}

pub fn dic(draws: &PosteriorDraws, data: &[Trajectory], variant: DicVariant) -> f64 {
    let ds = &draws.draws;
    let nd = ds.len() as f64;
    match variant {
        DicVariant::Five => {
            let mean = ds.iter().map(|d| d.complete_loglik).sum::<f64>() / nd;
            let max = ds.iter().map(|d| d.complete_loglik).fold(f64::NEG_INFINITY, f64::max);
            -4.0 * mean + 2.0 * max
        }
        DicVariant::Seven => {
            let mean = ds.iter().map(|d| d.loglik).sum::<f64>() / nd;
            let mut plug = 0.0;
            for (j, _) in data.iter().enumerate() {
                let traj = mean_imputation(draws, data, j);
                let phis = traj.bearings();
                let maps: Vec<FxHashMap<u32, &Behavior>> = ds.iter().map(|d| d.behavior_map()).collect();
                for t in 1..traj.len() {
                    let th = mean_theta(ds.iter().zip(&maps).map(|(d, m)| &m[&d.paths[j][t]].theta)).expect("draws");
                    plug += emission(&th, &traj, &phis, t);
                }
            }
            -4.0 * mean + 2.0 * plug
        }
    }
}

/// Emission log-likelihood of one draw recomputed from the data.
pub fn draw_log_likelihood(draw: &Draw, data: &[Trajectory]) -> f64 {
    let filled = with_imputations(data, draw);
    let map = draw.behavior_map();
    filled
        .iter()
        .enumerate()
        .map(|(j, traj)| {
            let phis = traj.bearings();
            (1..traj.len()).map(|t| emission(&map[&draw.paths[j][t]].theta, traj, &phis, t)).sum::<f64>()
        })
        .sum()
}

/// Potential scale reduction factor of two or more chains (truncated to
/// the shortest). Returns 1 when every chain is constant at one value.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::TooFew { what: "chains", needed: 2, got: chains.len() });
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 2 {
        return Err(Error::TooFew { what: "draws per chain", needed: 2, got: n });
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

/// R-hat of a single chain split into halves.
pub fn split_rhat(chain: &[f64]) -> Result<f64> {
    let h = chain.len() / 2;
    rhat(&[chain[..h].to_vec(), chain[h..2 * h].to_vec()])
}

/// Contour of the conditional step distribution holding `mass` of its
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-axis lengths, major first.
    pub axes: [f64; 2],
    /// Angle of the major axis, radians anticlockwise from the x axis.
    pub rotation: f64,
}

impl Ellipse {
    pub fn contains(&self, p: &Location) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (p.x - self.center[0], p.y - self.center[1]);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2) <= 1.0
    }
}

pub fn behavior_ellipse(theta: &StapParams, s_curr: &Location, phi_prev: BearingAngle, mass: f64) -> Result<Ellipse> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidParameter(format!("ellipse mass must lie in (0, 1), got {mass}")));
    }
    let (mean, cov) = stap_conditional_moments(theta, s_curr, phi_prev);
    let q = -2.0 * (1.0 - mass).ln();
    let eig = SymmetricEigen::new(cov);
    let (i_max, i_min) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let v = eig.eigenvectors.column(i_max);
    Ok(Ellipse {
        center: [mean.x, mean.y],
        axes: [(q * eig.eigenvalues[i_max]).sqrt(), (q * eig.eigenvalues[i_min]).sqrt()],
        rotation: v[1].atan2(v[0]),
    })
}

/// Equal-tailed interval by linear interpolation of order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn param_summary(name: &'static str, values: &mut [f64]) -> ParamSummary {
    values.sort_by(|a, b| a.total_cmp(b));
    ParamSummary {
        name: name.to_string(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        lower: quantile(values, 0.025),
        upper: quantile(values, 0.975),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSummary {
    pub animal: usize,
    pub behavior: u32,
    pub occupancy: usize,
    /// Occupancy above the retention threshold.
    pub retained: bool,
    pub params: Vec<ParamSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub animal: usize,
    pub from: u32,
    pub to: u32,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub behaviors: Vec<BehaviorSummary>,
    pub transitions: Vec<TransitionSummary>,
}

pub const PARAM_NAMES: [&str; 9] = ["mu_x", "mu_y", "eta_x", "eta_y", "sigma_xx", "sigma_xy", "sigma_yy", "tau", "rho"];

fn flatten(t: &StapParams) -> [f64; 9] {
    [t.mu.x, t.mu.y, t.eta.x, t.eta.y, t.sigma[(0, 0)], t.sigma[(0, 1)], t.sigma[(1, 1)], t.tau, t.rho]
}

/// Posterior means and 95% intervals per behavior, occupancies, and
/// Rao-Blackwellized transition probabilities among point-estimate
/// behaviors.
pub fn summarize(draws: &PosteriorDraws, partition: &Partition, occupancy_threshold: usize) -> Summary {
    let mut values: Vec<Vec<Vec<Vec<f64>>>> =
        (0..partition.labels.len()).map(|j| vec![vec![Vec::new(); 9]; partition.k(j)]).collect();
    let mut trans: Vec<Vec<Vec<f64>>> =
        (0..partition.labels.len()).map(|j| vec![vec![0.0; partition.k(j)]; partition.k(j)]).collect();
    let nd = draws.draws.len() as f64;
    for d in &draws.draws {
        let reps = representatives(d, partition);
        let map = d.behavior_map();
        let (alpha, nu) = (d.hyper.alpha(), d.hyper.nu());
        for (j, r) in reps.iter().enumerate() {
            for (k, id) in r.iter().enumerate() {
                for (p, v) in flatten(&map[id].theta).into_iter().enumerate() {
                    values[j][k][p].push(v);
                }
            }
            let mut n: FxHashMap<(u32, u32), f64> = FxHashMap::default();
            let mut tot: FxHashMap<u32, f64> = FxHashMap::default();
            for w in d.paths[j].windows(2) {
                *n.entry((w[0], w[1])).or_default() += 1.0;
                *tot.entry(w[0]).or_default() += 1.0;
            }
            for (a, &ia) in r.iter().enumerate() {
                for (b, &ib) in r.iter().enumerate() {
                    let beta = map[&ib].weight;
                    let num = alpha * beta + if ia == ib { nu } else { 0.0 } + n.get(&(ia, ib)).copied().unwrap_or(0.0);
                    let den = alpha + nu + tot.get(&ia).copied().unwrap_or(0.0);
                    trans[j][a][b] += num / den / nd;
                }
            }
        }
    }
    let mut behaviors = Vec::new();
    let mut transitions = Vec::new();
    for j in 0..partition.labels.len() {
        let occ = partition.occupancy(j);
        for k in 0..partition.k(j) {
            let params = values[j][k].iter_mut().zip(PARAM_NAMES).map(|(v, name)| param_summary(name, v)).collect();
            behaviors.push(BehaviorSummary {
                animal: j,
                behavior: k as u32 + 1,
                occupancy: occ[k],
                retained: occ[k] > occupancy_threshold,
                params,
            });
            for b in 0..partition.k(j) {
                transitions.push(TransitionSummary { animal: j, from: k as u32 + 1, to: b as u32 + 1, mean: trans[j][k][b] });
            }
        }
    }
    Summary { behaviors, transitions }
}

/// Labels referenced anywhere in the draws, per group.
pub fn occupied_labels(draws: &PosteriorDraws) -> FxHashSet<(usize, CompositeLabel)> {
    draws.draws.iter().flat_map(|d| d.behaviors.iter().map(|b| (b.group, b.label))).collect()
}
