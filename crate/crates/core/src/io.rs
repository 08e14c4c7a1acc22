//! Data ingestion, standardization, run configuration, synthetic data, and
//! on-disk draw storage.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::base_measure::{mat2, CompositeLabel, Domain, PriorConfig};
use crate::error::{Error, Result};
use crate::hmm::{truncated_geometric, Trajectory};
use crate::mcmc::{McmcConfig, PosteriorDraws};
use crate::random::{self, stream};
use crate::stap::{bearing_angle, stap_sample, Location, StapParams};

/// One row of the input file; `x`/`y` are `None` for explicit gap rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub animal_id: String,
    /// Seconds since the Unix epoch (or any common origin).
    pub timestamp: f64,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawDataset {
    pub records: Vec<Record>,
}

impl RawDataset {
    /// Animal ids in order of first appearance.
    pub fn animals(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.animal_id) {
                out.push(r.animal_id.clone());
            }
        }
        out
    }
}

fn parse_timestamp(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp() as f64 + d.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(d) = NaiveDateTime::parse_from_str(s, fmt) {
            let u = d.and_utc();
            return Some(u.timestamp() as f64 + u.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    None
}

fn parse_coord(s: &str) -> std::result::Result<Option<f64>, String> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("invalid coordinate '{t}'")),
    }
}

/// Read `animal_id,timestamp,x,y`.
pub fn load_csv(path: &Path) -> Result<RawDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let expected = ["animal_id", "timestamp", "x", "y"];
    if header.len() != 4 || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(parse_err(1, format!("header must be {}", expected.join(","))));
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", row.len())));
        }
        let animal_id = row[0].to_string();
        if animal_id.is_empty() {
            return Err(parse_err(line, "empty animal_id".into()));
        }
        let timestamp = parse_timestamp(&row[1]).ok_or_else(|| parse_err(line, format!("invalid timestamp '{}'", &row[1])))?;
        let x = parse_coord(&row[2]).map_err(|m| parse_err(line, m))?;
        let y = parse_coord(&row[3]).map_err(|m| parse_err(line, m))?;
        if x.is_some() != y.is_some() {
            return Err(parse_err(line, "x and y must both be present or both missing".into()));
        }
        records.push(Record { animal_id, timestamp, x, y });
    }
    Ok(RawDataset { records })
}

pub fn write_csv(path: &Path, data: &RawDataset) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["animal_id", "timestamp", "x", "y"])?;
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in &data.records {
        w.write_record([r.animal_id.clone(), format!("{:?}", r.timestamp), fmt(r.x), fmt(r.y)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Regularize each animal's records onto a grid with constant `step`
/// (inferred as the smallest positive gap when `None`). Absent slots and
/// gap rows become missing locations.
pub fn to_trajectories(data: &RawDataset, step: Option<f64>) -> Result<Vec<Trajectory>> {
    let mut per: BTreeMap<usize, Vec<&Record>> = BTreeMap::new();
    let animals = data.animals();
    for r in &data.records {
        let idx = animals.iter().position(|a| *a == r.animal_id).expect("known animal");
        per.entry(idx).or_default().push(r);
    }
    let step = match step {
        Some(s) => s,
        None => {
            let mut best = f64::INFINITY;
            for recs in per.values() {
                for w in recs.windows(2) {
                    let d = w[1].timestamp - w[0].timestamp;
                    if d > 0.0 {
                        best = best.min(d);
                    }
                }
            }
            if !best.is_finite() {
                return Err(Error::TooFew { what: "records per animal", needed: 2, got: 1 });
            }
            best
        }
    };
    if !(step > 0.0) {
        return Err(Error::Config("data.step must be positive".into()));
    }
    let mut out = Vec::with_capacity(per.len());
    for (idx, recs) in per {
        let id = &animals[idx];
        let grid = |msg: String| Error::Grid { animal: id.clone(), msg };
        // drop leading gap rows; the first location must be observed
        let start = recs.iter().position(|r| r.x.is_some()).ok_or_else(|| grid("no observed location".into()))?;
        let recs = &recs[start..];
        let t0 = recs[0].timestamp;
        let mut times = vec![t0];
        let mut locs = vec![Location::new(recs[0].x.unwrap(), recs[0].y.unwrap())];
        let mut observed = vec![true];
        for w in recs.windows(2) {
            let gap = w[1].timestamp - w[0].timestamp;
            if !(gap > 0.0) {
                return Err(grid(format!("timestamps not strictly increasing at {}", w[1].timestamp)));
            }
            let k = (gap / step).round();
            if k < 1.0 || (gap - k * step).abs() > 1e-6 * step.max(1.0) {
                return Err(grid(format!("gap {gap} at {} is not a multiple of the step {step}", w[1].timestamp)));
            }
            let last = *locs.last().unwrap();
            for _ in 1..k as usize {
                times.push(t0 + step * times.len() as f64);
                locs.push(last);
                observed.push(false);
            }
            times.push(t0 + step * times.len() as f64);
            match (w[1].x, w[1].y) {
                (Some(x), Some(y)) => {
                    locs.push(Location::new(x, y));
                    observed.push(true);
                }
                _ => {
                    locs.push(last);
                    observed.push(false);
                }
            }
        }
        // trailing gap rows carry no information
        while observed.len() > 1 && !observed[observed.len() - 1] {
            times.pop();
            locs.pop();
            observed.pop();
        }
        let s0 = locs[0];
        out.push(Trajectory::new(id.clone(), times, locs, observed, s0)?);
    }
    Ok(out)
}

/// Affine map to standardized units: `(p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationTransform {
    pub center: [f64; 2],
    pub scale: f64,
}

impl StandardizationTransform {
    pub fn identity() -> Self {
        StandardizationTransform { center: [0.0, 0.0], scale: 1.0 }
    }

    pub fn apply(&self, p: &Location) -> Location {
        Location::new((p.x - self.center[0]) / self.scale, (p.y - self.center[1]) / self.scale)
    }

    pub fn inverse(&self, p: &Location) -> Location {
        Location::new(p.x * self.scale + self.center[0], p.y * self.scale + self.center[1])
    }
}

/// Center on the pooled bivariate mean of the observed locations and divide
/// by the pooled standard deviation `sqrt((SS_x + SS_y) / (2 (n - 1)))`.
pub fn fit_standardization(data: &[Trajectory]) -> Result<StandardizationTransform> {
    let pts: Vec<&Location> = data
        .iter()
        .flat_map(|t| t.locations.iter().zip(&t.observed).filter(|(_, o)| **o).map(|(p, _)| p))
        .collect();
    if pts.len() < 2 {
        return Err(Error::TooFew { what: "observed locations", needed: 2, got: pts.len() });
    }
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let ss: f64 = pts.iter().map(|p| (p.x - cx).powi(2) + (p.y - cy).powi(2)).sum();
    let scale = (ss / (2.0 * (n - 1.0))).sqrt();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::ZeroVariance);
    }
    Ok(StandardizationTransform { center: [cx, cy], scale })
}

pub fn standardize(data: &[Trajectory]) -> Result<(Vec<Trajectory>, StandardizationTransform)> {
    let tr = fit_standardization(data)?;
    Ok((apply_transform(data, &tr), tr))
}

pub fn apply_transform(data: &[Trajectory], tr: &StandardizationTransform) -> Vec<Trajectory> {
    data.iter()
        .map(|t| {
            let mut t = t.clone();
            for p in &mut t.locations {
                *p = tr.apply(p);
            }
            t.s0 = tr.apply(&t.s0);
            t
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    /// Sampling interval in seconds; inferred from the data when absent.
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Behaviors visited at most this many times are flagged.
    pub occupancy_threshold: usize,
    pub ellipse_mass: f64,
    /// Number of stored partitions scored as candidate point estimates.
    pub map_candidates: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { occupancy_threshold: 100, ellipse_mass: 0.95, map_candidates: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub priors: PriorConfig,
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))?;
        let dir = origin.parent().unwrap_or(Path::new("."));
        if cfg.data.path.is_relative() {
            cfg.data.path = dir.join(&cfg.data.path);
        }
        if let Some(o) = &cfg.output {
            if o.is_relative() {
                cfg.output = Some(dir.join(o));
            }
        }
        cfg.priors.validate()?;
        cfg.mcmc.validate()?;
        if !(cfg.analysis.ellipse_mass > 0.0 && cfg.analysis.ellipse_mass < 1.0) {
            return Err(Error::Config("analysis.ellipse_mass must lie in (0, 1)".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = RunConfig::from_toml(&text, path)?;
        if !cfg.data.path.exists() {
            return Err(Error::Config(format!("data.path {} does not exist", cfg.data.path.display())));
        }
        Ok(cfg)
    }
}

/// One behavior of a simulation truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthBehavior {
    pub name: String,
    /// Atom indices shared with other behaviors; used only to score
    /// recovered sharing.
    #[serde(default)]
    pub label: Option<[u16; 5]>,
    pub mu: [f64; 2],
    pub eta: [f64; 2],
    pub sigma: [[f64; 2]; 2],
    pub tau: f64,
    pub rho: f64,
}

impl TruthBehavior {
    pub fn theta(&self) -> Result<StapParams> {
        StapParams::new(
            Location::new(self.mu[0], self.mu[1]),
            Vector2::new(self.eta[0], self.eta[1]),
            mat2(&self.sigma),
            self.tau,
            self.rho,
        )
    }

    pub fn composite(&self) -> Option<CompositeLabel> {
        self.label.map(CompositeLabel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthAnimal {
    pub id: String,
    /// Indices into the behavior list.
    pub behaviors: Vec<usize>,
    /// Row-stochastic matrix over this animal's behaviors.
    pub transition: Vec<Vec<f64>>,
    pub start: [f64; 2],
    pub length: usize,
    /// Probability that an interior location is dropped.
    #[serde(default)]
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationTruth {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub domain: Domain,
    #[serde(default = "default_step")]
    pub step_seconds: f64,
    #[serde(default)]
    pub start_time: f64,
    pub behaviors: Vec<TruthBehavior>,
    pub animals: Vec<TruthAnimal>,
}

fn default_epsilon() -> f64 {
    0.00001
}

fn default_step() -> f64 {
    1800.0
}

impl SimulationTruth {
    pub fn validate(&self) -> Result<()> {
        for b in &self.behaviors {
            b.theta()?;
        }
        for a in &self.animals {
            let k = a.behaviors.len();
            if k == 0 || a.behaviors.iter().any(|&b| b >= self.behaviors.len()) {
                return Err(Error::Config(format!("animal {}: invalid behavior indices", a.id)));
            }
            if a.transition.len() != k || a.transition.iter().any(|r| r.len() != k) {
                return Err(Error::Config(format!("animal {}: transition must be {k}x{k}", a.id)));
            }
            for r in &a.transition {
                if r.iter().any(|p| *p < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("animal {}: transition rows must be probability vectors", a.id)));
                }
            }
            if a.length < 2 {
                return Err(Error::Config(format!("animal {}: length must be at least 2", a.id)));
            }
            if !(0.0..1.0).contains(&a.missing_rate) {
                return Err(Error::Config(format!("animal {}: missing_rate must lie in [0, 1)", a.id)));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config("epsilon must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: SimulationTruth =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        t.validate()?;
        Ok(t)
    }
}

/// A simulated data set with its generating paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub data: RawDataset,
    /// Behavior index (into the truth's list) of every state, per animal;
    /// entry 0 is the initial state.
    pub paths: Vec<Vec<usize>>,
    pub s0: Vec<Location>,
}

/// Forward simulation of the generative model.
pub fn simulate_dataset(truth: &SimulationTruth, seed: u64) -> Result<SimulatedData> {
    truth.validate()?;
    let thetas: Vec<StapParams> = truth.behaviors.iter().map(|b| b.theta()).collect::<Result<_>>()?;
    let mut out = SimulatedData { data: RawDataset::default(), paths: Vec::new(), s0: Vec::new() };
    for (j, a) in truth.animals.iter().enumerate() {
        let mut rng = stream(seed, &[j as u64]);
        let k = a.behaviors.len();
        let mut local = truncated_geometric(truth.epsilon, k as u64, &mut rng) as usize;
        let mut path = vec![a.behaviors[local]];
        let s0 = truth.domain.sample(&mut rng);
        let mut prev = s0;
        let mut cur = Location::new(a.start[0], a.start[1]);
        let mut locs = vec![cur];
        for _ in 1..a.length {
            local = random::categorical(&a.transition[local], &mut rng);
            path.push(a.behaviors[local]);
            let phi = bearing_angle(&prev, &cur).unwrap_or_default();
            let next = stap_sample(&thetas[a.behaviors[local]], &cur, phi, &mut rng);
            prev = cur;
            cur = next;
            locs.push(cur);
        }
        for (i, p) in locs.iter().enumerate() {
            let drop = i > 0 && i + 1 < locs.len() && a.missing_rate > 0.0 && rng.random::<f64>() < a.missing_rate;
            if drop {
                continue;
            }
            out.data.records.push(Record {
                animal_id: a.id.clone(),
                timestamp: truth.start_time + i as f64 * truth.step_seconds,
                x: Some(p.x),
                y: Some(p.y),
            });
        }
        out.paths.push(path);
        out.s0.push(s0);
    }
    Ok(out)
}

/// Write draws as one JSON line per stored sweep plus a label index.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("draws.jsonl");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for d in &draws.draws {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let meta = dir.join("meta.json");
    let m = serde_json::json!({ "mode": draws.mode, "animals": draws.animals });
    fs::write(&meta, serde_json::to_vec_pretty(&m)?).map_err(|e| Error::io(&meta, e))?;
    let labels = dir.join("labels.csv");
    let mut lw = csv::Writer::from_path(&labels)?;
    lw.write_record(["id", "group", "mu", "eta", "sigma", "tau", "rho"])?;
    for (id, (g, lab)) in draws.labels.iter().enumerate() {
        let mut rec = vec![id.to_string(), g.to_string()];
        rec.extend(lab.0.iter().map(|c| c.to_string()));
        lw.write_record(&rec)?;
    }
    lw.flush().map_err(|e| Error::io(&labels, e))?;
    Ok(())
}

pub fn read_draws(dir: &Path) -> Result<PosteriorDraws> {
    let meta = dir.join("meta.json");
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&meta).map_err(|e| Error::io(&meta, e))?)?;
    let mode = serde_json::from_value(m["mode"].clone())?;
    let animals = serde_json::from_value(m["animals"].clone())?;
    let labels_path = dir.join("labels.csv");
    let mut labels = Vec::new();
    let mut rdr = csv::Reader::from_path(&labels_path)?;
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| -> Result<u64> {
            row[i].parse().map_err(|_| Error::Parse { path: labels_path.clone(), line: labels.len() + 2, msg: "bad integer".into() })
        };
        labels.push((num(1)? as usize, CompositeLabel(std::array::from_fn(|c| num(2 + c).unwrap_or(0) as u16))));
    }
    let path = dir.join("draws.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let draws = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(PosteriorDraws { mode, animals, labels, draws })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn two_rows_and_gap_regularization() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "animal_id,timestamp,x,y\nd,0,1.5,2\nd,1800,1,1\n");
        assert_eq!(load_csv(&p).unwrap().records.len(), 2);
        let p = write(dir.path(), "b.csv", "animal_id,timestamp,x,y\nd,0,0,0\nd,1800,1,1\nd,5400,3,3\n");
        let t = to_trajectories(&load_csv(&p).unwrap(), Some(1800.0)).unwrap();
        assert_eq!(t[0].observed, vec![true, true, false, true]);
        let p = write(dir.path(), "c.csv", "animal_id,timestamp,x,y\nd,2024-01-01T00:00:00Z,0,0\nd,2024-01-01T00:30:00Z,,\nd,2024-01-01T01:00:00Z,1,1\n");
        let t = to_trajectories(&load_csv(&p).unwrap(), None).unwrap();
        assert_eq!(t[0].observed, vec![true, false, true]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "animal_id,timestamp,x,y\nd,0,1,2\nd,1800,oops,2\n");
        match load_csv(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "b.csv", "animal_id,timestamp,x,y\nd,0,0,0\nd,1000,1,1\nd,2500,3,3\n");
        assert!(matches!(to_trajectories(&load_csv(&p).unwrap(), Some(1000.0)), Err(Error::Grid { .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = stream(1, &[]);
        let data = RawDataset {
            records: (0..50)
                .map(|i| Record {
                    animal_id: format!("a{}", i % 3),
                    timestamp: 1.7e9 + i as f64 * 1800.0,
                    x: Some(random::std_normal(&mut rng) * 1e3),
                    y: if i == 7 { None } else { Some(random::std_normal(&mut rng) / 7.0) },
                })
                .map(|mut r| {
                    if r.y.is_none() {
                        r.x = None;
                    }
                    r
                })
                .collect(),
        };
        let p = dir.path().join("rt.csv");
        write_csv(&p, &data).unwrap();
        assert_eq!(load_csv(&p).unwrap(), data);
    }

    fn traj(points: &[(f64, f64)]) -> Trajectory {
        let n = points.len();
        Trajectory::new(
            "a",
            (0..n).map(|i| i as f64).collect(),
            points.iter().map(|&(x, y)| Location::new(x, y)).collect(),
            vec![true; n],
            Location::new(points[0].0, points[0].1),
        )
        .unwrap()
    }

    #[test]
    fn standardization_examples() {
        let (t, tr) = standardize(&[traj(&[(0.0, 0.0), (2.0, 0.0)])]).unwrap();
        assert_eq!(tr.center, [1.0, 0.0]);
        assert!((tr.scale - 1.0).abs() < 1e-15);
        assert_eq!(t[0].locations[0], Location::new(-1.0, 0.0));
        let raw = [traj(&[(3.0, -1.0), (5.5, 2.0), (-4.0, 0.25), (1.0, 1.0)])];
        let (std, tr) = standardize(&raw).unwrap();
        let (_, again) = standardize(&std).unwrap();
        assert!(again.center.iter().all(|c| c.abs() < 1e-12) && (again.scale - 1.0).abs() < 1e-12);
        for (a, b) in std[0].locations.iter().zip(&raw[0].locations) {
            assert!((tr.inverse(a) - b).norm() < 1e-12);
        }
        assert!(matches!(standardize(&[traj(&[(1.0, 1.0), (1.0, 1.0)])]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn missing_config_field_is_named() {
        let err = RunConfig::from_toml("[data]\npath='x.csv'\n[mcmc]\nburnin=1\nthin=1\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("iterations"), "{err}");
        let err = RunConfig::from_toml("[data]\npath='x.csv'\nbogus=1\n[mcmc]\niterations=2\nburnin=1\nthin=1\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    fn one_animal_truth(rows: Vec<Vec<f64>>, behaviors: Vec<TruthBehavior>, length: usize) -> SimulationTruth {
        let k = rows.len();
        SimulationTruth {
            epsilon: 0.5,
            domain: Domain::default(),
            step_seconds: 60.0,
            start_time: 0.0,
            behaviors,
            animals: vec![TruthAnimal { id: "a".into(), behaviors: (0..k).collect(), transition: rows, start: [3.0, 3.0], length, missing_rate: 0.0 }],
        }
    }

    fn behavior(mu: [f64; 2], tau: f64, sd: f64) -> TruthBehavior {
        TruthBehavior { name: "b".into(), label: None, mu, eta: [0.0, 0.0], sigma: [[sd * sd, 0.0], [0.0, sd * sd]], tau, rho: 0.0 }
    }

    #[test]
    fn simulated_track_contracts_to_attractor() {
        let truth = one_animal_truth(vec![vec![1.0]], vec![behavior([0.0, 0.0], 0.9, 0.01)], 30);
        let sim = simulate_dataset(&truth, 1).unwrap();
        let last = sim.data.records.last().unwrap();
        assert!(last.x.unwrap().hypot(last.y.unwrap()) < 0.1);
        assert_eq!(sim, simulate_dataset(&truth, 1).unwrap());
    }

    #[test]
    fn simulated_transition_frequencies() {
        let rows = vec![vec![0.9, 0.1], vec![0.3, 0.7]];
        let b = vec![behavior([0.0, 0.0], 0.5, 0.1), behavior([1.0, 1.0], 0.5, 0.1)];
        let sim = simulate_dataset(&one_animal_truth(rows.clone(), b, 100_000), 2).unwrap();
        let p = &sim.paths[0];
        for from in 0..2 {
            let n: usize = p.windows(2).filter(|w| w[0] == from).count();
            for to in 0..2 {
                let c = p.windows(2).filter(|w| w[0] == from && w[1] == to).count();
                let f = c as f64 / n as f64;
                let se = (rows[from][to] * (1.0 - rows[from][to]) / n as f64).sqrt();
                assert!((f - rows[from][to]).abs() < 4.0 * se);
            }
        }
    }
}
