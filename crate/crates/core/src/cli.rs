//! Subcommand implementations behind the `stap-hmm` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    behavior_ellipse, dic, icl_terms, map_partition, sharing_matrix, summarize, DicVariant, Ellipse, Partition,
};
use crate::base_measure::{BaseMeasureMode, Family};
use crate::error::{Error, Result};
use crate::hmm::Trajectory;
use crate::io::{
    apply_transform, fit_standardization, load_csv, read_draws, simulate_dataset, to_trajectories, write_csv, write_draws,
    RunConfig, SimulationTruth, StandardizationTransform,
};
use crate::mcmc::{PosteriorDraws, Sampler};
use crate::stap::Location;

/// Command-line overrides of a run configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<BaseMeasureMode>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.mcmc.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        if let Some(m) = self.mode {
            cfg.mcmc.mode = m;
        }
        if let Some(t) = self.threads {
            cfg.mcmc.threads = Some(t);
        }
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Trajectories in model units plus the transform back to data units.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Vec<Trajectory>, StandardizationTransform)> {
    let raw = load_csv(&cfg.data.path)?;
    let trajs = to_trajectories(&raw, cfg.data.step)?;
    let tr = if cfg.data.standardize { fit_standardization(&trajs)? } else { StandardizationTransform::identity() };
    Ok((apply_transform(&trajs, &tr), tr))
}

/// `simulate`: write `data.csv` and `truth_paths.csv` into `out`.
pub fn cmd_simulate(truth_path: &Path, seed: u64, out: &Path) -> Result<()> {
    let truth = SimulationTruth::load(truth_path)?;
    let sim = simulate_dataset(&truth, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_csv(&out.join("data.csv"), &sim.data)?;
    let p = out.join("truth_paths.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["animal_id", "index", "behavior"])?;
    for (a, path) in truth.animals.iter().zip(&sim.paths) {
        for (i, b) in path.iter().enumerate() {
            w.write_record([a.id.clone(), i.to_string(), truth.behaviors[*b].name.clone()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(())
}

fn run_chain(cfg: &RunConfig, data: Vec<Trajectory>, log: &Path) -> Result<PosteriorDraws> {
    let mut w = create(log)?;
    let draws = Sampler::new(data, cfg.priors.clone(), cfg.mcmc.clone())?.run(Some(&mut w))?;
    w.flush().map_err(|e| Error::io(log, e))?;
    Ok(draws)
}

/// `fit`: run the chain, store draws, the progress log and the transform.
pub fn cmd_fit(cfg: &RunConfig) -> Result<PathBuf> {
    let out = out_dir(cfg);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let (data, tr) = prepare_data(cfg)?;
    let draws = run_chain(cfg, data, &out.join("progress.csv"))?;
    write_draws(&out.join("draws"), &draws)?;
    let tp = out.join("transform.json");
    fs::write(&tp, serde_json::to_vec_pretty(&tr)?).map_err(|e| Error::io(&tp, e))?;
    Ok(out)
}

/// Model-comparison criteria of one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Criteria {
    pub mode: BaseMeasureMode,
    pub icl: f64,
    pub dic5: f64,
    pub dic7: f64,
}

pub fn criteria(draws: &PosteriorDraws, partition: &Partition, data: &[Trajectory]) -> Criteria {
    Criteria {
        mode: draws.mode,
        icl: icl_terms(draws, partition, data).icl(),
        dic5: dic(draws, data, DicVariant::Five),
        dic7: dic(draws, data, DicVariant::Seven),
    }
}

fn write_criteria(path: &Path, rows: &[Criteria]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "icl", "dic5", "dic7"])?;
    for c in rows {
        w.write_record([c.mode.name().to_string(), format!("{:?}", c.icl), format!("{:?}", c.dic5), format!("{:?}", c.dic7)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct EllipseRecord {
    animal_id: String,
    timestamp: f64,
    behavior: u32,
    #[serde(flatten)]
    ellipse: Ellipse,
}

/// `summarize`: regenerate every posterior table from stored draws.
pub fn cmd_summarize(cfg: &RunConfig) -> Result<PathBuf> {
    let out = out_dir(cfg);
    let draws = read_draws(&out.join("draws"))?;
    let (data, tr) = prepare_data(cfg)?;
    let a = &cfg.analysis;
    let part = map_partition(&draws, a.map_candidates)?;

    let p = out.join("map_partition.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["animal_id", "timestamp", "behavior"])?;
    for (j, t) in data.iter().enumerate() {
        for (i, l) in part.labels[j].iter().enumerate() {
            w.write_record([t.animal_id.clone(), format!("{:?}", t.times[i + 1]), l.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    let summary = summarize(&draws, &part, a.occupancy_threshold);
    let p = out.join("summary_params.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["animal_id", "behavior", "occupancy", "retained", "parameter", "mean", "lower95", "upper95"])?;
    for b in &summary.behaviors {
        for q in &b.params {
            w.write_record([
                draws.animals[b.animal].clone(),
                b.behavior.to_string(),
                b.occupancy.to_string(),
                b.retained.to_string(),
                q.name.clone(),
                format!("{:?}", q.mean),
                format!("{:?}", q.lower),
                format!("{:?}", q.upper),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    let p = out.join("transitions.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["animal_id", "from", "to", "probability"])?;
    for t in &summary.transitions {
        w.write_record([draws.animals[t.animal].clone(), t.from.to_string(), t.to.to_string(), format!("{:?}", t.mean)])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    for f in Family::ALL {
        let sm = sharing_matrix(&draws, &part, f);
        let p = out.join(format!("sharing_{}.csv", f.name()));
        let mut w = csv::Writer::from_path(&p)?;
        let names: Vec<String> = sm.behaviors.iter().map(|(j, k)| format!("{}:{k}", draws.animals[*j])).collect();
        let mut header = vec![String::new()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in names.iter().zip(&sm.entries) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
    }

    let means = crate::analysis::behavior_means(&draws, &part);
    let mut ellipses = Vec::new();
    for j in 0..data.len() {
        let t = &crate::analysis::mean_imputation(&draws, &data, j);
        let phis = t.bearings();
        for (i, &l) in part.labels[j].iter().enumerate() {
            let e = behavior_ellipse(&means[j][l as usize - 1], &t.locations[i], phis[i + 1], a.ellipse_mass)?;
            let c = tr.inverse(&Location::new(e.center[0], e.center[1]));
            let ellipse = Ellipse { center: [c.x, c.y], axes: [e.axes[0] * tr.scale, e.axes[1] * tr.scale], rotation: e.rotation };
            ellipses.push(EllipseRecord { animal_id: t.animal_id.clone(), timestamp: t.times[i + 1], behavior: l, ellipse });
        }
    }
    let p = out.join("ellipses.json");
    fs::write(&p, serde_json::to_vec_pretty(&ellipses)?).map_err(|e| Error::io(&p, e))?;

    write_criteria(&out.join("criteria.csv"), &[criteria(&draws, &part, &data)])?;
    Ok(out)
}

/// `compare`: fit every mode on the same data and tabulate the criteria.
pub fn cmd_compare(cfg: &RunConfig, modes: &[BaseMeasureMode]) -> Result<Vec<Criteria>> {
    let out = out_dir(cfg);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let (data, _) = prepare_data(cfg)?;
    let results: Vec<Result<Criteria>> = {
        use rayon::prelude::*;
        modes
            .par_iter()
            .map(|&mode| {
                let mut c = cfg.clone();
                c.mcmc.mode = mode;
                let draws = run_chain(&c, data.clone(), &out.join(format!("progress_{}.csv", mode.name())))?;
                let part = map_partition(&draws, c.analysis.map_candidates)?;
                Ok(criteria(&draws, &part, &data))
            })
            .collect()
    };
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_criteria(&out.join("criteria.csv"), &rows)?;
    Ok(rows)
}
