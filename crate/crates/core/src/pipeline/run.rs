use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Baselines, PipelineConfig, ViewSpec};
use crate::error::{Error, Result};
use crate::gcn::{self, EnsembleMode, GcnConfig, Supervision};
use crate::graph::AdjacencyMatrix;
use crate::io::{self, NodeDataset};
use crate::learners;
use crate::merge::{self, MergeConfig};
use crate::par;

/// View `i` trains with seed `master + VIEW_SEED_STRIDE * (i + 1) + train.seed`.
/// GCN repetition `r` uses `master + r`, for the merged graph and every
/// baseline alike.
pub const VIEW_SEED_STRIDE: u64 = 1_000;

pub const REPORT_FILE: &str = "report.json";
pub const MERGED_FILE: &str = "merged.adj";
pub const TIMINGS_FILE: &str = "timings.json";
pub const VIEWS_DIR: &str = "views";

pub fn view_seed(master: u64, index: usize, local: u64) -> u64 {
    master
        .wrapping_add(VIEW_SEED_STRIDE.wrapping_mul(index as u64 + 1))
        .wrapping_add(local)
}

/// Test accuracies of several runs with their mean and sample standard
/// deviation (zero for a single run), plus the matching validation
/// accuracies used for model selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub val_accuracies: Vec<f64>,
    pub val_mean: Option<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

impl Summary {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        Self::with_validation(accuracies, Vec::new())
    }

    pub fn with_validation(accuracies: Vec<f64>, val_accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        let val_mean = (!val_accuracies.is_empty()).then(|| mean_std(&val_accuracies).0);
        Self {
            accuracies,
            mean,
            std,
            val_accuracies,
            val_mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub label: String,
    pub edges: usize,
    pub total_weight: f64,
}

impl ViewReport {
    fn of(label: String, a: &AdjacencyMatrix) -> Self {
        Self {
            label,
            edges: a.nnz() / 2,
            total_weight: a.total_weight(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub average: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_average: Option<Summary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_max: Option<Summary>,
}

/// Everything written to `report.json`. Wall times live in `timings` and go
/// to a separate file so the report itself is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub nodes: usize,
    pub classes: usize,
    pub views: Vec<ViewReport>,
    pub merged: ViewReport,
    pub test: Summary,
    pub baselines: BaselineReport,
    pub config: PipelineConfig,
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

/// Dataset, supervision and views, ready for any number of merge and
/// classification runs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: NodeDataset,
    pub supervision: Supervision,
    pub views: Vec<AdjacencyMatrix>,
    pub labels: Vec<String>,
    pub timings: Vec<StageTiming>,
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.push(StageTiming {
        stage: stage.to_string(),
        seconds: start.elapsed().as_secs_f64(),
    });
    out
}

/// Loads the dataset and produces every view.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let (dataset, observed) = timed(&mut timings, "load", || load(cfg)).map_err(|e| e.in_stage("load"))?;
    let supervision = Supervision::from_dataset(&dataset);

    let start = Instant::now();
    let indexed: Vec<(usize, &ViewSpec)> = cfg.views.iter().enumerate().collect();
    let views = par::map_slice(&indexed, |&(i, spec)| {
        log::info!("view {i}: {spec}");
        build_view(cfg, spec, i, &dataset, observed.as_ref(), &supervision).map_err(|e| Error::View {
            index: i,
            label: spec.label(),
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()
    .map_err(|e| e.in_stage("learn"))?;
    timings.push(StageTiming {
        stage: "learn".into(),
        seconds: start.elapsed().as_secs_f64(),
    });

    Ok(Prepared {
        dataset,
        supervision,
        views,
        labels: cfg.views.iter().map(ViewSpec::label).collect(),
        timings,
    })
}

fn load(cfg: &PipelineConfig) -> Result<(NodeDataset, Option<AdjacencyMatrix>)> {
    let mut ds = io::load_dataset(&cfg.dataset)?;
    if cfg.row_normalize {
        ds = ds.with_row_normalized_features();
    }
    let needs_graph = cfg.views.iter().any(|v| !matches!(v, ViewSpec::Import { .. }));
    let observed = if needs_graph {
        let (a, diag) = io::import_adjacency(io::graph_path(&cfg.dataset), Some(ds.n()))?;
        if !diag.is_empty() {
            log::warn!("observed graph: {}", diag.summary());
        }
        Some(a)
    } else {
        None
    };
    Ok((ds, observed))
}

fn build_view(
    cfg: &PipelineConfig,
    spec: &ViewSpec,
    index: usize,
    ds: &NodeDataset,
    observed: Option<&AdjacencyMatrix>,
    sup: &Supervision,
) -> Result<AdjacencyMatrix> {
    match spec {
        ViewSpec::Observed => Ok(observed.expect("loaded when needed").clone()),
        ViewSpec::Import { path } => {
            let (a, diag) = io::import_adjacency(path, Some(ds.n()))?;
            if !diag.is_empty() {
                log::warn!("{}: {}", path.display(), diag.summary());
            }
            Ok(a)
        }
        ViewSpec::Learn { kind, train } => {
            let mut train = train.clone();
            train.seed = view_seed(cfg.seed, index, train.seed);
            let a0 = observed.expect("loaded when needed");
            let x = if train.row_normalize {
                ds.features.row_normalized()
            } else {
                ds.features.clone()
            };
            Ok(learners::train_on(*kind, x, a0, ds.num_classes(), sup, &train)?.adjacency)
        }
    }
}

/// Test accuracy of `repetitions` GCNs on `a`, seeded `seed + r`.
pub fn classify(
    prep: &Prepared,
    a: &AdjacencyMatrix,
    gcn_cfg: &GcnConfig,
    repetitions: usize,
    seed: u64,
) -> Result<Summary> {
    let prop = gcn::propagation_for(a, gcn_cfg);
    let ds = &prep.dataset;
    let test = ds.test();
    let runs = par::map_range(repetitions, |r| {
        let model = gcn::train_gcn(&prop, &ds.features, ds.num_classes(), &prep.supervision, gcn_cfg, seed.wrapping_add(r as u64))?;
        let z = model.predict(&prop, &ds.features)?;
        Ok((gcn::evaluate_accuracy(&z, &prep.supervision.labels, &test)?, model.state.best_val_accuracy))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (test, val): (Vec<f64>, Vec<f64>) = runs.into_iter().unzip();
    Ok(Summary::with_validation(test, val))
}

fn ensembles(prep: &Prepared, gcn_cfg: &GcnConfig, repetitions: usize, seed: u64) -> Result<(Summary, Summary)> {
    let ds = &prep.dataset;
    let test = ds.test();
    let val = ds.val();
    let props: Vec<_> = prep.views.iter().map(|v| gcn::propagation_for(v, gcn_cfg)).collect();
    let (mut avg, mut max) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
    for r in 0..repetitions {
        let s = seed.wrapping_add(r as u64);
        let zs = par::map_slice(&props, |prop| {
            let model = gcn::train_gcn(prop, &ds.features, ds.num_classes(), &prep.supervision, gcn_cfg, s)?;
            model.predict(prop, &ds.features)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let labels = &prep.supervision.labels;
        for (mode, out) in [(EnsembleMode::Average, &mut avg), (EnsembleMode::Max, &mut max)] {
            let z = gcn::ensemble_predict(&zs, mode)?;
            out.0.push(gcn::evaluate_accuracy(&z, labels, &test)?);
            if !val.is_empty() {
                out.1.push(gcn::evaluate_accuracy(&z, labels, &val)?);
            }
        }
    }
    Ok((Summary::with_validation(avg.0, avg.1), Summary::with_validation(max.0, max.1)))
}

/// Result of one merge and classification pass over prepared views.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub merged: AdjacencyMatrix,
    pub test: Summary,
    pub baselines: BaselineReport,
    pub timings: Vec<StageTiming>,
}

pub fn evaluate(
    prep: &Prepared,
    merge_cfg: &MergeConfig,
    gcn_cfg: &GcnConfig,
    repetitions: usize,
    seed: u64,
    baselines: &Baselines,
) -> Result<Evaluation> {
    let mut timings = Vec::new();
    let merged = timed(&mut timings, "merge", || merge::merge_graphs(&prep.views, merge_cfg))
        .map_err(|e| e.in_stage("merge"))?;
    let test = timed(&mut timings, "classify", || classify(prep, &merged, gcn_cfg, repetitions, seed))
        .map_err(|e| e.in_stage("classify"))?;
    let mut report = BaselineReport::default();
    if baselines.average {
        let avg = merge::average_merge_baseline(&prep.views).map_err(|e| e.in_stage("baseline"))?;
        report.average = Some(
            timed(&mut timings, "baseline-average", || classify(prep, &avg, gcn_cfg, repetitions, seed))
                .map_err(|e| e.in_stage("baseline"))?,
        );
    }
    if baselines.ensemble {
        let (a, m) = timed(&mut timings, "baseline-ensemble", || ensembles(prep, gcn_cfg, repetitions, seed))
            .map_err(|e| e.in_stage("baseline"))?;
        report.ensemble_average = Some(a);
        report.ensemble_max = Some(m);
    }
    Ok(Evaluation {
        merged,
        test,
        baselines: report,
        timings,
    })
}

/// Learns or imports every view, merges them, trains the classifier
/// `repetitions` times and writes `report.json`, `merged.adj`,
/// `timings.json` and one `.adj` per view into the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    let prep = prepare(cfg)?;
    let merge_cfg = cfg.merge.resolve(prep.dataset.num_classes());
    let eval = evaluate(&prep, &merge_cfg, &cfg.gcn, cfg.repetitions, cfg.seed, &cfg.baselines)?;

    let mut resolved = cfg.clone();
    resolved.merge.p = Some(merge_cfg.p);
    let mut timings = prep.timings.clone();
    timings.extend(eval.timings.iter().cloned());
    let report = RunReport {
        dataset: prep.dataset.meta.name.clone(),
        nodes: prep.dataset.n(),
        classes: prep.dataset.num_classes(),
        views: prep
            .labels
            .iter()
            .zip(&prep.views)
            .map(|(l, v)| ViewReport::of(l.clone(), v))
            .collect(),
        merged: ViewReport::of("merged".into(), &eval.merged),
        test: eval.test.clone(),
        baselines: eval.baselines.clone(),
        config: resolved,
        timings,
    };
    write_outputs(&cfg.output, &report, &prep, &eval.merged).map_err(|e| e.in_stage("write"))?;
    Ok(report)
}

fn view_file_name(index: usize, label: &str) -> String {
    let stem: String = label
        .split(':')
        .next()
        .unwrap_or("view")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{index:02}-{stem}.adj")
}

fn write_outputs(dir: &Path, report: &RunReport, prep: &Prepared, merged: &AdjacencyMatrix) -> Result<()> {
    fs::create_dir_all(dir.join(VIEWS_DIR)).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    fs::write(dir.join(REPORT_FILE), json).map_err(|e| Error::io(dir.join(REPORT_FILE), e))?;
    let timings = serde_json::to_string_pretty(&report.timings).expect("timings serialize") + "\n";
    fs::write(dir.join(TIMINGS_FILE), timings).map_err(|e| Error::io(dir.join(TIMINGS_FILE), e))?;
    io::export_adjacency(merged, dir.join(MERGED_FILE))?;
    for (i, (label, v)) in prep.labels.iter().zip(&prep.views).enumerate() {
        io::export_adjacency(v, dir.join(VIEWS_DIR).join(view_file_name(i, label)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_uses_the_sample_deviation() {
        let s = Summary::from_accuracies(vec![0.8, 0.82, 0.84]);
        assert!((s.mean - 0.82).abs() < 1e-15);
        assert!((s.std - 0.02).abs() < 1e-12);
        assert_eq!(Summary::from_accuracies(vec![0.5]).std, 0.0);
        let v = Summary::with_validation(vec![0.5, 0.6], vec![0.7, 0.9]);
        assert!((v.val_mean.unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(s.val_mean, None);
    }

    #[test]
    fn seeds_are_separated_per_view() {
        assert_eq!(view_seed(0, 0, 0), 1_000);
        assert_eq!(view_seed(7, 2, 5), 3_012);
        assert_ne!(view_seed(3, 0, 0), view_seed(3, 1, 0));
    }

    #[test]
    fn view_files_are_named_by_kind() {
        assert_eq!(view_file_name(0, "gat"), "00-gat.adj");
        assert_eq!(view_file_name(12, "import:/tmp/x.adj"), "12-import.adj");
    }
}
