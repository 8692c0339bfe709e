//! End-to-end runs: synthesize records, estimate from records, score an
//! estimate against ground truth.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use urt_estimate::afc::{aggregate, aggregate_trimmed, AfcRecord, IntervalSpec, ObservationTable};
use urt_estimate::completion::{impute_table, CellLayout, SoftImputeConfig};
use urt_estimate::estimator::{fit, r_squared, EstimationResult, EstimatorConfig, Problem};
use urt_estimate::network::{
    load_link_table, read_link_table, read_snapshot, ExpandedNetwork, OdPair, PriorTimes,
};
use urt_estimate::paths::{enumerate_paths, PathSearchConfig, PathSet};
use urt_estimate::rng::{derive_seed, label};
use urt_estimate::synth::{
    build_fig3_network, build_fig8_network, perturb, sample_afc, sample_ground_truth,
    DemandProfile, GroundTruth, Perturbation, RouteLabel, TruthRanges,
};
use urt_estimate::vectorize::{
    build_incidence, coverage_report, CoverageReport, Incidence, RowIndex, Variable, VariableIndex,
};
use urt_estimate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkSource {
    Fig3,
    Fig8,
    /// A link-table CSV or a JSON network snapshot.
    File(PathBuf),
}

impl NetworkSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "fig3" => NetworkSource::Fig3,
            "fig8" => NetworkSource::Fig8,
            other => NetworkSource::File(PathBuf::from(other)),
        }
    }

    pub fn load(&self) -> Result<ExpandedNetwork> {
        match self {
            NetworkSource::Fig3 => Ok(build_fig3_network()),
            NetworkSource::Fig8 => Ok(build_fig8_network()),
            NetworkSource::File(path) => {
                let reader = BufReader::new(File::open(path)?);
                if path.extension().is_some_and(|e| e == "json") {
                    read_snapshot(reader)
                } else {
                    load_link_table(&read_link_table(reader)?, &PriorTimes::default())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandShape {
    Peaked,
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub base_records_per_cell: usize,
    pub demand: DemandShape,
    pub noise_fraction: f64,
    pub od_deletion_fraction: f64,
    pub theta: f64,
    pub paths: PathSearchConfig,
    pub intervals: IntervalSpec,
    pub truth_ranges: TruthRanges,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            base_records_per_cell: 200,
            demand: DemandShape::Peaked,
            noise_fraction: 0.0,
            od_deletion_fraction: 0.0,
            theta: urt_estimate::synth::DEFAULT_THETA,
            paths: PathSearchConfig::default(),
            intervals: IntervalSpec::default(),
            truth_ranges: TruthRanges::default(),
            seed: 0,
        }
    }
}

pub struct Synthesized {
    pub truth: GroundTruth,
    pub paths: PathSet,
    /// Records after noise and deletion.
    pub records: Vec<AfcRecord>,
    pub labels: Vec<RouteLabel>,
    pub deleted_ods: Vec<OdPair>,
    pub skipped_ods: Vec<OdPair>,
}

/// Sub-seeds for the stages of a synthetic run, all derived from one seed.
pub fn stage_seeds(seed: u64) -> (u64, u64, u64) {
    (
        derive_seed(seed, &[label::GROUND_TRUTH]),
        derive_seed(seed, &[label::SAMPLE_CELL]),
        derive_seed(seed, &[label::NOISE]),
    )
}

pub fn synthesize(net: &ExpandedNetwork, cfg: &SynthConfig) -> Result<Synthesized> {
    let (truth_seed, sample_seed, perturb_seed) = stage_seeds(cfg.seed);
    let mut truth = sample_ground_truth(net, &cfg.intervals, &cfg.truth_ranges, truth_seed)?;
    truth.theta = cfg.theta;
    let ods = net.all_od_pairs();
    let paths = enumerate_paths(net, &ods, &cfg.paths, &net.prior_times())?;
    let demand = match cfg.demand {
        DemandShape::Peaked => {
            DemandProfile::peaked(cfg.base_records_per_cell, cfg.intervals.count)
        }
        DemandShape::Flat => DemandProfile::flat(cfg.base_records_per_cell, cfg.intervals.count),
    };
    let sampled = sample_afc(&paths, &ods, &truth, &demand, &cfg.intervals, sample_seed)?;
    let perturbed = perturb(
        &sampled.records,
        &Perturbation {
            noise_fraction: cfg.noise_fraction,
            od_deletion_fraction: cfg.od_deletion_fraction,
            seed: perturb_seed,
        },
    )?;
    let deleted: std::collections::BTreeSet<OdPair> =
        perturbed.deleted_ods.iter().copied().collect();
    let labels = sampled
        .labels
        .into_iter()
        .filter(|l| !deleted.contains(&l.od))
        .collect();
    Ok(Synthesized {
        truth,
        paths,
        records: perturbed.records,
        labels,
        deleted_ods: perturbed.deleted_ods,
        skipped_ods: sampled.skipped_ods,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    pub intervals: IntervalSpec,
    pub paths: PathSearchConfig,
    pub impute: bool,
    pub impute_layout: CellLayout,
    pub imputed_weight: f64,
    pub soft_impute: SoftImputeConfig,
    /// Optional per-cell percentile band applied before averaging.
    pub trim_percentiles: Option<(f64, f64)>,
    pub estimator: EstimatorConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            intervals: IntervalSpec::default(),
            paths: PathSearchConfig::default(),
            impute: false,
            impute_layout: CellLayout::OriginByDestinationInterval,
            imputed_weight: 0.5,
            soft_impute: SoftImputeConfig::default(),
            trim_percentiles: None,
            estimator: EstimatorConfig::default(),
        }
    }
}

pub struct Estimate {
    pub table: ObservationTable,
    pub paths: PathSet,
    pub index: VariableIndex,
    pub rows: RowIndex,
    pub a: Incidence,
    pub coverage: CoverageReport,
    pub c_tilde: Vec<f64>,
    pub weights: Vec<f64>,
    pub priors: Vec<f64>,
    pub result: EstimationResult,
    pub imputed_cells: usize,
}

/// Aggregates records, applying the optional percentile trim.
pub fn aggregate_records(records: &[AfcRecord], cfg: &EstimateConfig) -> Result<ObservationTable> {
    match cfg.trim_percentiles {
        Some((lo, hi)) => aggregate_trimmed(records, &cfg.intervals, lo, hi),
        None => Ok(aggregate(records, &cfg.intervals)),
    }
}

/// Fills missing cells when imputation is enabled. Returns the table and the
/// number of imputed cells.
pub fn complete(
    net: &ExpandedNetwork,
    table: ObservationTable,
    cfg: &EstimateConfig,
) -> Result<(ObservationTable, usize)> {
    if !cfg.impute || table.is_empty() {
        return Ok((table, 0));
    }
    let ods = net.all_od_pairs();
    let (completed, _) = impute_table(&table, &ods, cfg.impute_layout, &cfg.soft_impute)?;
    let imputed = completed.rows.values().filter(|c| c.imputed).count();
    Ok((completed, imputed))
}

pub fn estimate(
    net: &ExpandedNetwork,
    records: &[AfcRecord],
    cfg: &EstimateConfig,
) -> Result<Estimate> {
    let table = aggregate_records(records, cfg)?;
    let (table, imputed_cells) = complete(net, table, cfg)?;
    estimate_table(net, table, imputed_cells, cfg)
}

pub fn estimate_table(
    net: &ExpandedNetwork,
    table: ObservationTable,
    imputed_cells: usize,
    cfg: &EstimateConfig,
) -> Result<Estimate> {
    if !(cfg.imputed_weight.is_finite() && cfg.imputed_weight >= 0.0) {
        return Err(Error::Config(format!(
            "imputed weight {}",
            cfg.imputed_weight
        )));
    }
    let ods = table.od_pairs();
    let paths = enumerate_paths(net, &ods, &cfg.paths, &net.prior_times())?;
    let index = VariableIndex::build(net, cfg.intervals.count);
    let rows = RowIndex::build(table.rows.keys().copied(), &paths);
    if rows.n_od_rows() == 0 {
        return Err(Error::NoObservations);
    }
    let a = build_incidence(&paths, &index, &rows)?;
    let coverage = coverage_report(&a);
    let mut c_tilde = Vec::with_capacity(rows.n_od_rows());
    let mut weights = Vec::with_capacity(rows.n_od_rows());
    for &(od, h) in &rows.od_rows {
        let cell = table.get(od, h).expect("rows come from the table");
        c_tilde.push(cell.mean_travel_min);
        weights.push(if cell.imputed {
            cfg.imputed_weight
        } else {
            1.0
        });
    }
    let priors = index.prior_vector(net);
    let problem = Problem {
        a: &a,
        rows: &rows,
        c_tilde: &c_tilde,
        weights: &weights,
        priors: &priors,
        n_link_columns: index.n_link_columns(),
    };
    let result = fit(&problem, &cfg.estimator)?;
    Ok(Estimate {
        table,
        paths,
        index,
        rows,
        a,
        coverage,
        c_tilde,
        weights,
        priors,
        result,
        imputed_cells,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2_t: Option<f64>,
    pub r2_link: Option<f64>,
    pub r2_wait: Option<f64>,
    pub r2_path: Option<f64>,
    pub mae_t: f64,
    pub mae_link: f64,
    pub mae_wait: f64,
    pub mae_path: f64,
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Scores `t_hat` against the truth. Path scores use the rows of `a`.
pub fn score(index: &VariableIndex, t_hat: &[f64], t_true: &[f64], a: &Incidence) -> Metrics {
    let links = index.link_range();
    let waits = index.wait_range();
    let true_path = a.mul(t_true);
    let est_path = a.mul(t_hat);
    Metrics {
        r2_t: r_squared(t_hat, t_true).ok(),
        r2_link: r_squared(&t_hat[links.clone()], &t_true[links.clone()]).ok(),
        r2_wait: r_squared(&t_hat[waits.clone()], &t_true[waits.clone()]).ok(),
        r2_path: r_squared(&est_path, &true_path).ok(),
        mae_t: mae(t_hat, t_true),
        mae_link: mae(&t_hat[links.clone()], &t_true[links]),
        mae_wait: mae(&t_hat[waits.clone()], &t_true[waits]),
        mae_path: mae(&est_path, &true_path),
    }
}

pub fn check_truth(index: &VariableIndex, truth: &GroundTruth) -> Result<()> {
    if *index != truth.index {
        return Err(Error::DimensionMismatch(
            "ground truth was generated for a different variable index".into(),
        ));
    }
    Ok(())
}

/// Per-variable description used in result files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableInfo {
    pub column: usize,
    pub name: String,
    pub class: String,
    pub station: u32,
    pub direction: Option<String>,
    pub interval: Option<usize>,
}

pub fn describe_variables(net: &ExpandedNetwork, index: &VariableIndex) -> Vec<VariableInfo> {
    index
        .variables()
        .into_iter()
        .enumerate()
        .map(|(column, v)| match v {
            Variable::Link(l) => {
                let link = net.link(l);
                VariableInfo {
                    column,
                    name: index.name(column, net),
                    class: link.kind.as_str().to_string(),
                    station: net.node(link.tail).station_id,
                    direction: None,
                    interval: None,
                }
            }
            Variable::Wait {
                platform,
                direction,
                interval,
            } => VariableInfo {
                column,
                name: index.name(column, net),
                class: "wait".to_string(),
                station: net.node(platform).station_id,
                direction: Some(direction.as_str().to_string()),
                interval: Some(interval),
            },
        })
        .collect()
}
