//! The four subcommands and their file outputs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use urt_estimate::afc::{
    stream_afc, write_afc, write_table, Aggregator, IntervalSpec, ParseSummary,
};
use urt_estimate::estimator::{EstimatorConfig, Init, PRefresh};
use urt_estimate::network::write_link_table;
use urt_estimate::paths::PathSearchConfig;
use urt_estimate::synth::GroundTruth;
use urt_estimate::vectorize::{write_incidence, Incidence, IndexManifest, VariableIndex};

use crate::manifest::RunManifest;
use crate::pipeline::{
    self, describe_variables, DemandShape, EstimateConfig, Metrics, NetworkSource, SynthConfig,
    VariableInfo,
};
use crate::{
    CliError, CliResult, Demand, EstimateArgs, EvaluateArgs, IntervalArgs, Refresh,
    SensitivityArgs, SynthArgs,
};

fn fraction(name: &str, v: f64) -> CliResult<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::Usage(format!(
            "{name} must be in [0, 1], got {v}"
        )))
    }
}

fn interval_spec(w: &IntervalArgs) -> CliResult<IntervalSpec> {
    IntervalSpec::new(w.start, w.width, w.intervals).map_err(|e| CliError::Usage(e.to_string()))
}

fn path_config(k: usize) -> CliResult<PathSearchConfig> {
    if k == 0 {
        return Err(CliError::Usage("k must be positive".into()));
    }
    Ok(PathSearchConfig {
        k,
        ..PathSearchConfig::default()
    })
}

fn json_bytes(value: &impl Serialize) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> CliResult<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

/// Ground truth with readable variable names.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub truth: GroundTruth,
    pub variables: Vec<VariableInfo>,
}

#[derive(Serialize)]
struct PerturbationFile<'a> {
    seed: u64,
    noise_fraction: f64,
    od_deletion_fraction: f64,
    deleted_ods: &'a [urt_estimate::network::OdPair],
    skipped_ods: &'a [urt_estimate::network::OdPair],
}

pub fn synth(args: &SynthArgs, argv: Vec<String>) -> CliResult<()> {
    let cfg = SynthConfig {
        base_records_per_cell: args.base_records,
        demand: match args.demand {
            Demand::Peaked => DemandShape::Peaked,
            Demand::Flat => DemandShape::Flat,
        },
        noise_fraction: fraction("--noise", args.noise)?,
        od_deletion_fraction: fraction("--delete-od", args.delete_od)?,
        theta: args.theta,
        paths: path_config(args.k)?,
        intervals: interval_spec(&args.window)?,
        seed: args.seed,
        ..SynthConfig::default()
    };
    if !(args.theta.is_finite() && args.theta > 0.0) {
        return Err(CliError::Usage("--theta must be positive".into()));
    }
    let source = NetworkSource::parse(&args.network);
    let mut manifest = RunManifest::new(argv, &(&source, &cfg), Some(args.seed));
    if let NetworkSource::File(p) = &source {
        manifest.add_input(p)?;
    }
    let net = manifest.time("load_network", || source.load())?;
    let out = manifest.time("synthesize", || pipeline::synthesize(&net, &cfg))?;

    fs::create_dir_all(&args.out)?;
    let mut afc = Vec::new();
    write_afc(&mut afc, &out.records)?;
    manifest.write_output(&args.out, "afc.csv", &afc)?;
    let truth = TruthFile {
        variables: describe_variables(&net, &out.truth.index),
        truth: out.truth,
    };
    manifest.write_output(&args.out, "truth.json", &json_bytes(&truth)?)?;
    manifest.write_output(&args.out, "routes.json", &json_bytes(&out.labels)?)?;
    let perturbation = PerturbationFile {
        seed: pipeline::stage_seeds(args.seed).2,
        noise_fraction: cfg.noise_fraction,
        od_deletion_fraction: cfg.od_deletion_fraction,
        deleted_ods: &out.deleted_ods,
        skipped_ods: &out.skipped_ods,
    };
    manifest.write_output(&args.out, "perturbation.json", &json_bytes(&perturbation)?)?;
    let mut table = Vec::new();
    write_link_table(&mut table, net.link_table())?;
    manifest.write_output(&args.out, "network.csv", &table)?;
    manifest.save(&args.out)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariableEstimate {
    #[serde(flatten)]
    pub info: VariableInfo,
    pub prior: f64,
    pub estimate: f64,
    pub updated: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OdRowOut {
    pub origin: u32,
    pub destination: u32,
    pub interval: usize,
    pub observed: f64,
    pub estimated: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathRowOut {
    pub origin: u32,
    pub destination: u32,
    pub interval: usize,
    pub rank: usize,
    pub path_id: usize,
    pub columns: Vec<usize>,
    pub estimated: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub total_columns: usize,
    pub uncovered: Vec<usize>,
    pub rank: Option<usize>,
    pub rank_deficient: bool,
}

/// Everything `evaluate` needs, with no reference to the network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub index: VariableIndex,
    pub variables: Vec<VariableEstimate>,
    pub t_hat: Vec<f64>,
    pub theta_hat: f64,
    pub initial_loss: f64,
    pub loss_history: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    pub r2_od: Option<f64>,
    pub imputed_cells: usize,
    pub coverage: CoverageSummary,
    pub parse: Option<ParseSummary>,
    pub out_of_window: usize,
    pub od_rows: Vec<OdRowOut>,
    pub path_rows: Vec<PathRowOut>,
    pub metrics: Option<Metrics>,
}

impl ResultFile {
    pub fn incidence(&self) -> Incidence {
        let rows: Vec<Vec<usize>> = self.path_rows.iter().map(|p| p.columns.clone()).collect();
        Incidence::from_rows(self.index.total_columns(), &rows)
    }
}

#[derive(Serialize)]
struct ScatterT<'a> {
    column: usize,
    name: &'a str,
    class: &'a str,
    truth: f64,
    estimated: f64,
}

#[derive(Serialize)]
struct ScatterPath {
    origin: u32,
    destination: u32,
    interval: usize,
    rank: usize,
    truth: f64,
    estimated: f64,
}

fn estimate_config(args: &EstimateArgs) -> CliResult<EstimateConfig> {
    let mut estimator: EstimatorConfig = match &args.config {
        Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
        None => EstimatorConfig::default(),
    };
    if let Some(v) = args.learning_rate {
        estimator.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        estimator.batch_size = v;
    }
    if let Some(v) = args.epochs {
        estimator.max_epochs = v;
    }
    if let Some(v) = args.theta {
        estimator.theta_init = v;
    }
    if args.learn_theta {
        estimator.theta_learnable = true;
    }
    if args.random_init {
        estimator.init = Init::Random;
    }
    if let Some(r) = args.p_refresh {
        estimator.p_refresh = match r {
            Refresh::Batch => PRefresh::Batch,
            Refresh::Epoch => PRefresh::Epoch,
        };
    }
    estimator.seed = args.seed;
    estimator
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = EstimateConfig {
        intervals: interval_spec(&args.window)?,
        paths: path_config(args.k)?,
        impute: args.impute,
        estimator,
        ..EstimateConfig::default()
    };
    if let Some(w) = args.imputed_weight {
        cfg.imputed_weight = w;
    }
    Ok(cfg)
}

pub fn estimate(args: &EstimateArgs, argv: Vec<String>) -> CliResult<()> {
    let cfg = estimate_config(args)?;
    let source = NetworkSource::parse(&args.network);
    let mut manifest = RunManifest::new(argv, &(&source, &cfg), Some(args.seed));
    if let NetworkSource::File(p) = &source {
        manifest.add_input(p)?;
    }
    manifest.add_input(&args.afc)?;
    if let Some(p) = &args.truth {
        manifest.add_input(p)?;
    }
    if let Some(p) = &args.config {
        manifest.add_input(p)?;
    }

    let net = manifest.time("load_network", || source.load())?;
    let truth: Option<TruthFile> = match &args.truth {
        Some(p) => Some(serde_json::from_reader(BufReader::new(File::open(p)?))?),
        None => None,
    };

    // Streamed straight into the aggregator: memory grows with the number
    // of active cells, not with the number of records.
    let (table, parse, out_of_window) = manifest.time("ingest", || -> CliResult<_> {
        let reader = BufReader::new(File::open(&args.afc)?);
        match cfg.trim_percentiles {
            None => {
                let mut agg = Aggregator::new(cfg.intervals);
                let summary = stream_afc(reader, Some(&net), |r| agg.push(&r))?;
                Ok((agg.finish(), summary, agg.out_of_window()))
            }
            Some(_) => {
                let (records, summary) = urt_estimate::afc::parse_afc(reader, Some(&net))?;
                let table = pipeline::aggregate_records(&records, &cfg)?;
                let kept = table.total_count();
                Ok((table, summary.clone(), summary.valid - kept))
            }
        }
    })?;
    let (table, imputed_cells) =
        manifest.time("impute", || pipeline::complete(&net, table, &cfg))?;
    let est = manifest.time("estimate", || {
        pipeline::estimate_table(&net, table, imputed_cells, &cfg)
    })?;
    if est.coverage.uncovered.len() == est.coverage.total_columns {
        return Err(urt_estimate::Error::NoObservations.into());
    }

    let metrics = match &truth {
        Some(tf) => {
            pipeline::check_truth(&est.index, &tf.truth)?;
            Some(pipeline::score(
                &est.index,
                &est.result.t_hat,
                &tf.truth.t,
                &est.a,
            ))
        }
        None => None,
    };

    fs::create_dir_all(&args.out)?;
    let infos = describe_variables(&net, &est.index);
    let not_updated: std::collections::BTreeSet<usize> =
        est.result.not_updated.iter().copied().collect();
    let variables: Vec<VariableEstimate> = infos
        .iter()
        .map(|info| VariableEstimate {
            info: info.clone(),
            prior: est.priors[info.column],
            estimate: est.result.t_hat[info.column],
            updated: !not_updated.contains(&info.column),
        })
        .collect();
    let od_rows: Vec<OdRowOut> = est
        .rows
        .od_rows
        .iter()
        .enumerate()
        .map(|(i, &(od, h))| OdRowOut {
            origin: od.origin,
            destination: od.destination,
            interval: h,
            observed: est.c_tilde[i],
            estimated: est.result.c_hat[i],
            weight: est.weights[i],
        })
        .collect();
    let est_path = est.a.mul(&est.result.t_hat);
    let path_rows: Vec<PathRowOut> = est
        .rows
        .path_rows
        .iter()
        .enumerate()
        .map(|(r, pr)| {
            let (od, h) = est.rows.od_rows[pr.od_row];
            PathRowOut {
                origin: od.origin,
                destination: od.destination,
                interval: h,
                rank: pr.rank,
                path_id: pr.path_id,
                columns: est.a.row(r).to_vec(),
                estimated: est_path[r],
            }
        })
        .collect();

    let mut obs = Vec::new();
    write_table(&mut obs, &est.table, true)?;
    manifest.write_output(&args.out, "observations.csv", &obs)?;
    manifest.write_output(&args.out, "scatter_od.csv", &csv_bytes(&od_rows)?)?;

    if let Some(tf) = &truth {
        let scatter_t = infos.iter().map(|info| ScatterT {
            column: info.column,
            name: &info.name,
            class: &info.class,
            truth: tf.truth.t[info.column],
            estimated: est.result.t_hat[info.column],
        });
        manifest.write_output(&args.out, "scatter_t.csv", &csv_bytes(scatter_t)?)?;
        let true_path = est.a.mul(&tf.truth.t);
        let scatter_path = path_rows.iter().enumerate().map(|(r, p)| ScatterPath {
            origin: p.origin,
            destination: p.destination,
            interval: p.interval,
            rank: p.rank,
            truth: true_path[r],
            estimated: p.estimated,
        });
        manifest.write_output(&args.out, "scatter_path.csv", &csv_bytes(scatter_path)?)?;
    }

    let mut matrix = Vec::new();
    write_incidence(&mut matrix, &est.a)?;
    manifest.write_output(&args.out, "incidence.bin", &matrix)?;
    let index_manifest = IndexManifest {
        index: est.index.clone(),
        rows: est.rows.clone(),
    };
    manifest.write_output(&args.out, "index.json", &json_bytes(&index_manifest)?)?;
    manifest.write_output(&args.out, "coverage.json", &json_bytes(&est.coverage)?)?;
    if let Some(m) = &metrics {
        manifest.write_output(&args.out, "metrics.json", &json_bytes(m)?)?;
    }

    let result = ResultFile {
        index: est.index.clone(),
        variables,
        t_hat: est.result.t_hat.clone(),
        theta_hat: est.result.theta_hat,
        initial_loss: est.result.initial_loss,
        loss_history: est.result.loss_history.clone(),
        epochs: est.result.epochs,
        converged: est.result.converged,
        r2_od: est.result.r2_od,
        imputed_cells: est.imputed_cells,
        coverage: CoverageSummary {
            total_columns: est.coverage.total_columns,
            uncovered: est.coverage.uncovered.clone(),
            rank: est.coverage.rank,
            rank_deficient: est.coverage.rank_deficient,
        },
        parse: Some(parse),
        out_of_window,
        od_rows,
        path_rows,
        metrics,
    };
    manifest.write_output(&args.out, "result.json", &json_bytes(&result)?)?;
    manifest.save(&args.out)?;
    Ok(())
}

#[derive(Serialize)]
struct WaitRow {
    station: u32,
    direction: String,
    interval: usize,
    truth: f64,
    estimated: f64,
}

#[derive(Serialize)]
struct IntervalSummary {
    interval: usize,
    waits: usize,
    mean_truth: f64,
    mean_estimated: f64,
    mae: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    interval: usize,
    bin_lo: f64,
    bin_hi: f64,
    truth: usize,
    estimated: usize,
}

pub const HISTOGRAM_BIN_MIN: f64 = 0.5;

pub fn evaluate(args: &EvaluateArgs, argv: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new(argv, &(), None);
    manifest.add_input(&args.result)?;
    manifest.add_input(&args.truth)?;
    let result: ResultFile = serde_json::from_reader(BufReader::new(File::open(&args.result)?))?;
    let truth: TruthFile = serde_json::from_reader(BufReader::new(File::open(&args.truth)?))?;
    pipeline::check_truth(&result.index, &truth.truth)?;
    if result.t_hat.len() != truth.truth.t.len() {
        return Err(urt_estimate::Error::DimensionMismatch(
            "result and truth lengths differ".into(),
        )
        .into());
    }
    let metrics = manifest.time("score", || {
        pipeline::score(
            &result.index,
            &result.t_hat,
            &truth.truth.t,
            &result.incidence(),
        )
    });

    let waits: Vec<WaitRow> = result
        .variables
        .iter()
        .filter(|v| v.info.class == "wait")
        .map(|v| WaitRow {
            station: v.info.station,
            direction: v.info.direction.clone().unwrap_or_default(),
            interval: v.info.interval.unwrap_or(0),
            truth: truth.truth.t[v.info.column],
            estimated: v.estimate,
        })
        .collect();
    let mut by_interval: BTreeMap<usize, Vec<&WaitRow>> = BTreeMap::new();
    for w in &waits {
        by_interval.entry(w.interval).or_default().push(w);
    }
    let summaries = by_interval.iter().map(|(&interval, ws)| {
        let n = ws.len() as f64;
        IntervalSummary {
            interval,
            waits: ws.len(),
            mean_truth: ws.iter().map(|w| w.truth).sum::<f64>() / n,
            mean_estimated: ws.iter().map(|w| w.estimated).sum::<f64>() / n,
            mae: ws
                .iter()
                .map(|w| (w.truth - w.estimated).abs())
                .sum::<f64>()
                / n,
        }
    });
    let top = waits
        .iter()
        .flat_map(|w| [w.truth, w.estimated])
        .fold(0.0, f64::max);
    let bins = ((top / HISTOGRAM_BIN_MIN).floor() as usize) + 1;
    let mut histogram = Vec::new();
    for (&interval, ws) in &by_interval {
        for b in 0..bins {
            let lo = b as f64 * HISTOGRAM_BIN_MIN;
            let hi = lo + HISTOGRAM_BIN_MIN;
            let within = |v: f64| v >= lo && v < hi;
            histogram.push(HistogramRow {
                interval,
                bin_lo: lo,
                bin_hi: hi,
                truth: ws.iter().filter(|w| within(w.truth)).count(),
                estimated: ws.iter().filter(|w| within(w.estimated)).count(),
            });
        }
    }

    fs::create_dir_all(&args.out)?;
    manifest.write_output(&args.out, "metrics.json", &json_bytes(&metrics)?)?;
    manifest.write_output(&args.out, "waits.csv", &csv_bytes(&waits)?)?;
    manifest.write_output(&args.out, "wait_intervals.csv", &csv_bytes(summaries)?)?;
    manifest.write_output(&args.out, "wait_histogram.csv", &csv_bytes(&histogram)?)?;
    manifest.save(&args.out)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub noise: f64,
    pub delete_od: f64,
    pub seed: u64,
    pub records: usize,
    pub imputed_cells: usize,
    pub r2_t: Option<f64>,
    pub r2_link: Option<f64>,
    pub r2_wait: Option<f64>,
    pub r2_path: Option<f64>,
}

/// One grid cell: synthesize, estimate (with SoftImpute when ODs were
/// deleted) and score against the truth.
pub fn sensitivity_cell(
    net: &urt_estimate::network::ExpandedNetwork,
    synth: &SynthConfig,
    estimate: &EstimateConfig,
) -> urt_estimate::Result<SensitivityRow> {
    let s = pipeline::synthesize(net, synth)?;
    let mut cfg = estimate.clone();
    cfg.impute = synth.od_deletion_fraction > 0.0;
    cfg.estimator.seed = synth.seed;
    let est = pipeline::estimate(net, &s.records, &cfg)?;
    let m = pipeline::score(&est.index, &est.result.t_hat, &s.truth.t, &est.a);
    Ok(SensitivityRow {
        noise: synth.noise_fraction,
        delete_od: synth.od_deletion_fraction,
        seed: synth.seed,
        records: s.records.len(),
        imputed_cells: est.imputed_cells,
        r2_t: m.r2_t,
        r2_link: m.r2_link,
        r2_wait: m.r2_wait,
        r2_path: m.r2_path,
    })
}

pub fn sensitivity(args: &SensitivityArgs, argv: Vec<String>) -> CliResult<()> {
    for &v in &args.noise {
        fraction("--noise", v)?;
    }
    for &v in &args.delete_od {
        fraction("--delete-od", v)?;
    }
    if args.noise.is_empty() || args.delete_od.is_empty() || args.seeds.is_empty() {
        return Err(CliError::Usage("grid axes must not be empty".into()));
    }
    let intervals = interval_spec(&args.window)?;
    let paths = path_config(args.k)?;
    let source = NetworkSource::parse(&args.network);
    let mut manifest = RunManifest::new(
        argv,
        &(
            &source,
            &args.noise,
            &args.delete_od,
            &args.seeds,
            args.base_records,
            args.k,
        ),
        None,
    );
    if let NetworkSource::File(p) = &source {
        manifest.add_input(p)?;
    }
    let net = source.load()?;
    let mut cells = Vec::new();
    for &noise in &args.noise {
        for &delete_od in &args.delete_od {
            for &seed in &args.seeds {
                cells.push(SynthConfig {
                    base_records_per_cell: args.base_records,
                    noise_fraction: noise,
                    od_deletion_fraction: delete_od,
                    paths: paths.clone(),
                    intervals,
                    seed,
                    ..SynthConfig::default()
                });
            }
        }
    }
    let estimate = EstimateConfig {
        intervals,
        paths,
        ..EstimateConfig::default()
    };
    let rows = manifest.time("grid", || {
        cells
            .par_iter()
            .map(|c| sensitivity_cell(&net, c, &estimate))
            .collect::<urt_estimate::Result<Vec<_>>>()
    })?;
    fs::create_dir_all(&args.out)?;
    manifest.write_output(&args.out, "summary.csv", &csv_bytes(&rows)?)?;
    manifest.save(&args.out)?;
    Ok(())
}

/// Reads a manifest back, for reproducibility checks.
pub fn read_manifest(dir: &Path) -> CliResult<RunManifest> {
    Ok(serde_json::from_reader(BufReader::new(File::open(
        dir.join("manifest.json"),
    )?))?)
}
