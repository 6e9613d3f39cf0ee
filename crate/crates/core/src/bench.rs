//! Replicated simulation benchmarks: generate, fit every method, score on
//! the test split, summarise per noise level.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean, msee, mspe, sample_sd, smspe, MetricKind};
use crate::pcr::{pcr_cv, pcr_fit, VARIANCE_GRID};
use crate::rng::derive_seed;
use crate::simgen::{generate, SimKind, SimSpec};
use crate::solver::{fit, FitConfig};
use crate::tensor::Tensor;
use crate::tuning::fit_tuned;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mtot,
    Pcr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mtot => "mtot",
            Method::Pcr => "pcr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtot" => Ok(Method::Mtot),
            "pcr" => Ok(Method::Pcr),
            _ => Err(Error::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

/// Metrics reported for each kind of study.
pub fn metrics_for(kind: SimKind) -> &'static [MetricKind] {
    match kind {
        SimKind::CurveOnCurve => &[MetricKind::Mspe, MetricKind::Msee],
        SimKind::Waveform | SimKind::Jump => &[MetricKind::Smspe],
        SimKind::Cone | SimKind::Wafer => &[MetricKind::LogSmspe],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Template for every replication; `sigma` and the seeds are replaced.
    pub spec: SimSpec,
    pub sigmas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub folds: usize,
    /// Solver settings; the ranks are ignored unless `fixed_ranks` is set.
    pub fit: FitConfig,
    /// Skip cross-validation and fit these ranks (inputs, output).
    pub fixed_ranks: Option<(Vec<usize>, usize)>,
    /// Skip cross-validation and use this retained-variance fraction.
    pub pcr_fraction: Option<f64>,
}

impl BenchConfig {
    pub fn new(spec: SimSpec, sigmas: Vec<f64>, reps: usize, seed: u64) -> Self {
        BenchConfig {
            spec,
            sigmas,
            reps,
            seed,
            methods: vec![Method::Mtot, Method::Pcr],
            folds: 5,
            fit: FitConfig::new(Vec::new(), 1),
            fixed_ranks: None,
            pcr_fraction: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("at least one replication is required".into()));
        }
        if self.sigmas.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidConfig(
                "need at least one noise level and one method".into(),
            ));
        }
        for &s in &self.sigmas {
            self.spec.clone().with_sigma(s).validate()?;
        }
        Ok(())
    }

    /// Seeds of replication `rep` at noise level index `level`: the signal
    /// is shared across noise levels, the noise is not.
    pub fn replication_seeds(&self, rep: usize, level: usize) -> (u64, u64) {
        (
            derive_seed(self.seed, &[rep as u64]),
            derive_seed(self.seed, &[rep as u64, 1 + level as u64]),
        )
    }
}

/// One method on one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct RepRecord {
    pub sigma: f64,
    pub method: Method,
    pub rep: usize,
    pub seed: u64,
    pub noise_seed: u64,
    /// Chosen ranks (`3x5x2`) or retained-variance fraction.
    pub selection: String,
    pub values: Vec<(MetricKind, f64)>,
    pub seconds: f64,
}

/// Summary of one `(sigma, method, metric)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub sigma: f64,
    pub method: Method,
    pub metric: MetricKind,
    pub values: Vec<f64>,
    pub seconds: Vec<f64>,
}

impl BenchRow {
    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    pub fn sd(&self) -> Option<f64> {
        sample_sd(&self.values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub kind: SimKind,
    pub rows: Vec<BenchRow>,
    pub records: Vec<RepRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

impl BenchResult {
    pub fn row(&self, sigma: f64, method: Method, metric: MetricKind) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.sigma == sigma && r.method == method && r.metric == metric)
    }

    /// One line per cell; `sd` is empty for a single replication.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,sigma,method,metric,mean,sd,reps,time_mean_s,time_sd_s\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{},{},{},{}",
                self.kind,
                r.sigma,
                r.method,
                r.metric,
                r.mean(),
                opt(r.sd()),
                r.values.len(),
                mean(&r.seconds),
                opt(sample_sd(&r.seconds)),
            );
        }
        s
    }

    /// Every replication with its seeds, selection and scores.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("kind,sigma,method,rep,seed,noise_seed,selection,metric,value,time_s\n");
        for r in &self.records {
            for (metric, value) in &r.values {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{:e},{}",
                    self.kind, r.sigma, r.method, r.rep, r.seed, r.noise_seed, r.selection, metric, value, r.seconds
                );
            }
        }
        s
    }
}

/// Drops every column whose header starts with `time`.
pub fn strip_timing(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let keep: Vec<bool> = header.split(',').map(|h| !h.starts_with("time")).collect();
    let mut out = String::new();
    for line in std::iter::once(header).chain(lines) {
        let fields: Vec<&str> = line
            .split(',')
            .zip(&keep)
            .filter_map(|(f, &k)| k.then_some(f))
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn score(kind: SimKind, y: &Tensor, clean: Option<&Tensor>, pred: &Tensor) -> Result<Vec<(MetricKind, f64)>> {
    metrics_for(kind)
        .iter()
        .map(|&m| {
            let v = match m {
                MetricKind::Smspe => smspe(y, pred)?,
                MetricKind::LogSmspe => smspe(y, pred)?.ln(),
                MetricKind::Mspe => mspe(y, pred)?,
                MetricKind::Msee => {
                    let clean = clean.ok_or_else(|| Error::InvalidConfig("no noiseless response".into()))?;
                    msee(clean, pred)?
                }
            };
            Ok((m, v))
        })
        .collect()
}

type Predictor = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

fn run_method(cfg: &BenchConfig, method: Method, train: &crate::Dataset, cv_seed: u64) -> Result<(Predictor, String)> {
    match method {
        Method::Mtot => {
            let mut base = cfg.fit.clone();
            base.seed = cv_seed;
            let model = match &cfg.fixed_ranks {
                Some((inputs, output)) => {
                    base.input_ranks = inputs.clone();
                    base.output_rank = *output;
                    fit(train, &base)?
                }
                None => fit_tuned(train, cfg.folds, cv_seed, &base)?.1,
            };
            let mut ranks = model.input_ranks();
            ranks.push(model.output_rank());
            let label = ranks.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            Ok((Box::new(move |xs| model.predict(xs)), label))
        }
        Method::Pcr => {
            let model = match cfg.pcr_fraction {
                Some(v) => pcr_fit(train, v)?,
                None => pcr_cv(train, &VARIANCE_GRID, cfg.folds, cv_seed)?.model,
            };
            let label = format!("v{}", model.v);
            Ok((Box::new(move |xs| model.predict(xs)), label))
        }
    }
}

/// Runs the benchmark, calling `on_record` after every fitted method.
pub fn run_benchmark_with(cfg: &BenchConfig, mut on_record: impl FnMut(&RepRecord)) -> Result<BenchResult> {
    cfg.validate()?;
    let kind = cfg.spec.kind;
    let mut records = Vec::new();
    for (level, &sigma) in cfg.sigmas.iter().enumerate() {
        for rep in 0..cfg.reps {
            let (seed, noise_seed) = cfg.replication_seeds(rep, level);
            let mut spec = cfg.spec.clone().with_sigma(sigma).with_seed(seed);
            spec.noise_seed = Some(noise_seed);
            let wrap = |method: Method, e: Error| Error::Benchmark {
                rep,
                sigma,
                method: method.name().into(),
                source: Box::new(e),
            };
            let data = generate(&spec).map_err(|e| wrap(cfg.methods[0], e))?;
            let test = data.test.as_ref().ok_or_else(|| {
                wrap(
                    cfg.methods[0],
                    Error::InvalidConfig("benchmark needs a test split".into()),
                )
            })?;
            for &method in &cfg.methods {
                let start = Instant::now();
                let (predict, selection) = run_method(cfg, method, &data.train, seed).map_err(|e| wrap(method, e))?;
                let seconds = start.elapsed().as_secs_f64();
                let pred = predict(&test.xs).map_err(|e| wrap(method, e))?;
                let values = score(kind, &test.y, data.test_clean.as_ref(), &pred).map_err(|e| wrap(method, e))?;
                let record = RepRecord {
                    sigma,
                    method,
                    rep,
                    seed,
                    noise_seed,
                    selection,
                    values,
                    seconds,
                };
                on_record(&record);
                records.push(record);
            }
        }
    }

    let mut rows = Vec::new();
    for &sigma in &cfg.sigmas {
        for &method in &cfg.methods {
            for &metric in metrics_for(kind) {
                let mine: Vec<&RepRecord> = records
                    .iter()
                    .filter(|r| r.sigma == sigma && r.method == method)
                    .collect();
                rows.push(BenchRow {
                    sigma,
                    method,
                    metric,
                    values: mine
                        .iter()
                        .map(|r| r.values.iter().find(|(m, _)| *m == metric).expect("scored").1)
                        .collect(),
                    seconds: mine.iter().map(|r| r.seconds).collect(),
                });
            }
        }
    }
    Ok(BenchResult { kind, rows, records })
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    run_benchmark_with(cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: SimKind) -> BenchConfig {
        let mut spec = SimSpec::new(kind);
        spec.n_train = 30;
        spec.n_test = 10;
        let mut cfg = BenchConfig::new(spec, vec![0.1, 0.3], 2, 5);
        cfg.fixed_ranks = Some((vec![2, 3], 2));
        cfg.pcr_fraction = Some(0.9);
        cfg
    }

    #[test]
    fn rows_cover_every_cell() {
        let res = run_benchmark(&tiny(SimKind::Jump)).unwrap();
        assert_eq!(res.rows.len(), 4);
        assert_eq!(res.records.len(), 8);
        let row = res.row(0.3, Method::Pcr, MetricKind::Smspe).unwrap();
        assert_eq!(row.values.len(), 2);
        assert!(row.sd().is_some());
        let csv = res.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("kind,sigma,method,metric,mean,sd,reps,time_mean_s,time_sd_s\n"));
        assert!(res.log_csv().contains(",2x3x2,smspe,"));
    }

    #[test]
    fn single_replication_leaves_sd_empty() {
        let mut cfg = tiny(SimKind::Jump);
        cfg.reps = 1;
        cfg.sigmas = vec![0.1];
        cfg.methods = vec![Method::Pcr];
        let csv = strip_timing(&run_benchmark(&cfg).unwrap().to_csv());
        let line = csv.lines().nth(1).unwrap();
        assert!(line.ends_with(",,1"), "{line}");
    }

    #[test]
    fn reruns_agree_apart_from_timing() {
        let cfg = tiny(SimKind::Jump);
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(strip_timing(&a.to_csv()), strip_timing(&b.to_csv()));
        assert_eq!(strip_timing(&a.log_csv()), strip_timing(&b.log_csv()));
    }

    #[test]
    fn curve_study_reports_both_errors() {
        let mut cfg = tiny(SimKind::CurveOnCurve);
        cfg.reps = 1;
        cfg.sigmas = vec![0.3];
        let res = run_benchmark(&cfg).unwrap();
        assert!(res.row(0.3, Method::Mtot, MetricKind::Msee).is_some());
        assert!(res.row(0.3, Method::Mtot, MetricKind::Mspe).is_some());
    }

    #[test]
    fn failures_name_the_cell() {
        let mut cfg = tiny(SimKind::Jump);
        cfg.fixed_ranks = Some((vec![9, 3], 2));
        let err = run_benchmark(&cfg).unwrap_err();
        match err {
            Error::Benchmark { rep, sigma, method, .. } => {
                assert_eq!((rep, sigma, method.as_str()), (0, 0.1, "mtot"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn strip_timing_drops_time_columns() {
        let s = strip_timing("a,time_x,b\n1,2,3\n");
        assert_eq!(s, "a,b\n1,3\n");
    }
}
