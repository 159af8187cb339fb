//! Baseline vs. query-modulated comparison across seeds, with an optional
//! sweep over the detection-task ratio.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{DetectorConfig, DetectorMode};
use super::train::{train, SplitData, TrainOptions, TrainingRun};
use super::validation::{evaluate_model, EvalSuite, QueryStrategy};
use crate::annotations::Split;
use crate::error::{Error, Result};
use crate::evaluation::{csv_row, fmt_pct, EvalReport, IouRegime};
use crate::provenance::{write_json, Provenance};
use crate::querysynth::{QueryMix, TaskSchedule};
use crate::shapes::{load_dir, split_dir_name};

pub const BASELINE: &str = "Detector + post-processing";
pub const SINGLE_TASK: &str = "QMD single-task";
pub const MULTI_TASK: &str = "QMD multi-task";
/// The multi-task model run as a plain detector and pruned like the baseline.
pub const MULTI_TASK_SENTINEL: &str = "QMD multi-task (sentinel + post-processing)";
/// Multi-task model trained on localized queries, for the LLD comparison.
pub const LLD_MULTI_TASK: &str = "QMD multi-task (LLD)";

pub const DEFAULT_SEEDS: [u64; 3] = [7, 13, 42];
pub const SWEEP_RATIOS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

pub const REPORT_JSON: &str = "benchmark.json";
pub const REPORT_CSV: &str = "benchmark.csv";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub seeds: Vec<u64>,
    pub sweep: bool,
    pub sweep_ratios: Vec<f64>,
    pub single_task_ratio: f64,
    pub multi_task_ratio: f64,
    /// Queries of the single-task, multi-task and sweep models.
    pub query_mix: QueryMix,
    /// Queries of the LLD model (trained at `multi_task_ratio`).
    pub lld_query_mix: QueryMix,
    pub regime: IouRegime,
    pub steps: usize,
    pub eval_interval: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS.to_vec(),
            sweep: false,
            sweep_ratios: SWEEP_RATIOS.to_vec(),
            single_task_ratio: 0.0,
            multi_task_ratio: 0.5,
            query_mix: QueryMix::KLD_ONLY,
            lld_query_mix: QueryMix::LLD_ONLY,
            regime: IouRegime::Ap50,
            steps: 8000,
            eval_interval: 1000,
        }
    }
}

impl BenchmarkOptions {
    /// Minutes-scale profile: one seed, a few hundred steps.
    pub fn quick() -> Self {
        Self {
            seeds: vec![DEFAULT_SEEDS[0]],
            steps: 150,
            eval_interval: 75,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        for r in self
            .sweep_ratios
            .iter()
            .chain([&self.single_task_ratio, &self.multi_task_ratio])
        {
            TaskSchedule::new(*r, self.query_mix)?;
        }
        TaskSchedule::new(self.multi_task_ratio, self.lld_query_mix)?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: String,
    pub seed: u64,
    /// Detection-task ratio; absent for the baseline.
    pub detection_ratio: Option<f64>,
    pub best_step: usize,
    pub final_loss: f64,
    pub report: EvalReport,
    /// SLD AP with the query fed to the model, when `report` answered
    /// queries another way (a model with no query training).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioned_sld_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub sld_ap: Option<f64>,
    pub kld_ap: Option<f64>,
    pub lld_ap: Option<f64>,
    pub det_map: Option<f64>,
    pub ar_at_1: Option<f64>,
}

impl MetricRow {
    fn of(model: &str, r: &EvalReport) -> Self {
        Self {
            model: model.into(),
            sld_ap: r.sld_ap,
            kld_ap: r.kld_ap,
            lld_ap: r.lld_ap,
            det_map: r.det_map,
            ar_at_1: r.ar_at_1,
        }
    }

    fn values(&self) -> [Option<f64>; 5] {
        [self.sld_ap, self.kld_ap, self.lld_ap, self.det_map, self.ar_at_1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub sld_ap: Option<f64>,
    pub det_map: Option<f64>,
    /// Differs from `sld_ap` only at ratio 1, where the model's query
    /// input was never trained.
    pub conditioned_sld_ap: Option<f64>,
    pub per_seed: Vec<SweepSeed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeed {
    pub seed: u64,
    pub sld_ap: Option<f64>,
    pub det_map: Option<f64>,
    pub conditioned_sld_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub options: BenchmarkOptions,
    pub detector: DetectorConfig,
    pub columns: Vec<String>,
    pub results: Vec<ModelResult>,
    /// Medians over seeds of the main comparison rows.
    pub median: Vec<MetricRow>,
    pub sweep: Option<Vec<SweepPoint>>,
    pub provenance: Option<Provenance>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn median_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    median(&v)
}

impl BenchmarkReport {
    pub fn rows(&self, model: &str) -> Vec<&ModelResult> {
        self.results.iter().filter(|r| r.model == model).collect()
    }

    pub fn median_row(&self, model: &str) -> Option<&MetricRow> {
        self.median.iter().find(|r| r.model == model)
    }

    /// Per-seed and median tables as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = format!("Model,Seed,{}\n", self.columns.join(","));
        for r in &self.results {
            let row = MetricRow::of(&r.model, &r.report);
            out.push_str(&csv_row(&format!("{},{}", r.model, r.seed), &row.values()));
        }
        for m in &self.median {
            out.push_str(&csv_row(&format!("{},median", m.model), &m.values()));
        }
        out
    }

    pub fn sweep_csv(&self) -> Option<String> {
        let sweep = self.sweep.as_ref()?;
        let mut out = String::from("Detection ratio,Seed,SLD AP,DET mAP,Conditioned SLD AP\n");
        for p in sweep {
            for s in &p.per_seed {
                out.push_str(&csv_row(
                    &format!("{},{}", p.ratio, s.seed),
                    &[s.sld_ap, s.det_map, s.conditioned_sld_ap],
                ));
            }
            out.push_str(&csv_row(
                &format!("{},median", p.ratio),
                &[p.sld_ap, p.det_map, p.conditioned_sld_ap],
            ));
        }
        Some(out)
    }

    /// Human-readable median table (percentages).
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<46}", "Model (median)");
        for c in &self.columns {
            out.push_str(&format!("{c:>10}"));
        }
        out.push('\n');
        for m in &self.median {
            out.push_str(&format!("{:<46}", m.model));
            for v in m.values() {
                out.push_str(&format!("{:>10}", fmt_pct(v)));
            }
            out.push('\n');
        }
        if let Some(sweep) = &self.sweep {
            out.push_str(&format!(
                "\n{:<16}{:>10}{:>10}{:>18}\n",
                "Detection ratio", "SLD AP", "DET mAP", "conditioned SLD"
            ));
            for p in sweep {
                out.push_str(&format!(
                    "{:<16}{:>10}{:>10}{:>18}\n",
                    p.ratio,
                    fmt_pct(p.sld_ap),
                    fmt_pct(p.det_map),
                    fmt_pct(p.conditioned_sld_ap)
                ));
            }
        }
        out
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(dir.join(REPORT_JSON), self)?;
        let csv = dir.join(REPORT_CSV);
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        if let Some(s) = self.sweep_csv() {
            let p = dir.join(SWEEP_CSV);
            std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn load_split(dir: &Path, split: Split) -> Result<(crate::annotations::Dataset, Vec<crate::shapes::RasterImage>)> {
    load_dir(dir.join(split_dir_name(split)))
}

/// Trains and scores every model of the comparison on a shapes directory
/// with `train/`, `val/` and `test/` splits. Metrics are on `test/`.
pub fn run_benchmark(
    shapes_dir: impl AsRef<Path>,
    out_dir: Option<&Path>,
    opts: &BenchmarkOptions,
    provenance: Option<Provenance>,
) -> Result<BenchmarkReport> {
    opts.validate()?;
    let dir = shapes_dir.as_ref();
    let (train_ds, train_imgs) = load_split(dir, Split::Train)?;
    let (val_ds, val_imgs) = load_split(dir, Split::Val)?;
    let (test_ds, test_imgs) = load_split(dir, Split::Test)?;
    let train_split = SplitData::new(&train_ds, &train_imgs)?;
    let val_split = SplitData::new(&val_ds, &val_imgs)?;
    let suite = EvalSuite::new(&test_ds);

    let mut detector = DetectorConfig::new(train_ds.num_classes());
    detector.steps = opts.steps;
    detector.eval_interval = opts.eval_interval;

    let mut ratios = vec![opts.single_task_ratio, opts.multi_task_ratio];
    if opts.sweep {
        for &r in &opts.sweep_ratios {
            if !ratios.contains(&r) {
                ratios.push(r);
            }
        }
    }

    let mut results = Vec::new();
    let evaluate = |run: &TrainingRun, strategy| {
        evaluate_model(&run.best, &test_ds, &test_imgs, &suite, strategy, opts.regime)
    };
    let record = |model: &str, seed, ratio, run: &TrainingRun, report| ModelResult {
        model: model.into(),
        seed,
        detection_ratio: ratio,
        best_step: run.best_step,
        final_loss: *run.loss_history.last().unwrap_or(&f64::NAN),
        report,
        conditioned_sld_ap: None,
    };
    for &seed in &opts.seeds {
        let config = DetectorConfig {
            seed,
            ..detector.clone()
        };
        info!("seed {seed}: training baseline");
        let base = train(
            train_split,
            Some(val_split),
            &config,
            &TrainOptions {
                mode: DetectorMode::Baseline,
                schedule: TaskSchedule::new(1.0, opts.query_mix)?,
                regime: opts.regime,
            },
        )?;
        let report = evaluate(&base, QueryStrategy::PostProcessed)?;
        results.push(record(BASELINE, seed, None, &base, report));

        for &ratio in &ratios {
            info!("seed {seed}: training query-modulated model at detection ratio {ratio}");
            let run = train(
                train_split,
                Some(val_split),
                &config,
                &TrainOptions {
                    mode: DetectorMode::QueryModulated,
                    schedule: TaskSchedule::new(ratio, opts.query_mix)?,
                    regime: opts.regime,
                },
            )?;
            let schedule = TaskSchedule::new(ratio, opts.query_mix)?;
            let report = evaluate(&run, QueryStrategy::for_schedule(&schedule))?;
            let conditioned_sld_ap = if ratio >= 1.0 {
                evaluate(&run, QueryStrategy::Conditioned)?.sld_ap
            } else {
                report.sld_ap
            };
            let name = if ratio == opts.single_task_ratio {
                SINGLE_TASK.to_string()
            } else if ratio == opts.multi_task_ratio {
                MULTI_TASK.to_string()
            } else {
                format!("QMD ratio {ratio}")
            };
            if ratio == opts.multi_task_ratio {
                let pp = evaluate(&run, QueryStrategy::PostProcessed)?;
                results.push(record(MULTI_TASK_SENTINEL, seed, Some(ratio), &run, pp));
            }
            let mut result = record(&name, seed, Some(ratio), &run, report);
            if ratio >= 1.0 {
                result.conditioned_sld_ap = conditioned_sld_ap;
            }
            results.push(result);
        }

        info!("seed {seed}: training query-modulated model on localized queries");
        let run = train(
            train_split,
            Some(val_split),
            &config,
            &TrainOptions {
                mode: DetectorMode::QueryModulated,
                schedule: TaskSchedule::new(opts.multi_task_ratio, opts.lld_query_mix)?,
                regime: opts.regime,
            },
        )?;
        let report = evaluate(&run, QueryStrategy::Conditioned)?;
        results.push(record(LLD_MULTI_TASK, seed, Some(opts.multi_task_ratio), &run, report));
    }

    let mut names: Vec<String> = Vec::new();
    for r in &results {
        if !names.contains(&r.model) {
            names.push(r.model.clone());
        }
    }
    let median_rows = names
        .iter()
        .map(|name| {
            let rows: Vec<&EvalReport> = results
                .iter()
                .filter(|r| &r.model == name)
                .map(|r| &r.report)
                .collect();
            MetricRow {
                model: name.clone(),
                sld_ap: median_of(rows.iter().map(|r| r.sld_ap)),
                kld_ap: median_of(rows.iter().map(|r| r.kld_ap)),
                lld_ap: median_of(rows.iter().map(|r| r.lld_ap)),
                det_map: median_of(rows.iter().map(|r| r.det_map)),
                ar_at_1: median_of(rows.iter().map(|r| r.ar_at_1)),
            }
        })
        .collect();

    let sweep = opts.sweep.then(|| {
        opts.sweep_ratios
            .iter()
            .map(|&ratio| {
                let per_seed: Vec<SweepSeed> = results
                    .iter()
                    .filter(|r| {
                        r.detection_ratio == Some(ratio)
                            && r.model != MULTI_TASK_SENTINEL
                            && r.model != LLD_MULTI_TASK
                    })
                    .map(|r| SweepSeed {
                        seed: r.seed,
                        sld_ap: r.report.sld_ap,
                        det_map: r.report.det_map,
                        conditioned_sld_ap: r.conditioned_sld_ap.or(r.report.sld_ap),
                    })
                    .collect();
                SweepPoint {
                    ratio,
                    sld_ap: median_of(per_seed.iter().map(|s| s.sld_ap)),
                    det_map: median_of(per_seed.iter().map(|s| s.det_map)),
                    conditioned_sld_ap: median_of(per_seed.iter().map(|s| s.conditioned_sld_ap)),
                    per_seed,
                }
            })
            .collect()
    });

    let report = BenchmarkReport {
        options: opts.clone(),
        detector,
        columns: EvalReport::COLUMNS.iter().map(|c| c.to_string()).collect(),
        results,
        median: median_rows,
        sweep,
        provenance,
    };
    if let Some(out) = out_dir {
        report.write(out)?;
    }
    Ok(report)
}

/// Outcome of one directional comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

fn get(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Directional comparisons on the medians, named after the acceptance
/// criteria they implement (any comparison with a missing value fails).
pub fn directional_checks(report: &BenchmarkReport) -> Vec<Check> {
    let row = |m: &str| report.median_row(m).cloned();
    let (Some(base), Some(single), Some(multi)) = (row(BASELINE), row(SINGLE_TASK), row(MULTI_TASK)) else {
        return vec![check("rows present", false, "benchmark is missing a model row".into())];
    };
    let mut out = Vec::new();
    let (qs, bs) = (get(multi.sld_ap), get(base.sld_ap));
    out.push(check(
        "5a multi-task QMD SLD AP > baseline SLD AP",
        qs > bs,
        format!("{qs:.4} vs {bs:.4}"),
    ));
    let (sd, md) = (get(single.det_map), get(multi.det_map));
    out.push(check(
        "5b single-task QMD DET mAP < 0.5 x multi-task QMD DET mAP",
        sd < 0.5 * md,
        format!("{sd:.4} vs 0.5 x {md:.4}"),
    ));
    let bd = get(base.det_map);
    out.push(check(
        "5c multi-task QMD DET mAP >= 0.85 x baseline DET mAP",
        md >= 0.85 * bd,
        format!("{md:.4} vs 0.85 x {bd:.4}"),
    ));
    match row(LLD_MULTI_TASK) {
        None => out.push(check("6 LLD model present", false, "no LLD row".into())),
        Some(lld) => {
            let (ql, bl) = (get(lld.lld_ap), get(base.lld_ap));
            out.push(check(
                "6a LLD-trained QMD LLD AP > baseline LLD AP",
                ql > bl,
                format!("{ql:.4} vs {bl:.4}"),
            ));
            for (tag, m) in [("6b", &base), ("6c", &lld)] {
                let (l, s) = (get(m.lld_ap), get(m.sld_ap));
                out.push(check(
                    &format!("{tag} {}: LLD AP >= SLD AP", m.model),
                    l >= s,
                    format!("{l:.4} vs {s:.4}"),
                ));
            }
        }
    }
    if let Some(sweep) = &report.sweep {
        let complete = SWEEP_RATIOS
            .iter()
            .all(|r| sweep.iter().any(|p| p.ratio == *r && p.sld_ap.is_some() && p.det_map.is_some()));
        out.push(check(
            "7a sweep reports SLD AP and DET mAP for every ratio",
            complete,
            format!("{} ratios", sweep.len()),
        ));
        let seeds_sld = |m: &str| -> Vec<f64> {
            report.rows(m).iter().filter_map(|r| r.report.sld_ap).collect()
        };
        // the seed-to-seed spread of the two quantities compared in 5a
        let noise = spread(&seeds_sld(BASELINE)).max(spread(&seeds_sld(MULTI_TASK)));
        let at_one = sweep.iter().find(|p| p.ratio == 1.0).and_then(|p| p.sld_ap);
        let delta = (get(at_one) - bs).abs();
        out.push(check(
            "7b ratio 1.0 QMD SLD AP within seed spread of baseline",
            delta < noise,
            format!("|{:.4} - {bs:.4}| = {delta:.4} vs spread {noise:.4}", get(at_one)),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn quick_profile_is_valid() {
        BenchmarkOptions::quick().validate().unwrap();
        let mut o = BenchmarkOptions::default();
        o.sweep_ratios.push(1.5);
        assert!(o.validate().is_err());
    }
}
