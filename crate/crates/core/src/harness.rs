//! Experiment presets: method comparison, day→night domain shift and a
//! Gaussian-noise sweep. Every preset writes a long-form CSV
//! (`run_id,preset,seed,step,metric,class,value`), a summary CSV and an SVG plot.
//!
//! Trained runs are cached under `<output>/runs/<config hash>/`, so a run shared
//! by two presets or methods (the day-only baseline, for instance) is trained once.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{SelfSupSource, TrainConfig, TrainingRatio};
use crate::data::{
    add_gaussian_noise, apply_night, gen_shapes_dataset, gen_unlabeled_images, night_sample, LabeledSample,
};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::metrics::{evaluate_pretext, evaluate_supervised, MetricsReport};
use crate::model::Model;
use crate::pretext::PretextTask;
use crate::rng::{derive_seed, stream_id};
use crate::trainer::{run_cotraining, write_history, TaskChoice};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Compare,
    Domain,
    Noise,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Compare, Preset::Domain, Preset::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Compare => "compare",
            Preset::Domain => "domain",
            Preset::Noise => "noise",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown preset `{s}`")))
    }
}

/// A training config plus the seed list and noise levels shared by all presets.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Standard deviations on the 0–255 intensity scale.
    pub noise_sigmas: Vec<f32>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3],
            noise_sigmas: vec![0.0, 5.0, 10.0, 15.0],
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::invalid(format!("invalid entry `{s}` in `{key}`")))
        })
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::invalid(format!("`{key}` must not be empty")));
    }
    Ok(items)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seeds" => self.seeds = parse_list(key, value)?,
            "noise_sigmas" => {
                let sigmas: Vec<f32> = parse_list(key, value)?;
                if sigmas.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::invalid("noise sigmas must be non-negative"));
                }
                self.noise_sigmas = sigmas;
            }
            _ => self.train.set(key, value)?,
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "noise_sigmas = {}\nseeds = {}\n{}",
            join(&self.noise_sigmas),
            join(&self.seeds),
            self.train.to_text()
        )
    }

    fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.train.ratio == TrainingRatio::Baseline {
            return Err(Error::invalid(
                "experiments need a co-training ratio; baseline runs are added automatically",
            ));
        }
        Ok(())
    }
}

/// One line of the long-form results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub run_id: String,
    pub preset: String,
    pub seed: u64,
    pub step: usize,
    pub metric: String,
    pub class: String,
    pub value: f64,
}

impl Row {
    /// Method name, the part of the run id before the config hash.
    pub fn method(&self) -> &str {
        self.run_id.split(':').next().unwrap_or(&self.run_id)
    }
}

/// Mean, min and max of one metric over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub preset: String,
    pub method: String,
    pub step: usize,
    pub metric: String,
    pub class: String,
    pub seeds: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// A trained (or cache-loaded) run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub method: String,
    pub run_id: String,
    pub config: TrainConfig,
    pub checkpoints: Vec<Checkpoint>,
    pub steps: usize,
    pub selfsup_steps: usize,
    pub selfsup_pool_size: usize,
    pub wall_ms: f64,
    pub cached: bool,
}

impl RunRecord {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("runs keep at least one checkpoint")
    }

    pub fn final_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.model_config())?;
        self.final_checkpoint().restore_into(&mut model)?;
        Ok(model)
    }
}

#[derive(Clone, Debug)]
pub struct PresetReport {
    pub preset: Preset,
    pub rows: Vec<Row>,
    pub summary: Vec<SummaryRow>,
    pub checks: Vec<Check>,
    pub runs: Vec<RunRecord>,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
    pub plot_path: PathBuf,
}

impl PresetReport {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Synthetic data shared by all presets, fixed by the dataset keys of the config.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub night_test: Vec<LabeledSample>,
    /// Unlabeled night-domain images for the self-supervised branch.
    pub night_pool: Vec<ImageTensor>,
}

impl ExperimentData {
    pub fn generate(cfg: &TrainConfig) -> Result<Self> {
        let (train, test) = gen_shapes_dataset(&cfg.dataset_spec(), cfg.data_seed)?;
        let night_seed = derive_seed(cfg.data_seed, stream_id("night-test"));
        let night_test = test
            .iter()
            .enumerate()
            .map(|(i, s)| night_sample(s, derive_seed(night_seed, i as u64)))
            .collect();
        let pool_seed = derive_seed(cfg.data_seed, stream_id("night-pool"));
        let night_pool = gen_unlabeled_images(cfg.n_unlabeled, cfg.image_size, pool_seed)
            .iter()
            .enumerate()
            .map(|(i, img)| apply_night(img, derive_seed(pool_seed, i as u64)))
            .collect();
        Ok(Self {
            train,
            test,
            night_test,
            night_pool,
        })
    }

    /// Test split with Gaussian noise; the noise seed depends only on σ and the index.
    pub fn noisy_test(&self, sigma: f32, data_seed: u64) -> Result<Vec<LabeledSample>> {
        let seed = derive_seed(data_seed, stream_id("noise") ^ sigma.to_bits() as u64);
        self.test
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(LabeledSample {
                    image: add_gaussian_noise(&s.image, sigma, derive_seed(seed, i as u64))?,
                    ..s.clone()
                })
            })
            .collect()
    }
}

pub struct Harness {
    pub config: ExperimentConfig,
    pub output: PathBuf,
    data: Option<ExperimentData>,
}

fn compare_methods(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let baseline = TrainConfig {
        ratio: TrainingRatio::Baseline,
        ..base.clone()
    };
    let jigsaw = TrainConfig {
        selfsup_task: PretextTask::Jigsaw,
        ..base.clone()
    };
    let rotation = TrainConfig {
        selfsup_task: PretextTask::Rotation,
        ..base.clone()
    };
    vec![
        ("baseline".into(), baseline),
        ("jigsaw".into(), jigsaw),
        ("rotation".into(), rotation),
    ]
}

/// Methods 1–3 of the domain study: day-only baseline, co-train on day images,
/// co-train on day plus unlabeled night images.
fn domain_methods(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let m2 = TrainConfig {
        selfsup_source: SelfSupSource::Same,
        ..base.clone()
    };
    let m1 = TrainConfig {
        ratio: TrainingRatio::Baseline,
        ..m2.clone()
    };
    let m3 = TrainConfig {
        selfsup_source: SelfSupSource::Both,
        ..m2.clone()
    };
    vec![
        ("m1-baseline".into(), m1),
        (format!("m2-{}-day", m2.selfsup_task.name()), m2),
        (format!("m3-{}-day+night", m3.selfsup_task.name()), m3),
    ]
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

pub fn run_id(method: &str, cfg: &TrainConfig) -> String {
    format!("{method}:{}", cfg.hash())
}

impl Harness {
    pub fn new(config: ExperimentConfig, output: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            output: output.into(),
            data: None,
        })
    }

    pub fn data(&mut self) -> Result<&ExperimentData> {
        if self.data.is_none() {
            self.data = Some(ExperimentData::generate(&self.config.train)?);
        }
        Ok(self.data.as_ref().expect("just generated"))
    }

    fn run_dir(&self, cfg: &TrainConfig) -> PathBuf {
        self.output.join("runs").join(cfg.hash())
    }

    /// Trains `cfg` or loads it from the run cache when the stored config matches.
    pub fn train_cached(
        &mut self,
        method: &str,
        cfg: &TrainConfig,
        extra: Option<&[ImageTensor]>,
    ) -> Result<RunRecord> {
        let dir = self.run_dir(cfg);
        if let Some(record) = load_cached(&dir, method, cfg)? {
            log::info!("reusing {}", record.run_id);
            return Ok(record);
        }
        log::info!(
            "training {} (seed {}, {} steps)",
            run_id(method, cfg),
            cfg.seed,
            cfg.total_steps
        );
        let train = self.data()?.train.clone();
        let out = run_cotraining(cfg, &train, extra)?;
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
        write_history(&dir.join("history.csv"), &out.history)?;
        for ck in &out.checkpoints {
            ck.save(&dir.join(format!("step-{:07}.ckpt", ck.step)))?;
        }
        let record = RunRecord {
            method: method.to_string(),
            run_id: run_id(method, cfg),
            config: cfg.clone(),
            checkpoints: out.checkpoints.clone(),
            steps: out.history.len(),
            selfsup_steps: out.count(TaskChoice::SelfSup),
            selfsup_pool_size: out.selfsup_pool_size,
            wall_ms: out.wall_ms,
            cached: false,
        };
        fs::write(
            dir.join("run.txt"),
            format!(
                "steps = {}\nselfsup_steps = {}\nselfsup_pool_size = {}\nwall_ms = {}\n",
                record.steps, record.selfsup_steps, record.selfsup_pool_size, record.wall_ms
            ),
        )?;
        Ok(record)
    }

    fn write_outputs(
        &self,
        preset: Preset,
        rows: Vec<Row>,
        checks: Vec<Check>,
        runs: Vec<RunRecord>,
    ) -> Result<PresetReport> {
        fs::create_dir_all(&self.output)?;
        fs::write(
            self.output.join(format!("{preset}_config.txt")),
            format!("# experiment config\n{}", self.config.to_text()),
        )?;
        let csv_path = self.output.join(format!("{preset}.csv"));
        write_rows(&csv_path, &rows)?;
        let summary = summarize(&rows);
        let summary_path = self.output.join(format!("{preset}_summary.csv"));
        write_summary(&summary_path, &summary)?;
        let plot_path = self.output.join(format!("{preset}.svg"));
        render_plot(preset, &summary, &plot_path)?;
        Ok(PresetReport {
            preset,
            rows,
            summary,
            checks,
            runs,
            csv_path,
            summary_path,
            plot_path,
        })
    }

    /// Baseline vs jigsaw vs rotation co-training with equal step budgets.
    pub fn run_compare(&mut self) -> Result<PresetReport> {
        let base = self.config.train.clone();
        let seeds = self.config.seeds.clone();
        let mut rows = Vec::new();
        let mut runs = Vec::new();
        for (method, cfg) in compare_methods(&base) {
            for &seed in &seeds {
                let cfg = with_seed(&cfg, seed);
                let record = self.train_cached(&method, &cfg, None)?;
                let data = self.data()?;
                for ck in &record.checkpoints {
                    let mut model = Model::new(cfg.model_config())?;
                    ck.restore_into(&mut model)?;
                    let mut report = evaluate_supervised(&model, cfg.supervised_task, &data.test)?;
                    if cfg.ratio != TrainingRatio::Baseline {
                        let images: Vec<ImageTensor> = data.test.iter().map(|s| s.image.clone()).collect();
                        report.pretext_accuracy =
                            Some(evaluate_pretext(&model, &images, &cfg.pretext()?, cfg.data_seed)?);
                    }
                    rows.extend(report_rows(&report, &record, Preset::Compare, ck.step, ""));
                }
                runs.push(record);
            }
        }
        let mut checks = common_checks(&rows, &runs);
        let steps: Vec<usize> = runs.iter().map(|r| r.steps).collect();
        checks.push(Check::new(
            "equal total_steps across runs",
            steps.iter().all(|&s| s == base.total_steps),
            format!("{steps:?}"),
        ));
        let schedules: Vec<Vec<usize>> = runs
            .iter()
            .map(|r| r.checkpoints.iter().map(|c| c.step).collect())
            .collect();
        checks.push(Check::new(
            "identical checkpoint schedule",
            schedules.windows(2).all(|w| w[0] == w[1]),
            format!("{} runs", runs.len()),
        ));
        let ids: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.run_id.as_str()).collect();
        checks.push(Check::new(
            "one run id per method and seed",
            ids.len() == 3 * seeds.len(),
            format!("{} run ids", ids.len()),
        ));
        self.write_outputs(Preset::Compare, rows, checks, runs)
    }

    /// Methods 1–3 trained on day data and evaluated on night-corrupted test data.
    pub fn run_domain(&mut self) -> Result<PresetReport> {
        let base = self.config.train.clone();
        let seeds = self.config.seeds.clone();
        let methods = domain_methods(&base);
        let mut checks = vec![
            Check::new(
                "m1 vs m2 differ only in ratio",
                methods[0].1.diff(&methods[1].1) == ["ratio"],
                format!("{:?}", methods[0].1.diff(&methods[1].1)),
            ),
            Check::new(
                "m2 vs m3 differ only in selfsup_source",
                methods[1].1.diff(&methods[2].1) == ["selfsup_source"],
                format!("{:?}", methods[1].1.diff(&methods[2].1)),
            ),
        ];
        let night_pool = self.data()?.night_pool.clone();
        let day_size = self.data()?.train.len();
        let mut rows = Vec::new();
        let mut runs = Vec::new();
        for (i, (method, cfg)) in methods.iter().enumerate() {
            for &seed in &seeds {
                let cfg = with_seed(cfg, seed);
                let extra = (cfg.selfsup_source != SelfSupSource::Same).then_some(night_pool.as_slice());
                let record = self.train_cached(method, &cfg, extra)?;
                if i == 2 {
                    checks.push(Check::new(
                        format!("m3 pool = day + night (seed {seed})"),
                        record.selfsup_pool_size == day_size + night_pool.len(),
                        format!("{} = {day_size} + {}", record.selfsup_pool_size, night_pool.len()),
                    ));
                }
                let model = record.final_model()?;
                let data = self.data()?;
                let step = record.final_checkpoint().step;
                for (split, samples) in [("night", &data.night_test), ("day", &data.test)] {
                    let report = evaluate_supervised(&model, cfg.supervised_task, samples)?;
                    rows.extend(report_rows(&report, &record, Preset::Domain, step, split));
                }
                runs.push(record);
            }
        }
        checks.extend(common_checks(&rows, &runs));
        self.write_outputs(Preset::Domain, rows, checks, runs)
    }

    /// Final compare-preset models evaluated on test data with added Gaussian noise.
    /// Training never sees noise.
    pub fn run_noise(&mut self) -> Result<PresetReport> {
        let base = self.config.train.clone();
        let seeds = self.config.seeds.clone();
        let sigmas = self.config.noise_sigmas.clone();
        let mut rows = Vec::new();
        let mut runs = Vec::new();
        for (method, cfg) in compare_methods(&base) {
            for &seed in &seeds {
                let cfg = with_seed(&cfg, seed);
                let record = self.train_cached(&method, &cfg, None)?;
                let model = record.final_model()?;
                let step = record.final_checkpoint().step;
                for &sigma in &sigmas {
                    let noisy = self.data()?.noisy_test(sigma, cfg.data_seed)?;
                    let report = evaluate_supervised(&model, cfg.supervised_task, &noisy)?;
                    rows.extend(report_rows(
                        &report,
                        &record,
                        Preset::Noise,
                        step,
                        &format!("sigma={sigma}"),
                    ));
                }
                runs.push(record);
            }
        }
        let mut checks = common_checks(&rows, &runs);
        let grid: std::collections::BTreeSet<(String, String)> = rows
            .iter()
            .filter(|r| r.metric.ends_with("/mean_iou") || r.metric.ends_with("/classification_accuracy"))
            .map(|r| (r.method().to_string(), r.metric.clone()))
            .collect();
        checks.push(Check::new(
            "full model x sigma grid",
            grid.len() == 3 * sigmas.len(),
            format!("{} cells", grid.len()),
        ));
        let compare_csv = self.output.join("compare.csv");
        if compare_csv.exists() && sigmas.contains(&0.0) {
            let compare = read_rows(&compare_csv)?;
            let mut mismatches = 0;
            let mut matched = 0;
            for r in rows.iter().filter(|r| r.metric == "sigma=0/mean_iou") {
                if let Some(c) = compare
                    .iter()
                    .find(|c| c.run_id == r.run_id && c.step == r.step && c.metric == "mean_iou")
                {
                    matched += 1;
                    if c.value != r.value {
                        mismatches += 1;
                    }
                }
            }
            checks.push(Check::new(
                "sigma=0 equals compare final metrics",
                mismatches == 0 && matched > 0,
                format!("{matched} matched, {mismatches} differ"),
            ));
        }
        self.write_outputs(Preset::Noise, rows, checks, runs)
    }

    pub fn run(&mut self, preset: Preset) -> Result<PresetReport> {
        match preset {
            Preset::Compare => self.run_compare(),
            Preset::Domain => self.run_domain(),
            Preset::Noise => self.run_noise(),
        }
    }
}

fn load_cached(dir: &Path, method: &str, cfg: &TrainConfig) -> Result<Option<RunRecord>> {
    let Ok(stored) = fs::read_to_string(dir.join("config.txt")) else {
        return Ok(None);
    };
    let Ok(meta) = fs::read_to_string(dir.join("run.txt")) else {
        return Ok(None);
    };
    if stored != cfg.to_text() {
        return Ok(None);
    }
    let meta: BTreeMap<&str, &str> = meta
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let field = |k: &str| -> Result<f64> {
        meta.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing `{k}`", dir.display())))
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    paths.sort();
    let checkpoints = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    if checkpoints.last().map(|c| c.step) != Some(cfg.total_steps) {
        return Ok(None);
    }
    if checkpoints.iter().any(|c| c.config_hash != cfg.hash()) {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint hash mismatch",
            dir.display()
        )));
    }
    Ok(Some(RunRecord {
        method: method.to_string(),
        run_id: run_id(method, cfg),
        config: cfg.clone(),
        checkpoints,
        steps: field("steps")? as usize,
        selfsup_steps: field("selfsup_steps")? as usize,
        selfsup_pool_size: field("selfsup_pool_size")? as usize,
        wall_ms: field("wall_ms")?,
        cached: true,
    }))
}

fn report_rows(report: &MetricsReport, run: &RunRecord, preset: Preset, step: usize, prefix: &str) -> Vec<Row> {
    report
        .entries()
        .into_iter()
        .map(|(metric, class, value)| Row {
            run_id: run.run_id.clone(),
            preset: preset.name().to_string(),
            seed: run.config.seed,
            step,
            metric: if prefix.is_empty() {
                metric.to_string()
            } else {
                format!("{prefix}/{metric}")
            },
            class,
            value,
        })
        .collect()
}

fn common_checks(rows: &[Row], runs: &[RunRecord]) -> Vec<Check> {
    let bad: Vec<&Row> = rows
        .iter()
        .filter(|r| !(0.0..=1.0).contains(&r.value) || !r.value.is_finite())
        .collect();
    let hashes_ok = runs.iter().all(|r| {
        r.run_id.ends_with(&r.config.hash()) && r.checkpoints.iter().all(|c| c.config_hash == r.config.hash())
    });
    vec![
        Check::new(
            "metrics within [0, 1]",
            bad.is_empty(),
            format!("{} out of range", bad.len()),
        ),
        Check::new("run ids embed config hashes", hashes_ok, format!("{} runs", runs.len())),
    ]
}

/// Groups rows by (method, step, metric, class) and aggregates over seeds.
pub fn summarize(rows: &[Row]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, usize, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((
                r.preset.clone(),
                r.method().to_string(),
                r.step,
                r.metric.clone(),
                r.class.clone(),
            ))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((preset, method, step, metric, class), values)| SummaryRow {
            preset,
            method,
            step,
            metric,
            class,
            seeds: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

pub fn write_rows(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<Row>, _>>()?)
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in summary {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Headline metric name for a preset's summary table and plot.
fn headline(summary: &[SummaryRow]) -> &'static str {
    if summary.iter().any(|r| r.metric.ends_with("mean_iou")) {
        "mean_iou"
    } else {
        "classification_accuracy"
    }
}

/// Human-readable table of the headline metric.
pub fn summary_table(preset: Preset, summary: &[SummaryRow]) -> String {
    let metric = headline(summary);
    let mut out = format!(
        "{:<28} {:>7} {:<26} {:>8} {:>8} {:>8}\n",
        "method", "step", "metric", "mean", "min", "max"
    );
    let mut selected: Vec<&SummaryRow> = summary
        .iter()
        .filter(|r| r.metric == metric || r.metric.ends_with(&format!("/{metric}")))
        .collect();
    if preset == Preset::Compare {
        let last = selected.iter().map(|r| r.step).max().unwrap_or(0);
        selected.retain(|r| r.step == last);
    }
    for r in selected {
        out.push_str(&format!(
            "{:<28} {:>7} {:<26} {:>8.4} {:>8.4} {:>8.4}\n",
            r.method, r.step, r.metric, r.mean, r.min, r.max
        ));
    }
    out
}

fn sigma_of(metric: &str) -> Option<f64> {
    metric.strip_prefix("sigma=")?.split('/').next()?.parse().ok()
}

/// Mean line with a min/max band per method. The x axis is the step for
/// `compare`, σ for `noise` and the method index for `domain`.
pub fn render_plot(preset: Preset, summary: &[SummaryRow], path: &Path) -> Result<()> {
    use plotters::prelude::*;

    let metric = headline(summary);
    let mut series: BTreeMap<String, Vec<(f64, f64, f64, f64)>> = BTreeMap::new();
    let methods: Vec<String> = {
        let mut m: Vec<String> = summary.iter().map(|r| r.method.clone()).collect();
        m.dedup();
        m
    };
    for r in summary {
        let x = match preset {
            Preset::Compare if r.metric == metric => Some(r.step as f64),
            Preset::Noise if r.metric.ends_with(&format!("/{metric}")) => sigma_of(&r.metric),
            Preset::Domain if r.metric == format!("night/{metric}") => {
                methods.iter().position(|m| *m == r.method).map(|i| i as f64)
            }
            _ => None,
        };
        if let Some(x) = x {
            series
                .entry(r.method.clone())
                .or_default()
                .push((x, r.mean, r.min, r.max));
        }
    }
    for points in series.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let all = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, _, lo, hi) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(lo);
        y1 = y1.max(hi);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.1).max(0.01);
    let xpad = ((x1 - x0) * 0.05).max(0.5);
    let x_label = match preset {
        Preset::Compare => "training step",
        Preset::Noise => "noise sigma (0-255 scale)",
        Preset::Domain => "method",
    };
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    let draw = |e: &dyn std::fmt::Display| Error::Invariant(format!("plot: {e}"));
    root.fill(&WHITE).map_err(|e| draw(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("{preset}: {metric} (mean, min-max over seeds)"),
            ("sans-serif", 18),
        )
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d((x0 - xpad)..(x1 + xpad), (y0 - pad).max(0.0)..(y1 + pad).min(1.0))
        .map_err(|e| draw(&e))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(metric)
        .draw()
        .map_err(|e| draw(&e))?;
    for (i, (method, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let band: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (p.0, p.3))
            .chain(points.iter().rev().map(|p| (p.0, p.2)))
            .collect();
        chart
            .draw_series(std::iter::once(Polygon::new(band, color.mix(0.15))))
            .map_err(|e| draw(&e))?;
        chart
            .draw_series(LineSeries::new(
                points.iter().map(|p| (p.0, p.1)),
                color.stroke_width(2),
            ))
            .map_err(|e| draw(&e))?
            .label(method.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        chart
            .draw_series(points.iter().map(|p| Circle::new((p.0, p.1), 3, color.filled())))
            .map_err(|e| draw(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw(&e))?;
    root.present().map_err(|e| draw(&e))?;
    Ok(())
}

/// Rebuilds the summary CSV and plot of a preset from its long-form CSV.
pub fn regenerate_report(output: &Path, preset: Preset) -> Result<(Vec<SummaryRow>, PathBuf)> {
    let rows = read_rows(&output.join(format!("{preset}.csv")))?;
    let summary = summarize(&rows);
    write_summary(&output.join(format!("{preset}_summary.csv")), &summary)?;
    let plot = output.join(format!("{preset}.svg"));
    render_plot(preset, &summary, &plot)?;
    Ok((summary, plot))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run_id: &str, seed: u64, step: usize, metric: &str, value: f64) -> Row {
        Row {
            run_id: run_id.into(),
            preset: "compare".into(),
            seed,
            step,
            metric: metric.into(),
            class: "all".into(),
            value,
        }
    }

    #[test]
    fn experiment_config_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("seeds = 4, 5\nnoise_sigmas = 0,7.5\nomega = 2\n")
            .unwrap();
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.noise_sigmas, vec![0.0, 7.5]);
        let mut again = ExperimentConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert!(matches!(
            ExperimentConfig::default().apply_text("seeds = x"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(ExperimentConfig::default().set("noise_sigmas", "-1").is_err());
    }

    #[test]
    fn domain_methods_differ_in_one_key_each() {
        let m = domain_methods(&TrainConfig::default());
        assert_eq!(m[0].1.diff(&m[1].1), vec!["ratio"]);
        assert_eq!(m[1].1.diff(&m[2].1), vec!["selfsup_source"]);
    }

    #[test]
    fn summary_aggregates_over_seeds() {
        let rows = vec![
            row("a:1", 1, 10, "mean_iou", 0.5),
            row("a:2", 2, 10, "mean_iou", 0.7),
            row("b:3", 1, 10, "mean_iou", 0.2),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, "a");
        assert!((s[0].mean - 0.6).abs() < 1e-12);
        assert_eq!((s[0].min, s[0].max, s[0].seeds), (0.5, 0.7, 2));
    }

    #[test]
    fn csv_and_plot_regenerate_from_rows() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            row("baseline:1", 1, 10, "mean_iou", 0.5),
            row("baseline:1", 1, 20, "mean_iou", 0.6),
            row("rotation:2", 1, 10, "mean_iou", 0.55),
            row("rotation:2", 1, 20, "mean_iou", 0.65),
        ];
        write_rows(&dir.path().join("compare.csv"), &rows).unwrap();
        assert_eq!(read_rows(&dir.path().join("compare.csv")).unwrap(), rows);
        let (summary, plot) = regenerate_report(dir.path(), Preset::Compare).unwrap();
        assert_eq!(summary.len(), 4);
        let svg = fs::read_to_string(plot).unwrap();
        assert!(svg.contains("<svg") && svg.contains("rotation"));
        assert!(summary_table(Preset::Compare, &summary).contains("0.6500"));
    }

    #[test]
    fn sigma_prefix_parses() {
        assert_eq!(sigma_of("sigma=7.5/mean_iou"), Some(7.5));
        assert_eq!(sigma_of("night/mean_iou"), None);
    }
}
