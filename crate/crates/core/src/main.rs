use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

use cotrain::config::TrainConfig;
use cotrain::data::{gen_shapes_dataset, load_dataset, load_image_dir, Domain};
use cotrain::harness::{regenerate_report, summary_table, ExperimentConfig, Harness, Preset};
use cotrain::image::ValueRange;
use cotrain::metrics::{evaluate_pretext, evaluate_supervised};
use cotrain::permset::{generate_permutation_set, hamming_distance, PermutationSet};
use cotrain::pretext::PretextTask;
use cotrain::rng::derive_seed;
use cotrain::trainer::{run_cotraining, write_history, TaskChoice};
use cotrain::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "cotrain", version, about = "Self-supervised co-training toolkit")]
struct Cli {
    /// Output root for everything the command writes.
    #[arg(long, global = true, env = "COTRAIN_OUTPUT_ROOT", default_value = "cotrain-output")]
    output: PathBuf,

    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand, Debug)]
enum Commands {
    /// Generate or inspect jigsaw permutation sets.
    Permset {
        #[command(subcommand)]
        action: PermsetAction,
    },
    /// Pretext-task utilities.
    Pretext {
        #[command(subcommand)]
        action: PretextAction,
    },
    /// Train one model and write its history, checkpoints and metrics.
    Train {
        #[command(flatten)]
        config: ConfigFlags,
        /// Labeled dataset directory (manifest layout) instead of synthetic data.
        #[arg(long)]
        dataset_dir: Option<PathBuf>,
        /// Directory of unlabeled images for the self-supervised branch.
        #[arg(long)]
        extra_dir: Option<PathBuf>,
    },
    /// Run an experiment preset.
    Experiment {
        preset: Preset,
        #[command(flatten)]
        config: ConfigFlags,
        /// Comma-separated training seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated noise levels on the 0-255 scale.
        #[arg(long)]
        noise_sigmas: Option<String>,
    },
    /// Rebuild summary tables and plots from the results CSVs.
    Report {
        /// Preset to rebuild; all presets with a CSV when omitted.
        preset: Option<Preset>,
    },
}

#[derive(Subcommand, Debug)]
enum PermsetAction {
    Generate {
        #[arg(long, default_value_t = 9)]
        n_tiles: usize,
        #[arg(long, default_value_t = 30)]
        count: usize,
        /// Output file; defaults to `<output>/permset-<n>-<count>.txt`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    Inspect {
        file: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum PretextAction {
    /// Write transformed samples as PNG files plus a label CSV.
    Preview {
        #[command(flatten)]
        config: ConfigFlags,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Directory of source images; synthetic images when omitted.
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
}

/// `--config FILE` plus one flag per config key, applied on top of the file.
#[derive(Debug, Clone, Default)]
struct ConfigFlags {
    file: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut flags = ConfigFlags {
            file: m.get_one::<PathBuf>("config").cloned(),
            overrides: Vec::new(),
        };
        for key in TrainConfig::KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                flags.overrides.push((key.to_string(), v.clone()));
            }
        }
        Ok(flags)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: Command) -> Command {
        let defaults = TrainConfig::default();
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Flat `key = value` config file"),
        );
        for key in TrainConfig::KEYS {
            cmd = cmd.arg(
                Arg::new(*key)
                    .long(flag_name(key))
                    .alias(*key)
                    .value_name("VALUE")
                    .help(format!("[default: {}]", defaults.get(key).unwrap_or_default()))
                    .help_heading("Config"),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl ConfigFlags {
    fn file_text(&self) -> Result<Option<String>> {
        Ok(match &self.file {
            Some(f) => Some(std::fs::read_to_string(f)?),
            None => None,
        })
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(text) = self.file_text()? {
            cfg.apply_text(&text)?;
        }
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(text) = self.file_text()? {
            cfg.apply_text(&text)?;
        }
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Diverged {
                last_checkpoint: Some(ck),
                ..
            } = &e
            {
                eprintln!("last good checkpoint: step {}", ck.step);
            }
            ExitCode::from(2)
        }
    }
}

/// Returns whether every invariant check passed.
fn run(cli: Cli) -> Result<bool> {
    let out = cli.output;
    match cli.command {
        Commands::Permset { action } => permset(action, &out),
        Commands::Pretext {
            action:
                PretextAction::Preview {
                    config,
                    count,
                    input_dir,
                },
        } => preview(&config.train_config()?, count, input_dir.as_deref(), &out),
        Commands::Train {
            config,
            dataset_dir,
            extra_dir,
        } => train(
            &config.train_config()?,
            dataset_dir.as_deref(),
            extra_dir.as_deref(),
            &out,
        ),
        Commands::Experiment {
            preset,
            config,
            seeds,
            noise_sigmas,
        } => {
            let mut cfg = config.experiment_config()?;
            if let Some(s) = seeds {
                cfg.set("seeds", &s)?;
            }
            if let Some(s) = noise_sigmas {
                cfg.set("noise_sigmas", &s)?;
            }
            experiment(cfg, preset, &out)
        }
        Commands::Report { preset } => report(preset, &out),
    }
}

fn permset(action: PermsetAction, out: &Path) -> Result<bool> {
    match action {
        PermsetAction::Generate { n_tiles, count, file } => {
            let set = generate_permutation_set(n_tiles, count)?;
            let path = file.unwrap_or_else(|| out.join(format!("permset-{n_tiles}-{count}.txt")));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            set.save(&path)?;
            println!(
                "{} permutations of {n_tiles} tiles, min pairwise Hamming distance {}",
                set.len(),
                set.min_pairwise_distance().map_or("-".into(), |d| d.to_string())
            );
            println!("wrote {}", path.display());
            Ok(true)
        }
        PermsetAction::Inspect { file } => {
            let set = PermutationSet::load(&file)?;
            println!("tiles: {}", set.n_tiles());
            println!("permutations: {}", set.len());
            let mut hist = std::collections::BTreeMap::new();
            let entries = set.entries();
            for i in 0..entries.len() {
                for j in i + 1..entries.len() {
                    *hist
                        .entry(hamming_distance(&entries[i], &entries[j])?)
                        .or_insert(0usize) += 1;
                }
            }
            println!(
                "min pairwise distance: {}",
                set.min_pairwise_distance().map_or("-".into(), |d| d.to_string())
            );
            for (d, n) in hist {
                println!("  distance {d}: {n} pairs");
            }
            Ok(true)
        }
    }
}

fn preview(cfg: &TrainConfig, count: usize, input_dir: Option<&Path>, out: &Path) -> Result<bool> {
    let images = match input_dir {
        Some(dir) => load_image_dir(dir, cfg.image_size, Domain::Day)?.images,
        None => gen_shapes_dataset(&cfg.dataset_spec(), cfg.data_seed)?
            .0
            .into_iter()
            .map(|s| s.image)
            .collect(),
    };
    let pretext = cfg.pretext()?;
    let dir = out.join(format!("preview-{}", cfg.selfsup_task.name()));
    std::fs::create_dir_all(&dir)?;
    let mut labels = csv::Writer::from_path(dir.join("labels.csv"))?;
    labels.write_record(["original", "transformed", "task", "label"])?;
    for (i, img) in images.iter().take(count).enumerate() {
        let sample = pretext.make_sample(&img.to_range(ValueRange::Centered), derive_seed(cfg.seed, i as u64))?;
        let original = format!("{i:04}-original.png");
        let transformed = format!("{i:04}-{}-{}.png", cfg.selfsup_task.name(), sample.label);
        img.save_png(&dir.join(&original))?;
        sample.image.save_png(&dir.join(&transformed))?;
        labels.write_record([
            original,
            transformed,
            cfg.selfsup_task.name().to_string(),
            sample.label.to_string(),
        ])?;
    }
    labels.flush()?;
    if cfg.selfsup_task == PretextTask::Jigsaw {
        println!("permutation set: {} entries", pretext.num_classes());
    }
    println!("wrote {} samples to {}", count.min(images.len()), dir.display());
    Ok(true)
}

fn train(cfg: &TrainConfig, dataset_dir: Option<&Path>, extra_dir: Option<&Path>, out: &Path) -> Result<bool> {
    let (train, test) = match dataset_dir {
        Some(dir) => {
            let samples = load_dataset(dir)?;
            let n_test = ((samples.len() as f64) * cfg.test_fraction).round() as usize;
            let (test, train) = samples.split_at(n_test.min(samples.len().saturating_sub(1)));
            (train.to_vec(), test.to_vec())
        }
        None => gen_shapes_dataset(&cfg.dataset_spec(), cfg.data_seed)?,
    };
    let extra = extra_dir
        .map(|d| load_image_dir(d, cfg.image_size, Domain::Night))
        .transpose()?;
    let hash = cfg.hash();
    let dir = out.join(format!("train-{hash}"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    let result = run_cotraining(cfg, &train, extra.as_ref().map(|p| p.images.as_slice()));
    let output = match result {
        Err(Error::Diverged {
            step,
            task,
            loss,
            last_checkpoint,
        }) => {
            if let Some(ck) = &last_checkpoint {
                ck.save(&dir.join(format!("step-{:07}.ckpt", ck.step)))?;
            }
            return Err(Error::Diverged {
                step,
                task,
                loss,
                last_checkpoint,
            });
        }
        other => other?,
    };
    write_history(&dir.join("history.csv"), &output.history)?;
    for ck in &output.checkpoints {
        ck.save(&dir.join(format!("step-{:07}.ckpt", ck.step)))?;
    }
    let mut report = evaluate_supervised(&output.model, cfg.supervised_task, &test)?;
    if output.count(TaskChoice::SelfSup) > 0 {
        let images: Vec<_> = test.iter().map(|s| s.image.clone()).collect();
        report.pretext_accuracy = Some(evaluate_pretext(
            &output.model,
            &images,
            &cfg.pretext()?,
            cfg.data_seed,
        )?);
    }
    let mut metrics = String::from("metric,class,value\n");
    for (m, c, v) in report.entries() {
        metrics.push_str(&format!("{m},{c},{v}\n"));
    }
    std::fs::write(dir.join("metrics.csv"), &metrics)?;
    println!("config hash {hash}, seed {}", cfg.seed);
    println!(
        "{} steps ({} supervised, {} self-supervised) in {:.1}s",
        output.history.len(),
        output.count(TaskChoice::Supervised),
        output.count(TaskChoice::SelfSup),
        output.wall_ms / 1e3
    );
    print!("{metrics}");
    println!("wrote {}", dir.display());
    Ok(true)
}

fn experiment(cfg: ExperimentConfig, preset: Preset, out: &Path) -> Result<bool> {
    let mut harness = Harness::new(cfg, out)?;
    let report = harness.run(preset)?;
    print!("{}", summary_table(preset, &report.summary));
    for check in &report.checks {
        println!(
            "[{}] {} ({})",
            if check.passed { "ok" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    println!(
        "wrote {}, {}, {}",
        report.csv_path.display(),
        report.summary_path.display(),
        report.plot_path.display()
    );
    Ok(report.all_checks_pass())
}

fn report(preset: Option<Preset>, out: &Path) -> Result<bool> {
    let presets: Vec<Preset> = match preset {
        Some(p) => vec![p],
        None => Preset::ALL
            .into_iter()
            .filter(|p| out.join(format!("{p}.csv")).exists())
            .collect(),
    };
    if presets.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no results CSV under {}",
            out.display()
        )));
    }
    for p in presets {
        let (summary, plot) = regenerate_report(out, p)?;
        print!("{}", summary_table(p, &summary));
        println!("wrote {}", plot.display());
    }
    Ok(true)
}
