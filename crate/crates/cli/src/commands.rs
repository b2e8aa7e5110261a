//! One function per subcommand: resolve configuration, run, write outputs
//! and the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use ising_topo::baseline::{reconstruct_dataset, Lag, Pooling};
use ising_topo::dataset::{build_splits, Dataset, Split};
use ising_topo::eval::{confidence_sweep, density_guess_accuracy, entropy_split, evaluate, linear_fit, threshold_range};
use ising_topo::nn::{Architecture, Checkpoint, Model};
use ising_topo::pairs::{pair_count, pairs};
use ising_topo::train::{fine_tune, Curriculum, Stage, TrainHistory, Trainer};
use serde::Serialize;

use crate::args::*;
use crate::config::*;
use crate::experiment::{pretrain, run_point, PointResult, PointSettings};
use crate::manifest::{write_atomic, Artifact, RunManifest};
use crate::plot::{line_chart, Series};
use crate::tables::{self, *};
use crate::{apply_flags, apply_opt_flags};

pub const CHECKPOINT: &str = "model.ckpt";

pub fn split_file(split: Split) -> &'static str {
    match split {
        Split::Train => "train.bin",
        Split::Test => "test.bin",
        Split::Generalization => "generalization.bin",
    }
}

pub fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        "generalization" | "gen" => Ok(Split::Generalization),
        _ => Err(usage(format!("unknown split `{s}`; use train, test or generalization"))),
    }
}

pub fn load_split(dir: &Path, split: Split) -> anyhow::Result<Dataset> {
    let p = dir.join(split_file(split));
    Dataset::load(&p).with_context(|| format!("loading {}", p.display()))
}

/// Collects outputs and writes the manifest at the end of a run.
struct Run {
    command: &'static str,
    start: Instant,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
}

impl Run {
    fn start(command: &'static str, out: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            start: Instant::now(),
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
        })
    }

    fn input(&mut self, p: PathBuf) {
        self.inputs.push(p);
    }

    fn seed(&mut self, name: &str, v: u64) {
        self.seeds.insert(name.to_string(), v);
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> anyhow::Result<()> {
        let p = self.path(name);
        tables::write(&p, rows)
    }

    fn text(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let p = self.path(name);
        write_atomic(&p, body.as_bytes())
    }

    fn finish(self, argv: &[String], config: &impl Serialize) -> anyhow::Result<RunManifest> {
        let m = RunManifest {
            tool: format!("ising-topo {}", env!("CARGO_PKG_VERSION")),
            command: self.command.to_string(),
            argv: argv.to_vec(),
            config: serde_json::to_value(config)?,
            seeds: self.seeds,
            inputs: self.inputs.iter().map(|p| Artifact::of(p)).collect::<anyhow::Result<_>>()?,
            outputs: self.outputs.iter().map(|p| Artifact::of(p)).collect::<anyhow::Result<_>>()?,
            duration_secs: self.start.elapsed().as_secs_f64(),
        };
        m.save(&self.out)?;
        Ok(m)
    }
}

fn apply_data(dst: &mut DataConfig, f: &DataFlags) {
    apply_flags!(dst, f; nodes, edges, lattices, n_test, gen_lattices, n_gen, temperature, tau, steps, gain_mode);
    apply_opt_flags!(dst, f; n_train, n_train_per_lattice);
}

fn apply_optim(dst: &mut OptimConfig, f: &OptimFlags) {
    apply_flags!(dst, f; arch, epochs, batch_size, learning_rate, checkpoint_every, plateau_window, plateau_threshold);
    if f.trace_batches {
        dst.trace_batches = true;
    }
}

fn history_outputs(run: &mut Run, prefix: &str, h: &TrainHistory, o: &OptimConfig) -> anyhow::Result<()> {
    run.text(&format!("{prefix}history.csv"), &h.to_csv())?;
    let flags = h.plateau_flags(o.plateau_window, o.plateau_threshold);
    let rows: Vec<PlateauRow> = h
        .epochs
        .iter()
        .zip(flags)
        .map(|(e, f)| PlateauRow {
            epoch: e.epoch,
            grad_norm: e.grad_norm,
            plateau: u8::from(f),
        })
        .collect();
    run.csv(&format!("{prefix}plateau.csv"), &rows)?;
    if o.trace_batches {
        let rows: Vec<(usize, f64)> = h.batch_grad_norms.iter().copied().enumerate().collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["batch", "grad_norm"])?;
        for (b, g) in rows {
            w.write_record([b.to_string(), g.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        let p = run.path(&format!("{prefix}batch_grad_norms.csv"));
        write_atomic(&p, &bytes)?;
    }
    let ep = |f: &dyn Fn(&ising_topo::train::EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        h.epochs.iter().filter_map(|e| f(e).map(|v| (e.epoch as f64, v))).collect()
    };
    let svg = line_chart(
        "Accuracy per epoch",
        "epoch",
        "accuracy",
        &[
            Series::new("train", ep(&|e| Some(e.train_gamma))),
            Series::new("test", ep(&|e| e.test_gamma)),
        ],
    );
    run.text(&format!("{prefix}history.svg"), &svg)
}

pub fn gen(a: GenArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let mut c: GenConfig = load_file(a.config.as_deref())?;
    apply_opt_flags!(c, a; seed, out);
    apply_data(&mut c.data, &a.data);
    require(&c.seed, "seed")?;
    c.out = Some(absolute(&require(&c.out, "out")?)?);
    run_gen(&c, argv)
}

pub fn run_gen(c: &GenConfig, argv: &[String]) -> anyhow::Result<RunManifest> {
    let seed = require(&c.seed, "seed")?;
    let out = require(&c.out, "out")?;
    let spec = c.data.spec(seed);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let mut run = Run::start("gen", &out)?;
    run.seed("seed", seed);
    let s = build_splits(&spec)?;
    s.verify_protocol()?;
    for (split, d) in [(Split::Train, &s.train), (Split::Test, &s.test), (Split::Generalization, &s.generalization)] {
        let p = run.path(split_file(split));
        d.save(&p)?;
    }
    let mut lattices = Vec::new();
    for d in [&s.train, &s.generalization] {
        for l in d.lattices() {
            let edges: Vec<String> = l.edges().map(|(i, j)| format!("{i}-{j}")).collect();
            lattices.push((l.lattice_id().unwrap_or(0), edges.join(" ")));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lattice_id", "edges"])?;
    for (id, e) in lattices {
        w.write_record([id.to_string(), e])?;
    }
    let p = run.path("lattices.csv");
    write_atomic(&p, &w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    run.finish(argv, c)
}

pub fn train(a: TrainArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let mut c: TrainRunConfig = load_file(a.config.as_deref())?;
    apply_opt_flags!(c, a; seed, init_seed, data, out, resume);
    apply_optim(&mut c.optim, &a.optim);
    require(&c.seed, "seed")?;
    c.data = Some(existing(&require(&c.data, "data")?)?);
    c.out = Some(absolute(&require(&c.out, "out")?)?);
    if let Some(r) = &c.resume {
        c.resume = Some(existing(r)?);
    }
    run_train(&c, argv)
}

pub fn run_train(c: &TrainRunConfig, argv: &[String]) -> anyhow::Result<RunManifest> {
    let seed = require(&c.seed, "seed")?;
    let data = require(&c.data, "data")?;
    let out = require(&c.out, "out")?;
    let init_seed = c.init_seed.unwrap_or(seed);
    let mut run = Run::start("train", &out)?;
    run.seed("seed", seed);
    run.seed("init_seed", init_seed);
    let train = load_split(&data, Split::Train)?;
    let test = load_split(&data, Split::Test)?;
    run.input(data.join(split_file(Split::Train)));
    run.input(data.join(split_file(Split::Test)));
    let tc = c.optim.train_config(c.optim.epochs, seed);
    let mut trainer = match &c.resume {
        Some(p) => {
            run.input(p.clone());
            Trainer::resume(Checkpoint::load(p)?, tc)?
        }
        None => {
            let arch: Architecture = c.optim.arch.parse().map_err(|e| usage(format!("--arch: {e}")))?;
            Trainer::new(Model::new(arch, train.nodes(), train.steps(), init_seed)?, tc).map_err(|e| usage(e.to_string()))?
        }
    };
    let resume_path = out.join("resume.ckpt");
    if c.optim.checkpoint_every > 0 {
        trainer = trainer.with_checkpoints(&resume_path);
    }
    let h = trainer.run(&train, Some(&test))?;
    if c.optim.checkpoint_every > 0 && resume_path.exists() {
        run.outputs.push(resume_path);
    }
    let p = run.path(CHECKPOINT);
    trainer.checkpoint().save(&p)?;
    history_outputs(&mut run, "", &h, &c.optim)?;
    run.finish(argv, c)
}

pub fn finetune(a: FinetuneArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let mut c: FinetuneConfig = load_file(a.config.as_deref())?;
    apply_opt_flags!(c, a; seed, init_seed, pretrain, target, out);
    apply_flags!(c, a; pretrain_epochs);
    if a.carry_optimizer {
        c.carry_optimizer = true;
    }
    apply_optim(&mut c.optim, &a.optim);
    require(&c.seed, "seed")?;
    c.pretrain = Some(existing(&require(&c.pretrain, "pretrain")?)?);
    c.target = Some(existing(&require(&c.target, "target")?)?);
    c.out = Some(absolute(&require(&c.out, "out")?)?);
    run_finetune(&c, argv)
}

pub fn run_finetune(c: &FinetuneConfig, argv: &[String]) -> anyhow::Result<RunManifest> {
    let seed = require(&c.seed, "seed")?;
    let pre_dir = require(&c.pretrain, "pretrain")?;
    let tgt_dir = require(&c.target, "target")?;
    let out = require(&c.out, "out")?;
    let init_seed = c.init_seed.unwrap_or(seed);
    let mut run = Run::start("finetune", &out)?;
    run.seed("seed", seed);
    run.seed("init_seed", init_seed);
    let mut sets = Vec::new();
    for dir in [&pre_dir, &tgt_dir] {
        for split in [Split::Train, Split::Test] {
            sets.push(load_split(dir, split)?);
            run.input(dir.join(split_file(split)));
        }
    }
    let arch: Architecture = c.optim.arch.parse().map_err(|e| usage(format!("--arch: {e}")))?;
    let model = Model::new(arch, sets[0].nodes(), sets[0].steps(), init_seed)?;
    let cur = Curriculum {
        pretrain: c.optim.train_config(c.pretrain_epochs, seed),
        finetune: c.optim.train_config(c.optim.epochs, seed),
        carry_optimizer: c.carry_optimizer,
    };
    let (m, hp, hf) = fine_tune(
        model,
        Stage {
            train: &sets[0],
            test: Some(&sets[1]),
        },
        Stage {
            train: &sets[2],
            test: Some(&sets[3]),
        },
        &cur,
    )?;
    let p = run.path(CHECKPOINT);
    Checkpoint::model_only(m).save(&p)?;
    history_outputs(&mut run, "pretrain_", &hp, &c.optim)?;
    history_outputs(&mut run, "finetune_", &hf, &c.optim)?;
    run.finish(argv, c)
}

pub fn eval(a: EvalArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let mut c: EvalConfig = load_file(a.config.as_deref())?;
    apply_opt_flags!(c, a; checkpoint, data, out);
    apply_flags!(c, a; split, batch_size);
    parse_split(&c.split)?;
    c.checkpoint = Some(existing(&require(&c.checkpoint, "checkpoint")?)?);
    c.data = Some(existing(&require(&c.data, "data")?)?);
    c.out = Some(absolute(&require(&c.out, "out")?)?);
    run_eval(&c, argv)
}

pub fn run_eval(c: &EvalConfig, argv: &[String]) -> anyhow::Result<RunManifest> {
    let ckpt_path = require(&c.checkpoint, "checkpoint")?;
    let data = require(&c.data, "data")?;
    let out = require(&c.out, "out")?;
    let split = parse_split(&c.split)?;
    let mut run = Run::start("eval", &out)?;
    let model = Checkpoint::load(&ckpt_path)?.model;
    let d = load_split(&data, split)?;
    run.input(ckpt_path);
    run.input(data.join(split_file(split)));
    if d.is_empty() {
        anyhow::bail!("the {} split is empty", split.name());
    }
    let report = evaluate(&model, &d, c.batch_size)?;
    let es = entropy_split(std::slice::from_ref(&report));
    run.csv("report.csv", &report_rows(&report))?;
    run.csv("summary.csv", &[SummaryRow::new(split, d.len(), &report, &es)])?;
    let cdf = |ok: bool| -> Vec<(f64, f64)> {
        let mut s: Vec<f64> = report.records.iter().filter(|r| r.correct() == ok).map(|r| r.entropy).collect();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        s.iter().enumerate().map(|(i, &v)| (v, (i + 1) as f64 / n)).collect()
    };
    let svg = line_chart(
        "Cumulative entropy distribution",
        "entropy S",
        "fraction of connections",
        &[Series::new("correct", cdf(true)), Series::new("incorrect", cdf(false))],
    );
    run.text("entropy.svg", &svg)?;
    println!("gamma {} over {} instances ({})", report.gamma, d.len(), split.name());
    run.finish(argv, c)
}

pub fn parse_thresholds(s: &str) -> anyhow::Result<Vec<f64>> {
    let bad = |e: String| usage(format!("--thresholds `{s}`: {e}"));
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<anyhow::Result<_>>()?;
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step".into()));
        }
        threshold_range(parts[0], parts[1], parts[2]).map_err(|e| bad(e.to_string()))
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect()
    }
}

pub fn sweep_entropy(a: SweepEntropyArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let mut c: SweepEntropyConfig = load_file(a.config.as_deref())?;
    apply_opt_flags!(c, a; report, out);
    apply_flags!(c, a; thresholds);
    parse_thresholds(&c.thresholds)?;
    c.report = Some(existing(&require(&c.report, "report")?)?);
    c.out = Some(absolute(&require(&c.out, "out")?)?);
    run_sweep_entropy(&c, argv)
}

pub fn run_sweep_entropy(c: &SweepEntropyConfig, argv: &[String]) -> anyhow::Result<RunManifest> {
    let report_path = require(&c.report, "report")?;
    let out = require(&c.out, "out")?;
    let thresholds = parse_thresholds(&c.thresholds)?;
    let mut run = Run::start("sweep-entropy", &out)?;
    let report = read_report(&report_path)?;
    run.input(report_path);
    let pts = confidence_sweep(&[report], &thresholds).map_err(|e| usage(e.to_string()))?;
    let rows: Vec<SweepRow> = pts.iter().map(SweepRow::from).collect();
    run.csv("sweep.csv", &rows)?;
    let svg = line_chart(
        "Confidence sweep",
        "entropy threshold S_c",
        "fraction",
        &[
            Series::new("eta", pts.iter().map(|p| (p.threshold, p.eta)).collect()),
            Series::new(
                "filtered accuracy",
                pts.iter().filter_map(|p| p.gamma_filtered.map(|g| (p.threshold, g))).collect(),
            ),
        ],
    );
    run.text("sweep.svg", &svg)?;
    run.finish(argv, c)
}

pub fn sweep_temperature(a: SweepTemperatureArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let mut c: SweepTemperatureConfig = load_file(a.config.as_deref())?;
    apply_opt_flags!(c, a; seed, out, pretrain_temperature);
    apply_flags!(c, a; temperatures, jobs, pretrain_epochs, lag, pooling);
    apply_data(&mut c.data, &a.data);
    apply_optim(&mut c.optim, &a.optim);
    require(&c.seed, "seed")?;
    if c.temperatures.is_empty() {
        return Err(usage("missing required flag --temperatures"));
    }
    if c.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    c.out = Some(absolute(&require(&c.out, "out")?)?);
    run_sweep_temperature(&c, argv)
}

fn point_rows(points: &[PointResult]) -> Vec<TemperatureRow> {
    points
        .iter()
        .map(|p| TemperatureRow {
            temperature: p.temperature,
            gamma_cold: p.gamma_cold,
            gamma_finetuned: p.gamma_finetuned,
            gamma_baseline: p.gamma_baseline,
            density_guess: p.density_guess,
            cold_grad_norm_epoch1: p.cold_history.epochs[0].grad_norm,
            finetune_grad_norm_epoch1: p.finetune_history.as_ref().map(|h| h.epochs[0].grad_norm),
            finetune_start_grad_norm: p.finetune_start_grad_norm,
        })
        .collect()
}

pub fn run_sweep_temperature(c: &SweepTemperatureConfig, argv: &[String]) -> anyhow::Result<RunManifest> {
    let seed = require(&c.seed, "seed")?;
    let out = require(&c.out, "out")?;
    let lag: Lag = c.lag.to_string().parse().map_err(|e: ising_topo::Error| usage(e.to_string()))?;
    let pooling: Pooling = c.pooling.parse().map_err(|e: ising_topo::Error| usage(e.to_string()))?;
    c.optim.arch.parse::<Architecture>().map_err(|e| usage(format!("--arch: {e}")))?;
    let mut run = Run::start("sweep-temperature", &out)?;
    run.seed("seed", seed);
    let settings = PointSettings {
        data: &c.data,
        optim: &c.optim,
        seed,
        lag,
        pooling,
    };
    let pre = match c.pretrain_temperature {
        Some(t) => Some(pretrain(&settings, t, c.pretrain_epochs)?),
        None => None,
    };
    let points = run_points(&settings, &c.temperatures, pre.as_ref(), c.jobs)?;
    if let Some(p) = &pre {
        history_outputs(&mut run, "pretrain_", &p.history, &c.optim)?;
    }
    for p in &points {
        let tag = format!("T{}_", p.temperature);
        history_outputs(&mut run, &format!("{tag}cold_"), &p.cold_history, &c.optim)?;
        if let Some(h) = &p.finetune_history {
            history_outputs(&mut run, &format!("{tag}finetune_"), h, &c.optim)?;
        }
    }
    run.csv("temperature.csv", &point_rows(&points))?;
    let curve = |f: &dyn Fn(&PointResult) -> Option<f64>| -> Vec<(f64, f64)> {
        points.iter().filter_map(|p| f(p).map(|g| (p.temperature, g))).collect()
    };
    let svg = line_chart(
        "Accuracy versus temperature",
        "temperature T",
        "test accuracy",
        &[
            Series::new("cold start", curve(&|p| Some(p.gamma_cold))),
            Series::new("fine-tuned", curve(&|p| p.gamma_finetuned)),
            Series::new("correlation", curve(&|p| Some(p.gamma_baseline))),
            Series::new("density guess", curve(&|p| Some(p.density_guess))),
        ],
    );
    run.text("temperature.svg", &svg)?;
    run.finish(argv, c)
}

#[cfg(feature = "parallel")]
fn run_points(
    s: &PointSettings<'_>,
    temps: &[f64],
    pre: Option<&crate::experiment::Pretrained>,
    jobs: usize,
) -> anyhow::Result<Vec<PointResult>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| temps.par_iter().map(|&t| run_point(s, t, pre)).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_points(
    s: &PointSettings<'_>,
    temps: &[f64],
    pre: Option<&crate::experiment::Pretrained>,
    _jobs: usize,
) -> anyhow::Result<Vec<PointResult>> {
    temps.iter().map(|&t| run_point(s, t, pre)).collect()
}

pub fn baseline(a: BaselineArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let mut c: BaselineConfig = load_file(a.config.as_deref())?;
    apply_opt_flags!(c, a; data, out, edges);
    apply_flags!(c, a; split, lag, pooling);
    if a.include_train {
        c.include_train = true;
    }
    parse_split(&c.split)?;
    c.data = Some(existing(&require(&c.data, "data")?)?);
    c.out = Some(absolute(&require(&c.out, "out")?)?);
    run_baseline(&c, argv)
}

pub fn run_baseline(c: &BaselineConfig, argv: &[String]) -> anyhow::Result<RunManifest> {
    let data = require(&c.data, "data")?;
    let out = require(&c.out, "out")?;
    let split = parse_split(&c.split)?;
    let lag: Lag = c.lag.to_string().parse().map_err(|e: ising_topo::Error| usage(e.to_string()))?;
    let pooling: Pooling = c.pooling.parse().map_err(|e: ising_topo::Error| usage(e.to_string()))?;
    let mut run = Run::start("baseline", &out)?;
    let d = load_split(&data, split)?;
    run.input(data.join(split_file(split)));
    let train = if c.include_train && split != Split::Train {
        run.input(data.join(split_file(Split::Train)));
        Some(load_split(&data, Split::Train)?)
    } else {
        None
    };
    let extra: Vec<&Dataset> = train.iter().collect();
    let edges = c.edges.unwrap_or(d.spec.edges);
    let res = reconstruct_dataset(&d, &extra, lag, pooling, edges)?;
    let mut rows = Vec::new();
    for (gi, g) in res.groups.iter().enumerate() {
        let truth = d.samples[g.instances[0]].target();
        for (k, (i, j)) in pairs(d.nodes()).enumerate() {
            rows.push(ScoreRow {
                group: gi,
                lattice_id: g.lattice_id,
                i,
                j,
                score: g.profile.scores[k],
                degenerate: u8::from(g.profile.degenerate[k]),
                predicted: u8::from(g.predicted.pair_flags()[k]),
                truth: u8::from(truth[k]),
            });
        }
    }
    run.csv("scores.csv", &rows)?;
    let guess = density_guess_accuracy(pair_count(d.nodes()), edges);
    run.csv(
        "baseline.csv",
        &[BaselineRow {
            split: split.name().to_string(),
            lag: c.lag,
            pooling: pooling.to_string(),
            include_train: u8::from(c.include_train),
            groups: res.groups.len(),
            gamma: res.gamma,
            density_guess: guess,
        }],
    )?;
    let ranked = |connected: bool| -> Vec<(f64, f64)> {
        let mut s: Vec<f64> = rows.iter().filter(|r| (r.truth == 1) == connected).map(|r| r.score).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let n = s.len() as f64;
        s.iter().enumerate().map(|(i, &v)| ((i + 1) as f64 / n, v)).collect()
    };
    let svg = line_chart(
        "Correlation scores by rank",
        "rank fraction",
        "score",
        &[Series::new("connected", ranked(true)), Series::new("unconnected", ranked(false))],
    );
    run.text("scores.svg", &svg)?;
    println!("baseline gamma {} (density guess {guess})", res.gamma);
    run.finish(argv, c)
}

pub fn fit(a: FitArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let mut c: FitConfig = load_file(a.config.as_deref())?;
    apply_opt_flags!(c, a; points, out, x, y);
    c.points = Some(existing(&require(&c.points, "points")?)?);
    c.out = Some(absolute(&require(&c.out, "out")?)?);
    run_fit(&c, argv)
}

pub fn run_fit(c: &FitConfig, argv: &[String]) -> anyhow::Result<RunManifest> {
    let points_path = require(&c.points, "points")?;
    let out = require(&c.out, "out")?;
    let mut run = Run::start("fit", &out)?;
    let pts = read_points(&points_path, c.x.as_deref(), c.y.as_deref())?;
    run.input(points_path);
    let f = linear_fit(&pts)?;
    run.csv(
        "fit.csv",
        &[FitRow {
            n: pts.len(),
            a: f.a,
            b: f.b,
            r2: f.r2,
        }],
    )?;
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0), h.max(p.0)));
    let svg = line_chart(
        "Least-squares fit",
        c.x.as_deref().unwrap_or("x"),
        c.y.as_deref().unwrap_or("y"),
        &[
            Series::new("data", pts.clone()),
            Series::new("fit", vec![(lo, f.predict(lo)), (hi, f.predict(hi))]),
        ],
    );
    run.text("fit.svg", &svg)?;
    println!("a = {}\nb = {}\nR2 = {}", f.a, f.b, f.r2);
    run.finish(argv, c)
}

/// Replays a manifest's resolved configuration into `out`.
pub fn rerun(a: RerunArgs, argv: &[String]) -> anyhow::Result<RunManifest> {
    let m = RunManifest::load(&a.manifest)?;
    let out = absolute(&a.out)?;
    macro_rules! replay {
        ($ty:ty, $f:ident) => {{
            let mut c: $ty = serde_json::from_value(m.config.clone())?;
            c.out = Some(out);
            $f(&c, argv)
        }};
    }
    match m.command.as_str() {
        "gen" => replay!(GenConfig, run_gen),
        "train" => replay!(TrainRunConfig, run_train),
        "finetune" => replay!(FinetuneConfig, run_finetune),
        "eval" => replay!(EvalConfig, run_eval),
        "sweep-entropy" => replay!(SweepEntropyConfig, run_sweep_entropy),
        "sweep-temperature" => replay!(SweepTemperatureConfig, run_sweep_temperature),
        "baseline" => replay!(BaselineConfig, run_baseline),
        "fit" => replay!(FitConfig, run_fit),
        other => anyhow::bail!("manifest names unknown command `{other}`"),
    }
}

pub fn dispatch(cli: Cli, argv: &[String]) -> anyhow::Result<RunManifest> {
    match cli.command {
        Command::Gen(a) => gen(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Finetune(a) => finetune(a, argv),
        Command::Eval(a) => eval(a, argv),
        Command::SweepEntropy(a) => sweep_entropy(a, argv),
        Command::SweepTemperature(a) => sweep_temperature(a, argv),
        Command::Baseline(a) => baseline(a, argv),
        Command::Fit(a) => fit(a, argv),
        Command::Rerun(a) => rerun(a, argv),
    }
}
