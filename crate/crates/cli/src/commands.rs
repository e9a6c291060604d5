use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use mfid_core::baseline::{baseline_pipeline, default_c_grid, save_baseline, BaselineSettings};
use mfid_core::dataset::{
    identity_disjoint_split, identity_disjoint_splits, load_dataset, read_split, save_dataset,
    stratified_splits, synth_gaussian, write_split, DataFormat, Dataset, Split, SplitMode, StratifiedMode,
    SynthParams,
};
use mfid_core::detect::{detection_report, load_boxes, DEFAULT_IOU_THRESHOLD};
use mfid_core::eval::{
    classification_accuracy, closed_set_eval, open_set_eval, transfer_eval, verification_eval, DistractorMode,
    EvalReport, ProtocolReports, TrialConfig,
};
use mfid_core::loss::LossReport;
use mfid_core::model::{load_checkpoint, save_checkpoint, train as train_head, Objective, TrainConfig, TrainPreset};

use crate::output::{num, Run};
use crate::{AblateArgs, BaselineArgs, DetArgs, EvalArgs, Globals, SplitArgs, SynthArgs, TrainArgs, TrainFlags, TransferArgs, TrialFlags};

fn parse<T: FromStr<Err = String>>(what: &str, v: Option<&String>) -> anyhow::Result<Option<T>> {
    v.map(|s| T::from_str(s).map_err(|e| anyhow::anyhow!("{what}: {e}"))).transpose()
}

fn data_path(g: &Globals, flag: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    flag.clone()
        .or_else(|| g.file.data.clone())
        .context("no dataset given (use --data or `data` in the config)")
}

fn load(path: &Path) -> anyhow::Result<Dataset> {
    Ok(load_dataset(path, DataFormat::from_path(path))?)
}

/// Per-split seed derived from the master seed.
fn split_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

pub fn synth(g: &Globals, a: SynthArgs) -> anyhow::Result<()> {
    let f = &g.file.synth;
    let p = SynthParams {
        identities: a.identities.or(f.identities).unwrap_or(20),
        samples_per_identity: a.per_id.or(f.per_id).unwrap_or(50),
        dim: a.dim.or(f.dim).unwrap_or(64),
        center_scale: a.scale.or(f.scale).unwrap_or(1.0),
        noise_sigma: a.sigma.or(f.sigma).unwrap_or(0.3),
        seed: g.seed,
    };
    let format = a.format.clone().or_else(|| f.format.clone()).unwrap_or_else(|| "csv".into());
    let (fmt, name) = match format.as_str() {
        "csv" => (DataFormat::Csv, "dataset.csv"),
        "binary" | "bin" => (DataFormat::Binary, "dataset.bin"),
        other => bail!("unknown dataset format `{other}`"),
    };
    let ds = synth_gaussian(&p)?;
    let run = Run::new(g.out.clone(), g.seed, &format!("synth {p:?} {format}"))?;
    save_dataset(&ds, &run.path(name), fmt, Some(&run.header()))?;
    run.text(
        "manifest.txt",
        &format!(
            "file={name}\nidentities={}\nsamples_per_identity={}\ndim={}\ncenter_scale={}\nnoise_sigma={}\nseed={}\nrows={}\n",
            p.identities,
            p.samples_per_identity,
            p.dim,
            p.center_scale,
            p.noise_sigma,
            p.seed,
            ds.len()
        ),
    )?;
    Ok(())
}

#[derive(Debug)]
struct SplitSettings {
    mode: SplitMode,
    count: usize,
    test_fraction: f64,
    stratified: StratifiedMode,
}

fn split_settings(g: &Globals, a: &SplitArgs, default_mode: SplitMode) -> anyhow::Result<SplitSettings> {
    let f = &g.file.split;
    Ok(SplitSettings {
        mode: parse("split mode", a.split_mode.as_ref().or(f.mode.as_ref()))?.unwrap_or(default_mode),
        count: a.splits.or(f.count).unwrap_or(5),
        test_fraction: a.test_fraction.or(f.test_fraction).unwrap_or(0.2),
        stratified: parse("stratified mode", a.stratified_mode.as_ref().or(f.stratified_mode.as_ref()))?
            .unwrap_or_default(),
    })
}

fn make_splits(ds: &Dataset, s: &SplitSettings, seed: u64) -> anyhow::Result<Vec<Split>> {
    Ok(match s.mode {
        SplitMode::DisjointByIdentity => identity_disjoint_splits(ds, s.count, s.test_fraction, seed)?,
        SplitMode::StratifiedBySample => stratified_splits(ds, s.count, s.test_fraction, seed, s.stratified)?,
    })
}

fn train_config(g: &Globals, a: &TrainFlags) -> anyhow::Result<TrainConfig> {
    let f = &g.file.train;
    let mut c = TrainConfig::default();
    if let Some(p) = parse::<TrainPreset>("preset", a.preset.as_ref().or(f.preset.as_ref()))? {
        c = c.with_preset(p);
    }
    if let Some(v) = parse("architecture", a.arch.as_ref().or(f.architecture.as_ref()))? {
        c.architecture = v;
    }
    if let Some(v) = parse("objective", a.objective.as_ref().or(f.objective.as_ref()))? {
        c.objective = v;
    }
    macro_rules! set {
        ($field:expr, $flag:ident, $key:ident) => {
            if let Some(v) = a.$flag.or(f.$key) {
                $field = v;
            }
        };
    }
    set!(c.embed_dim, embed_dim, embed_dim);
    set!(c.loss.margin, margin, margin);
    set!(c.epochs, epochs, epochs);
    set!(c.initial_lr, lr, lr);
    set!(c.decay_factor, decay_factor, decay_factor);
    set!(c.decay_every, decay_every, decay_every);
    set!(c.batch_pairs, batch_pairs, batch_pairs);
    set!(c.similar_fraction, similar_fraction, similar_fraction);
    set!(c.momentum, momentum, momentum);
    set!(c.weight_decay, weight_decay, weight_decay);
    set!(c.loss.similar_weight, similar_weight, similar_weight);
    set!(c.loss.dissimilar_weight, dissimilar_weight, dissimilar_weight);
    c.validate()?;
    Ok(c)
}

fn trial_config(g: &Globals, a: &TrialFlags) -> anyhow::Result<TrialConfig> {
    let f = &g.file.eval;
    let d = TrialConfig::default();
    let c = TrialConfig {
        trials: a.trials.or(f.trials).unwrap_or(d.trials),
        gallery_per_identity: a.gallery.or(f.gallery).unwrap_or(d.gallery_per_identity),
        distractor_identities: a.distractors.or(f.distractors).unwrap_or(d.distractor_identities),
        distractor_mode: parse::<DistractorMode>(
            "distractor mode",
            a.distractor_mode.as_ref().or(f.distractor_mode.as_ref()),
        )?
        .unwrap_or_default(),
        far_target: a.far.or(f.far).unwrap_or(d.far_target),
        seed: g.seed,
        jobs: g.jobs,
    };
    c.validate()?;
    Ok(c)
}

/// Hash input for trial settings; the thread count does not change results.
fn trial_key(c: &TrialConfig) -> String {
    format!("{:?}", TrialConfig { jobs: 0, ..c.clone() })
}

fn loss_row(epoch: usize, r: &LossReport) -> Vec<String> {
    vec![
        epoch.to_string(),
        num(r.total),
        num(r.ce_term),
        num(r.sim_term),
        num(r.dissim_term),
        r.similar_pairs.to_string(),
        r.dissimilar_pairs.to_string(),
    ]
}

const LOSS_COLUMNS: [&str; 7] = ["epoch", "total", "ce_term", "sim_term", "dissim_term", "similar_pairs", "dissimilar_pairs"];

pub fn train(g: &Globals, a: TrainArgs) -> anyhow::Result<()> {
    let path = data_path(g, &a.data)?;
    let ds = load(&path)?;
    let ss = split_settings(g, &a.split, SplitMode::DisjointByIdentity)?;
    let cfg = train_config(g, &a.train)?;
    let run = Run::new(g.out.clone(), g.seed, &format!("train {ss:?} {cfg:?}"))?;
    for (k, split) in make_splits(&ds, &ss, g.seed)?.iter().enumerate() {
        write_split(
            split,
            &run.path(&format!("split_{k}_train.txt")),
            &run.path(&format!("split_{k}_test.txt")),
            Some(&run.header()),
        )?;
        let cfg = TrainConfig {
            seed: split_seed(g.seed, k),
            ..cfg.clone()
        };
        let trained = train_head(&ds, split, &cfg).with_context(|| format!("training split {k}"))?;
        save_checkpoint(&trained.model, &run.path(&format!("model_{k}.ckpt")))?;
        let mut w = run.csv(&format!("loss_{k}.csv"), &LOSS_COLUMNS)?;
        for (e, r) in trained.loss_history.iter().enumerate() {
            w.write_record(loss_row(e, r))?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Proto {
    Classification,
    Closed,
    Open,
    Verif,
}

fn protocols(list: &str) -> anyhow::Result<Vec<Proto>> {
    list.split(',')
        .map(|p| match p.trim() {
            "classification" | "class" => Ok(Proto::Classification),
            "closed" => Ok(Proto::Closed),
            "open" => Ok(Proto::Open),
            "verif" | "verification" => Ok(Proto::Verif),
            other => bail!("unknown protocol `{other}`"),
        })
        .collect()
}

/// metrics.csv, cmc.csv and roc.csv writers.
struct ReportFiles {
    metrics: csv::Writer<std::fs::File>,
    cmc: Option<csv::Writer<std::fs::File>>,
    roc: Option<csv::Writer<std::fs::File>>,
}

impl ReportFiles {
    fn new(run: &Run, cmc: bool, roc: bool) -> anyhow::Result<Self> {
        Ok(Self {
            metrics: run.csv("metrics.csv", &["protocol", "split", "mean", "std", "threshold"])?,
            cmc: cmc.then(|| run.csv("cmc.csv", &["split", "rank", "rate"])).transpose()?,
            roc: roc.then(|| run.csv("roc.csv", &["split", "far", "tar"])).transpose()?,
        })
    }

    fn add(&mut self, split: &str, r: &EvalReport) -> anyhow::Result<()> {
        let threshold = r.threshold().map(num).unwrap_or_default();
        self.metrics
            .write_record([r.protocol.to_string(), split.to_string(), num(r.mean), num(r.std), threshold])?;
        let curve = match r.protocol {
            mfid_core::eval::Protocol::ClosedSet => self.cmc.as_mut(),
            mfid_core::eval::Protocol::Verification => self.roc.as_mut(),
            _ => None,
        };
        if let Some(w) = curve {
            for &(x, y) in &r.curve {
                w.write_record([split.to_string(), num(x), num(y)])?;
            }
        }
        Ok(())
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.metrics.flush()?;
        for w in [self.cmc.as_mut(), self.roc.as_mut()].into_iter().flatten() {
            w.flush()?;
        }
        Ok(())
    }
}

pub fn eval(g: &Globals, a: EvalArgs) -> anyhow::Result<()> {
    let path = data_path(g, &a.data)?;
    let ds = load(&path)?;
    let models = a.models.clone().unwrap_or_else(|| g.out.clone());
    let list = a.protocols.clone().or_else(|| g.file.eval.protocols.clone()).unwrap_or_else(|| "closed,open,verif".into());
    let protos = protocols(&list)?;
    let trial = trial_config(g, &a.trial)?;
    let run = Run::new(g.out.clone(), g.seed, &format!("eval {protos:?} {}", trial_key(&trial)))?;
    let mut files = ReportFiles::new(&run, protos.contains(&Proto::Closed), protos.contains(&Proto::Verif))?;
    let mut k = 0;
    while models.join(format!("model_{k}.ckpt")).exists() {
        let model = load_checkpoint(&models.join(format!("model_{k}.ckpt")))?;
        let split = read_split(
            &models.join(format!("split_{k}_train.txt")),
            &models.join(format!("split_{k}_test.txt")),
        )?;
        let test = ds.gather(&split.test)?;
        let cfg = TrialConfig {
            seed: split_seed(g.seed, k),
            ..trial.clone()
        };
        let label = k.to_string();
        if protos.contains(&Proto::Classification) {
            let acc = classification_accuracy(&model, &test)?;
            files.metrics.write_record(["classification", &label, &num(acc), "0", ""])?;
        }
        let embedded = model.embed_samples(&test)?;
        for p in &protos {
            let r = match p {
                Proto::Classification => continue,
                Proto::Closed => closed_set_eval(&embedded, &cfg),
                Proto::Open => open_set_eval(&embedded, &cfg),
                Proto::Verif => verification_eval(&embedded, &cfg),
            }
            .with_context(|| format!("split {k}"))?;
            files.add(&label, &r)?;
        }
        k += 1;
    }
    if k == 0 {
        bail!("no model_0.ckpt in {}", models.display());
    }
    files.finish()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
}

pub fn transfer(g: &Globals, a: TransferArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&a.model)?;
    let target = load(&a.target)?;
    let trial = trial_config(g, &a.trial)?;
    let source_name = a.source_name.clone().unwrap_or_else(|| stem(&a.model));
    let target_name = a.target_name.clone().unwrap_or_else(|| stem(&a.target));
    let (test, seed) = match &a.split_dir {
        Some(dir) => {
            let s = read_split(
                &dir.join(format!("split_{}_train.txt", a.split)),
                &dir.join(format!("split_{}_test.txt", a.split)),
            )?;
            (s.test, split_seed(g.seed, a.split))
        }
        None => {
            let frac = a.test_fraction.unwrap_or(0.2);
            if frac >= 1.0 {
                ((0..target.len()).collect(), g.seed)
            } else {
                (identity_disjoint_split(&target, frac, g.seed)?.test, g.seed)
            }
        }
    };
    let cfg = TrialConfig { seed, ..trial };
    let label = format!("{source_name}->{target_name}");
    let run = Run::new(g.out.clone(), g.seed, &format!("transfer {label} {} {:?}", trial_key(&cfg), a.test_fraction))?;
    let ProtocolReports { closed, open, verification } = transfer_eval(&model, &target, &test, &cfg)?;
    let mut files = ReportFiles::new(&run, true, true)?;
    for r in [&closed, &open, &verification] {
        files.add(&label, r)?;
    }
    files.finish()
}

pub fn detmetrics(g: &Globals, a: DetArgs) -> anyhow::Result<()> {
    let iou = a.iou.or(g.file.detect.iou).unwrap_or(DEFAULT_IOU_THRESHOLD);
    if !(iou > 0.0 && iou <= 1.0) {
        bail!("IoU threshold {iou} outside (0, 1]");
    }
    let dets = load_boxes(&a.detections, true)?;
    let gts = load_boxes(&a.ground_truth, false)?;
    let report = detection_report(&dets, &gts, iou)?;
    let run = Run::new(g.out.clone(), g.seed, &format!("detmetrics iou={iou}"))?;
    let mut w = run.csv(
        "detection.csv",
        &["map", "tpr", "fpr_per_image", "true_positives", "false_positives", "ground_truths", "iou_threshold"],
    )?;
    w.write_record([
        num(report.map),
        num(report.tpr),
        num(report.fpr_per_image),
        report.true_positives.to_string(),
        report.false_positives.to_string(),
        report.ground_truths.to_string(),
        num(report.iou_threshold),
    ])?;
    w.flush()?;
    let mut m = run.csv("matches.csv", &["image_id", "detection", "ground_truth", "iou", "tp"])?;
    for im in &report.images {
        for d in &im.matches {
            m.write_record([
                im.image_id.clone(),
                d.detection.to_string(),
                d.ground_truth.map(|x| x.to_string()).unwrap_or_default(),
                num(d.iou),
                (d.is_tp() as u8).to_string(),
            ])?;
        }
    }
    m.flush()?;
    Ok(())
}

pub fn ablate(g: &Globals, a: AblateArgs) -> anyhow::Result<()> {
    let path = data_path(g, &a.data)?;
    let ds = load(&path)?;
    let f = &g.file.ablate;
    let seeds = a.seeds.or(f.seeds).unwrap_or(10);
    let arm_a: Objective = parse("arm a", a.arm_a.as_ref().or(f.arm_a.as_ref()))?.unwrap_or(Objective::Mfid);
    let arm_b: Objective = parse("arm b", a.arm_b.as_ref().or(f.arm_b.as_ref()))?.unwrap_or(Objective::CrossEntropy);
    let frac = a.test_fraction.or(g.file.split.test_fraction).unwrap_or(0.2);
    let base = train_config(g, &a.train)?;
    let trial = trial_config(g, &a.trial)?;
    let run = Run::new(
        g.out.clone(),
        g.seed,
        &format!("ablate {seeds} {arm_a} {arm_b} {frac} {base:?} {}", trial_key(&trial)),
    )?;
    let mut w = run.csv(
        "ablation.csv",
        &["seed", "a_objective", "b_objective", "a_rank1", "b_rank1", "a_tar", "b_tar", "tar_diff", "winner"],
    )?;
    let mut rows = Vec::new();
    for i in 0..seeds {
        let seed = g.seed.wrapping_add(i as u64);
        let split = identity_disjoint_split(&ds, frac, seed)?;
        let test = ds.gather(&split.test)?;
        let cfg = TrialConfig { seed, ..trial.clone() };
        let arm = |objective: Objective| -> anyhow::Result<(f64, f64)> {
            let tc = TrainConfig { objective, seed, ..base.clone() };
            let m = train_head(&ds, &split, &tc).with_context(|| format!("seed {seed}, {objective}"))?;
            let e = m.model.embed_samples(&test)?;
            Ok((closed_set_eval(&e, &cfg)?.mean, verification_eval(&e, &cfg)?.mean))
        };
        let (ra, ta) = arm(arm_a)?;
        let (rb, tb) = arm(arm_b)?;
        let winner = if ta > tb {
            "a"
        } else if tb > ta {
            "b"
        } else {
            "tie"
        };
        w.write_record([
            seed.to_string(),
            arm_a.to_string(),
            arm_b.to_string(),
            num(ra),
            num(rb),
            num(ta),
            num(tb),
            num(ta - tb),
            winner.into(),
        ])?;
        rows.push((ra, rb, ta, tb, winner));
    }
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&(f64, f64, f64, f64, &str)) -> f64| num(rows.iter().map(f).sum::<f64>() / n);
    let count = |who: &str| rows.iter().filter(|r| r.4 == who).count();
    w.write_record([
        "summary".to_string(),
        arm_a.to_string(),
        arm_b.to_string(),
        mean(|r| r.0),
        mean(|r| r.1),
        mean(|r| r.2),
        mean(|r| r.3),
        mean(|r| r.2 - r.3),
        format!("a={} b={} tie={}", count("a"), count("b"), count("tie")),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn baseline(g: &Globals, a: BaselineArgs) -> anyhow::Result<()> {
    let path = data_path(g, &a.data)?;
    let ds = load(&path)?;
    let ss = split_settings(g, &a.split, SplitMode::StratifiedBySample)?;
    let f = &g.file.baseline;
    let c_grid = match &a.c_grid {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad C value `{v}`")))
            .collect::<anyhow::Result<Vec<_>>>()?,
        None => f.c_grid.clone().unwrap_or_else(default_c_grid),
    };
    let settings = BaselineSettings {
        energy_threshold: a.energy.or(f.energy).unwrap_or(0.99),
        c_grid,
        validation_fraction: a.validation_fraction.or(f.validation_fraction).unwrap_or(0.2),
        seed: g.seed,
        ..Default::default()
    };
    let run = Run::new(g.out.clone(), g.seed, &format!("baseline {ss:?} {settings:?}"))?;
    let mut w = run.csv("baseline.csv", &["split", "accuracy", "components", "c"])?;
    let mut accs = Vec::new();
    for (k, split) in make_splits(&ds, &ss, g.seed)?.iter().enumerate() {
        let s = BaselineSettings {
            seed: split_seed(g.seed, k),
            ..settings.clone()
        };
        let (model, acc) = baseline_pipeline(&ds.gather(&split.train)?, &ds.gather(&split.test)?, &s)
            .with_context(|| format!("split {k}"))?;
        save_baseline(&model, &run.path(&format!("baseline_{k}.mfbl")))?;
        w.write_record([
            k.to_string(),
            num(acc),
            model.pca.output_dim().to_string(),
            num(model.classifier.c),
        ])?;
        accs.push(acc);
    }
    let (m, s) = mfid_core::eval::mean_std(&accs);
    w.write_record(["mean".to_string(), num(m), String::new(), String::new()])?;
    w.write_record(["std".to_string(), num(s), String::new(), String::new()])?;
    w.flush()?;
    Ok(())
}
