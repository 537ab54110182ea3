//! Scenario library: bimodal camera layouts, the hybrid toy benchmark,
//! multi-seed arm comparisons and distance sweeps.

pub mod cli;
pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::{
    evaluate_gradients, fit_distance_exponent, variance_decompose, Estimation, RegimeGradientPopulation, VarianceReport,
};
use crate::error::{Error, Result};
use crate::grouping::{distance_stats, split, RegimePartition};
use crate::reconcile::Operator;
use crate::render::{render, Image, LossConfig};
use crate::sampler::SamplerKind;
use crate::scene::{make_synthetic_scene, perturb_scene, BlockKind, CameraSpec, SplatScene};
use crate::train::{train, RunRecord, TrainConfig, TrainOutcome};
pub use config::Config;

/// Test camera ids start here so they never collide with training ids.
pub const TEST_ID_BASE: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraLayout {
    pub n_near: usize,
    pub n_far: usize,
    pub r_near: (f64, f64),
    pub r_far: (f64, f64),
    /// Offsets are uniform in `[-lateral, lateral]^2`.
    pub lateral: f64,
    pub f: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraLayout {
    fn default() -> Self {
        CameraLayout {
            n_near: 8,
            n_far: 8,
            r_near: (1.0, 1.3),
            r_far: (5.0, 6.0),
            lateral: 0.25,
            f: 48.0,
            width: 32,
            height: 32,
        }
    }
}

impl CameraLayout {
    pub fn from_config(cfg: &Config) -> Result<CameraLayout> {
        let d = CameraLayout::default();
        Ok(CameraLayout {
            n_near: cfg.get("cams.n_near", d.n_near)?,
            n_far: cfg.get("cams.n_far", d.n_far)?,
            r_near: (
                cfg.get("cams.r_near_min", d.r_near.0)?,
                cfg.get("cams.r_near_max", d.r_near.1)?,
            ),
            r_far: (
                cfg.get("cams.r_far_min", d.r_far.0)?,
                cfg.get("cams.r_far_max", d.r_far.1)?,
            ),
            lateral: cfg.get("cams.lateral", d.lateral)?,
            f: cfg.get("cams.f", d.f)?,
            width: cfg.get("cams.width", d.width)?,
            height: cfg.get("cams.height", d.height)?,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n_near < 2 || self.n_far < 2 {
            return Err(Error::invalid("bimodal layouts need at least 2 near and 2 far cameras"));
        }
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ok(self.r_near) || !ok(self.r_far) {
            return Err(Error::invalid("distance ranges must satisfy 0 < min <= max"));
        }
        if self.r_far.0 <= self.r_near.1 {
            return Err(Error::invalid(format!(
                "far range [{}, {}] must lie strictly above near range [{}, {}]",
                self.r_far.0, self.r_far.1, self.r_near.0, self.r_near.1
            )));
        }
        if !(self.lateral >= 0.0) {
            return Err(Error::invalid("lateral offset range must be non-negative"));
        }
        Ok(())
    }
}

/// Near cameras get ids `id_base..`, far cameras follow.
pub fn gen_bimodal_cameras(layout: &CameraLayout, seed: u64, id_base: u32) -> Result<Vec<CameraSpec>> {
    layout.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(layout.n_near + layout.n_far);
    let groups = [(layout.n_near, layout.r_near), (layout.n_far, layout.r_far)];
    for (n, (lo, hi)) in groups {
        for _ in 0..n {
            let r = rng.random_range(lo..=hi);
            let offset = [0; 2].map(|_| rng.random_range(-layout.lateral..=layout.lateral));
            let id = id_base + out.len() as u32;
            out.push(CameraSpec::new(id, offset, r, layout.f, layout.width, layout.height)?);
        }
    }
    Ok(out)
}

pub const CAMS_CSV_HEADER: &str = "id,split,offset_x,offset_y,r,f,width,height,regime";

/// Camera table with the regime of each camera under `partition`.
pub fn cameras_csv(train: &[CameraSpec], test: &[CameraSpec], partition: Option<&RegimePartition>) -> String {
    let mut out = format!("{CAMS_CSV_HEADER}\n");
    for (split, cams) in [("train", train), ("test", test)] {
        for c in cams {
            let regime = partition.map_or("", |p| p.regime_of(c).name());
            let _ = writeln!(
                out,
                "{},{split},{},{},{},{},{},{},{regime}",
                c.id, c.offset[0], c.offset[1], c.r, c.f, c.width, c.height
            );
        }
    }
    out
}

pub fn parse_cameras_csv(text: &str) -> Result<(Vec<CameraSpec>, Vec<CameraSpec>)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CAMS_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header '{CAMS_CSV_HEADER}'"),
            })
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        if f.len() != 9 {
            return Err(bad(format!("expected 9 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("'{s}': {e}")));
        let id = f[0].parse::<u32>().map_err(|e| bad(format!("'{}': {e}", f[0])))?;
        let cam = CameraSpec::new(
            id,
            [num(f[2])?, num(f[3])?],
            num(f[4])?,
            num(f[5])?,
            int(f[6])?,
            int(f[7])?,
        )?;
        match f[1] {
            "train" => train.push(cam),
            "test" => test.push(cam),
            other => return Err(bad(format!("unknown split '{other}'"))),
        }
    }
    Ok((train, test))
}

/// One compared configuration: a sampler, a reconciler and a budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub sampler: SamplerKind,
    pub operator: Operator,
    pub iterations: u64,
}

impl Arm {
    /// Parses `sampler[+reconciler]@iterations`; the reconciler defaults to
    /// `sum`.
    pub fn parse(spec: &str, cagrad_c: f64, tau: f64) -> Result<Arm> {
        let bad = || Error::config(format!("arm '{spec}' is not sampler[+reconciler]@iterations"));
        let (head, iters) = spec.trim().split_once('@').ok_or_else(bad)?;
        let iterations: u64 = iters.trim().parse().map_err(|_| bad())?;
        let (s, op) = match head.split_once('+') {
            Some((s, op)) => (s, op),
            None => (head, "sum"),
        };
        let sampler = SamplerKind::from_name(s.trim()).ok_or_else(bad)?;
        let operator = Operator::from_name(op.trim(), cagrad_c, tau).ok_or_else(bad)?;
        if iterations == 0 {
            return Err(bad());
        }
        Ok(Arm {
            sampler,
            operator,
            iterations,
        })
    }

    pub fn label(&self) -> String {
        if self.sampler.is_paired() && self.operator != Operator::Sum {
            format!("{}+{}@{}", self.sampler.name(), self.operator.name(), self.iterations)
        } else {
            format!("{}@{}", self.sampler.name(), self.iterations)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scene_seed: u64,
    pub n_splats: usize,
    pub extent: f64,
    /// Standard deviation of the initial parameter perturbation.
    pub perturb: f64,
    pub cam_seed: u64,
    pub layout: CameraLayout,
    pub test_near: usize,
    pub test_far: usize,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    /// Shared training settings; sampler, reconciler, budget and seed are
    /// overridden per run.
    pub base: TrainConfig,
}

impl ScenarioSpec {
    /// The default toy benchmark: 16 splats, 8+8 training and 4+4 test
    /// cameras, 32x32 images, three seeds.
    pub fn hybrid16() -> ScenarioSpec {
        ScenarioSpec {
            scene_seed: 0,
            n_splats: 16,
            extent: 1.0,
            perturb: 0.15,
            cam_seed: 0,
            layout: CameraLayout::default(),
            test_near: 4,
            test_far: 4,
            arms: DEFAULT_ARMS
                .iter()
                .map(|a| Arm::parse(a, 0.5, -0.1).expect("default arms parse"))
                .collect(),
            seeds: vec![0, 1, 2],
            base: TrainConfig::default(),
        }
    }

    pub fn from_config(cfg: &Config) -> Result<ScenarioSpec> {
        let d = ScenarioSpec::hybrid16();
        let (c, tau) = (cfg.get("cagrad_c", 0.5)?, cfg.get("tau", -0.1)?);
        let arm_specs: Vec<String> = cfg.get_list("arms", &DEFAULT_ARMS.map(String::from))?;
        let arms = arm_specs
            .iter()
            .map(|a| Arm::parse(a, c, tau))
            .collect::<Result<Vec<_>>>()?;
        let spec = ScenarioSpec {
            scene_seed: cfg.get("scene.seed", d.scene_seed)?,
            n_splats: cfg.get("scene.n", d.n_splats)?,
            extent: cfg.get("scene.extent", d.extent)?,
            perturb: cfg.get("scene.perturb", d.perturb)?,
            cam_seed: cfg.get("cams.seed", d.cam_seed)?,
            layout: CameraLayout::from_config(cfg)?,
            test_near: cfg.get("cams.test_near", d.test_near)?,
            test_far: cfg.get("cams.test_far", d.test_far)?,
            arms,
            seeds: cfg.get_list("seeds", &d.seeds)?,
            base: cfg.train_config()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::invalid("scenario has no arms"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("scenario has no seeds"));
        }
        self.layout.validate()
    }

    pub fn target_scene(&self) -> Result<SplatScene> {
        make_synthetic_scene(self.scene_seed, self.n_splats, self.extent)
    }

    pub fn init_scene(&self, target: &SplatScene, seed: u64) -> Result<SplatScene> {
        perturb_scene(target, seed, self.perturb)
    }

    pub fn train_cameras(&self) -> Result<Vec<CameraSpec>> {
        gen_bimodal_cameras(&self.layout, self.cam_seed, 0)
    }

    pub fn test_cameras(&self) -> Result<Vec<CameraSpec>> {
        let layout = CameraLayout {
            n_near: self.test_near,
            n_far: self.test_far,
            ..self.layout
        };
        gen_bimodal_cameras(&layout, self.cam_seed.wrapping_add(1), TEST_ID_BASE)
    }

    pub fn arm_config(&self, arm: &Arm, seed: u64) -> TrainConfig {
        let mut cfg = self.base.clone();
        cfg.iterations = arm.iterations;
        cfg.seed = seed;
        cfg.sampler.kind = arm.sampler;
        cfg.reconcile.operator = arm.operator;
        cfg
    }
}

pub const DEFAULT_ARMS: [&str; 6] = [
    "single@2000",
    "single@4000",
    "r2view@2000",
    "balanced@2000",
    "balanced+project@2000",
    "active+project@2000",
];

/// Final metrics of one (arm, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub arm: String,
    pub seed: u64,
    pub iterations: u64,
    pub psnr_all: f64,
    pub ssim_all: f64,
    pub psnr_near: f64,
    pub psnr_far: f64,
    pub conflict_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub n: usize,
    pub psnr_mean: f64,
    /// Sample standard deviation; absent with fewer than two seeds.
    pub psnr_std: Option<f64>,
    pub ssim_mean: f64,
    pub ssim_std: Option<f64>,
    pub psnr_near_mean: f64,
    pub psnr_far_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub arm_a: String,
    pub arm_b: String,
    /// `mean(b) - mean(a)` in dB.
    pub delta_psnr: f64,
    /// Larger of the two seed standard deviations.
    pub band: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSummary {
    pub seed: u64,
    pub stage: &'static str,
    pub iter: u64,
    pub sigma2_w: f64,
    pub sigma2_b: f64,
    pub ratio_bw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub runs: Vec<RunSummary>,
    pub arms: Vec<ArmSummary>,
    pub deltas: Vec<Delta>,
    pub variance: Vec<VarianceSummary>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n - 1) standard deviation.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

impl ComparisonReport {
    pub fn arm(&self, label: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == label)
    }

    pub fn delta(&self, a: &str, b: &str) -> Option<&Delta> {
        self.deltas.iter().find(|d| d.arm_a == a && d.arm_b == b)
    }

    /// Mean `sigma2_b / sigma2_w` at the given stage over seeds.
    pub fn mean_ratio(&self, stage: &str) -> Option<f64> {
        let r: Vec<f64> = self
            .variance
            .iter()
            .filter(|v| v.stage == stage)
            .filter_map(|v| v.ratio_bw)
            .collect();
        (!r.is_empty()).then(|| mean(&r))
    }

    /// Builds arm summaries and all pairwise deltas from per-run rows.
    pub fn from_runs(runs: Vec<RunSummary>, variance: Vec<VarianceSummary>) -> ComparisonReport {
        let mut labels: Vec<String> = Vec::new();
        for r in &runs {
            if !labels.contains(&r.arm) {
                labels.push(r.arm.clone());
            }
        }
        let arms: Vec<ArmSummary> = labels
            .iter()
            .map(|label| {
                let rows: Vec<&RunSummary> = runs.iter().filter(|r| &r.arm == label).collect();
                let col = |f: fn(&RunSummary) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
                let psnr = col(|r| r.psnr_all);
                let ssim = col(|r| r.ssim_all);
                ArmSummary {
                    arm: label.clone(),
                    n: rows.len(),
                    psnr_mean: mean(&psnr),
                    psnr_std: sample_std(&psnr),
                    ssim_mean: mean(&ssim),
                    ssim_std: sample_std(&ssim),
                    psnr_near_mean: mean(&col(|r| r.psnr_near)),
                    psnr_far_mean: mean(&col(|r| r.psnr_far)),
                }
            })
            .collect();
        let mut deltas = Vec::new();
        for (i, a) in arms.iter().enumerate() {
            for b in &arms[i + 1..] {
                deltas.push(Delta {
                    arm_a: a.arm.clone(),
                    arm_b: b.arm.clone(),
                    delta_psnr: b.psnr_mean - a.psnr_mean,
                    band: a.psnr_std.zip(b.psnr_std).map(|(x, y)| x.max(y)),
                });
            }
        }
        ComparisonReport {
            runs,
            arms,
            deltas,
            variance,
        }
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from(RUNS_CSV_HEADER);
        out.push('\n');
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.arm,
                r.seed,
                r.iterations,
                r.psnr_all,
                r.ssim_all,
                r.psnr_near,
                r.psnr_far,
                r.conflict_rate.map_or(String::new(), |c| c.to_string())
            );
        }
        out
    }

    pub fn arms_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from(ARMS_CSV_HEADER);
        out.push('\n');
        for a in &self.arms {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                a.arm,
                a.n,
                a.psnr_mean,
                opt(a.psnr_std),
                a.ssim_mean,
                opt(a.ssim_std),
                a.psnr_near_mean,
                a.psnr_far_mean
            );
        }
        out
    }

    pub fn deltas_csv(&self) -> String {
        let mut out = String::from(DELTAS_CSV_HEADER);
        out.push('\n');
        for d in &self.deltas {
            let band = d.band.map_or(String::new(), |b| b.to_string());
            let _ = writeln!(out, "{},{},{},{band}", d.arm_a, d.arm_b, d.delta_psnr);
        }
        out
    }

    pub fn variance_csv(&self) -> String {
        let mut out = String::from(VARIANCE_CSV_HEADER);
        out.push('\n');
        for v in &self.variance {
            let ratio = v.ratio_bw.map_or(String::new(), |r| r.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{ratio}",
                v.seed, v.stage, v.iter, v.sigma2_w, v.sigma2_b
            );
        }
        out
    }
}

pub const RUNS_CSV_HEADER: &str = "arm,seed,iterations,psnr_all,ssim_all,psnr_near,psnr_far,conflict_rate";
pub const ARMS_CSV_HEADER: &str = "arm,n,psnr_mean,psnr_std,ssim_mean,ssim_std,psnr_near_mean,psnr_far_mean";
pub const DELTAS_CSV_HEADER: &str = "arm_a,arm_b,delta_psnr,band";
pub const VARIANCE_CSV_HEADER: &str = "seed,stage,iter,sigma2_w,sigma2_b,ratio_bw";

/// Cached targets for a set of cameras.
pub fn render_targets(target: &SplatScene, cams: &[CameraSpec]) -> Vec<Image> {
    cams.iter().map(|c| render(target, c)).collect()
}

/// Variance decomposition over all training cameras at a frozen point.
pub fn population_report(
    scene: &SplatScene,
    target: &SplatScene,
    cams: &[CameraSpec],
    partition: &RegimePartition,
    loss: &LossConfig,
) -> Result<(RegimeGradientPopulation, VarianceReport)> {
    let grads = evaluate_gradients(scene, cams, &render_targets(target, cams), loss)?;
    let pop = RegimeGradientPopulation::from_partition(&grads, cams, partition, 0)?;
    let report = variance_decompose(&pop, Estimation::Exhaustive)?;
    Ok((pop, report))
}

fn variance_summary(seed: u64, stage: &'static str, iter: u64, r: &VarianceReport) -> VarianceSummary {
    VarianceSummary {
        seed,
        stage,
        iter,
        sigma2_w: r.sigma2_w,
        sigma2_b: r.sigma2_b,
        ratio_bw: r.between_within(),
    }
}

/// One finished (arm, seed) run.
#[derive(Debug, Clone)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub outcome: TrainOutcome,
}

fn summarize(run: &ArmRun) -> Result<RunSummary> {
    let last = run
        .outcome
        .record
        .final_eval()
        .ok_or_else(|| Error::invalid("run has no evaluation rows"))?;
    let m = last.metrics;
    let near = m.near.ok_or_else(|| Error::invalid("no near-regime test cameras"))?;
    let far = m.far.ok_or_else(|| Error::invalid("no far-regime test cameras"))?;
    Ok(RunSummary {
        arm: run.arm.label(),
        seed: run.seed,
        iterations: run.arm.iterations,
        psnr_all: m.all.psnr,
        ssim_all: m.all.ssim,
        psnr_near: near.psnr,
        psnr_far: far.psnr,
        conflict_rate: run.outcome.record.conflict_rate(),
    })
}

/// Everything a scenario produced, including per-run records.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub report: ComparisonReport,
    pub runs: Vec<ArmRun>,
    pub train_cams: Vec<CameraSpec>,
    pub test_cams: Vec<CameraSpec>,
    pub partition: RegimePartition,
}

/// Trains every arm for every seed (in parallel), evaluates on the test
/// cameras and measures the variance decomposition at initialization and at
/// the mid-training checkpoint of the reference arm.
///
/// The reference arm is the first `r2view` arm, or the first arm otherwise;
/// its checkpoint nearest half the budget is used, the earlier one on ties.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioOutput> {
    spec.validate()?;
    let target = spec.target_scene()?;
    let train_cams = spec.train_cameras()?;
    let test_cams = spec.test_cameras()?;
    let partition = split(&train_cams, spec.base.partition)?;
    let jobs: Vec<(usize, u64)> = (0..spec.arms.len())
        .flat_map(|a| spec.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<Result<ArmRun>> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let arm = spec.arms[a].clone();
            let init = spec.init_scene(&target, seed)?;
            let cfg = spec.arm_config(&arm, seed);
            let outcome = train(&init, &target, &train_cams, &test_cams, &cfg)?;
            Ok(ArmRun { arm, seed, outcome })
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for ((a, seed), r) in jobs.iter().zip(results) {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => failures.push(format!("{} seed {seed}: {e}", spec.arms[*a].label())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::invalid(format!("scenario incomplete: {}", failures.join("; "))));
    }

    let reference = spec
        .arms
        .iter()
        .position(|a| a.sampler == SamplerKind::RandomPair)
        .unwrap_or(0);
    let mut variance = Vec::new();
    for &seed in &spec.seeds {
        let init = spec.init_scene(&target, seed)?;
        let (_, r) = population_report(&init, &target, &train_cams, &partition, &spec.base.loss)?;
        variance.push(variance_summary(seed, "init", 0, &r));
        let run = runs
            .iter()
            .find(|r| r.seed == seed && r.arm == spec.arms[reference])
            .expect("every job succeeded");
        let half = run.arm.iterations / 2;
        let (iter, mid) = run
            .outcome
            .checkpoints
            .iter()
            .min_by_key(|(it, _)| it.abs_diff(half))
            .expect("training always checkpoints iteration 0");
        let (_, r) = population_report(mid, &target, &train_cams, &partition, &spec.base.loss)?;
        variance.push(variance_summary(seed, "mid", *iter, &r));
    }

    let summaries = runs.iter().map(summarize).collect::<Result<Vec<_>>>()?;
    Ok(ScenarioOutput {
        report: ComparisonReport::from_runs(summaries, variance),
        runs,
        train_cams,
        test_cams,
        partition,
    })
}

/// Writes the scenario's report and per-run telemetry under `dir`.
pub fn write_scenario(out: &ScenarioOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("runs"))?;
    fs::write(
        dir.join("cams.csv"),
        cameras_csv(&out.train_cams, &out.test_cams, Some(&out.partition)),
    )?;
    for run in &out.runs {
        let stem = format!("{}_seed{}", run.arm.label(), run.seed);
        write_record(&run.outcome.record, &dir.join("runs"), &stem)?;
    }
    fs::write(dir.join("runs.csv"), out.report.runs_csv())?;
    fs::write(dir.join("arms.csv"), out.report.arms_csv())?;
    fs::write(dir.join("deltas.csv"), out.report.deltas_csv())?;
    fs::write(dir.join("variance.csv"), out.report.variance_csv())?;
    Ok(())
}

pub fn write_record(record: &RunRecord, dir: &Path, stem: &str) -> Result<()> {
    let mut iters = Vec::new();
    record.write_iter_csv(&mut iters)?;
    fs::write(dir.join(format!("{stem}_iters.csv")), iters)?;
    let mut evals = Vec::new();
    record.write_eval_csv(&mut evals)?;
    fs::write(dir.join(format!("{stem}_evals.csv")), evals)?;
    Ok(())
}

/// Mean per-block gradient norm at each sweep distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub r: f64,
    pub mean_norms: [f64; 5],
}

/// Gradient norms of `scene` against renders of `target` from `views`
/// cameras at each distance. The lateral offsets are drawn once and shared
/// by every distance.
pub fn distance_sweep(
    scene: &SplatScene,
    target: &SplatScene,
    rs: &[f64],
    views: usize,
    layout: &CameraLayout,
    seed: u64,
    loss: &LossConfig,
) -> Result<Vec<SweepPoint>> {
    if views == 0 {
        return Err(Error::invalid("sweep needs at least one view per distance"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<[f64; 2]> = (0..views)
        .map(|_| [0; 2].map(|_| rng.random_range(-layout.lateral..=layout.lateral)))
        .collect();
    rs.iter()
        .map(|&r| {
            let cams = offsets
                .iter()
                .enumerate()
                .map(|(i, &o)| CameraSpec::new(i as u32, o, r, layout.f, layout.width, layout.height))
                .collect::<Result<Vec<_>>>()?;
            let grads = evaluate_gradients(scene, &cams, &render_targets(target, &cams), loss)?;
            let mut mean_norms = [0.0; 5];
            for kind in BlockKind::ALL {
                mean_norms[kind.index()] = grads.iter().map(|g| g.blocks.block_norm(kind)).sum::<f64>() / views as f64;
            }
            Ok(SweepPoint { r, mean_norms })
        })
        .collect()
}

/// Fitted distance exponent per block.
pub fn sweep_exponents(points: &[SweepPoint]) -> Result<[f64; 5]> {
    let mut out = [0.0; 5];
    for kind in BlockKind::ALL {
        let m: Vec<(f64, f64)> = points.iter().map(|p| (p.r, p.mean_norms[kind.index()])).collect();
        out[kind.index()] = fit_distance_exponent(&m)?;
    }
    Ok(out)
}

/// Bimodality coefficient of the layout's camera distances.
pub fn layout_bimodality(cams: &[CameraSpec]) -> Result<f64> {
    Ok(distance_stats(cams)?.bimodality)
}
