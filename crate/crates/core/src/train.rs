//! Two-view training loop: sample, render and backprop each view, reconcile,
//! Adam step, record telemetry.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grouping::{split, PartitionMethod, Regime, RegimePartition};
use crate::reconcile::{ConflictStats, ReconcileConfig, Reconciler};
use crate::render::{backward, psnr, render, ssim, Image, LossConfig};
use crate::sampler::{SamplerConfig, SamplerKind, SamplerState};
use crate::scene::{BlockKind, BlockVectors, CameraSpec, GradientSet, SplatScene};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// Default per-block learning rates in [`BlockKind::ALL`] order.
pub const DEFAULT_LR: [f64; 5] = [2e-3, 5e-3, 1e-3, 5e-2, 2.5e-2];

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BlockVectors,
    pub v: BlockVectors,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_splats: usize) -> Self {
        AdamState {
            m: BlockVectors::zeros(n_splats),
            v: BlockVectors::zeros(n_splats),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Returns the norm of the step.
pub fn adam_step(
    params: &mut BlockVectors,
    grads: &BlockVectors,
    state: &mut AdamState,
    lr: &[f64; 5],
    cfg: &AdamConfig,
) -> Result<f64> {
    params.check_shape(grads)?;
    params.check_shape(&state.m)?;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut step_sq = 0.0;
    for kind in BlockKind::ALL {
        let rate = lr[kind.index()];
        let g = &grads[kind];
        let m = &mut state.m[kind];
        let v = &mut state.v[kind];
        for (i, p) in params[kind].iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let step = rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            *p -= step;
            step_sq += step * step;
        }
    }
    Ok(step_sq.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lr: [f64; 5],
    pub adam: AdamConfig,
    pub sampler: SamplerConfig,
    pub reconcile: ReconcileConfig,
    pub partition: PartitionMethod,
    /// Evaluate (and checkpoint) every this many iterations; 0 disables all
    /// but the final evaluation.
    pub eval_every: u64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Standard deviation of Gaussian pixel noise added to cached targets.
    pub target_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            lr: DEFAULT_LR,
            adam: AdamConfig::default(),
            sampler: SamplerConfig::default(),
            reconcile: ReconcileConfig::default(),
            partition: PartitionMethod::MedianRadial,
            eval_every: 500,
            seed: 0,
            loss: LossConfig::default(),
            target_noise: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.lr.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::config("learning rates must be positive"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::config("adam betas must be in [0, 1) and eps positive"));
        }
        if !(self.target_noise >= 0.0) {
            return Err(Error::config("target_noise must be non-negative"));
        }
        self.sampler.validate()?;
        self.reconcile.validate()?;
        self.loss.validate()
    }
}

/// Telemetry for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRow {
    pub iter: u64,
    pub view_a: u32,
    pub view_b: Option<u32>,
    pub loss_a: f64,
    pub loss_b: Option<f64>,
    /// Per-block conflict statistics; present whenever two views were rendered.
    pub stats: Option<ConflictStats>,
    /// Norm of the gradient handed to the optimizer.
    pub update_norm: f64,
    /// Norm of the parameter change made by Adam.
    pub step_norm: f64,
}

impl IterRow {
    pub fn dots(&self) -> Option<[f64; 5]> {
        self.stats.map(|s| s.dots)
    }

    pub fn conflict_any(&self) -> bool {
        self.stats.is_some_and(|s| s.any_conflict())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeMetrics {
    pub all: Metrics,
    pub near: Option<Metrics>,
    pub far: Option<Metrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub iter: u64,
    pub metrics: RegimeMetrics,
}

pub const ITER_CSV_HEADER: &str =
    "iter,view_a,view_b,loss_a,loss_b,dot_pos,dot_scale,dot_rot,dot_op,dot_col,conflict_any,update_norm";
pub const EVAL_CSV_HEADER: &str = "iter,psnr_all,ssim_all,psnr_near,ssim_near,psnr_far,ssim_far";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub iters: Vec<IterRow>,
    pub evals: Vec<EvalRow>,
}

fn opt_field<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl RunRecord {
    /// Online conflict rate over all (iteration, block) pairs with two views.
    pub fn conflict_rate(&self) -> Option<f64> {
        let (mut hits, mut total) = (0usize, 0usize);
        for s in self.iters.iter().filter_map(|r| r.stats) {
            hits += s.conflict.iter().filter(|&&c| c).count();
            total += 5;
        }
        (total > 0).then(|| hits as f64 / total as f64)
    }

    pub fn final_eval(&self) -> Option<&EvalRow> {
        self.evals.last()
    }

    pub fn write_iter_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{ITER_CSV_HEADER}")?;
        for r in &self.iters {
            let dots = match r.dots() {
                Some(d) => d.map(|x| x.to_string()).join(","),
                None => ",,,,".to_string(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                r.view_a,
                opt_field(r.view_b),
                r.loss_a,
                opt_field(r.loss_b),
                dots,
                r.conflict_any() as u8,
                r.update_norm
            )?;
        }
        Ok(())
    }

    pub fn write_eval_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{EVAL_CSV_HEADER}")?;
        for e in &self.evals {
            let m = &e.metrics;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.iter,
                m.all.psnr,
                m.all.ssim,
                opt_field(m.near.map(|x| x.psnr)),
                opt_field(m.near.map(|x| x.ssim)),
                opt_field(m.far.map(|x| x.psnr)),
                opt_field(m.far.map(|x| x.ssim)),
            )?;
        }
        Ok(())
    }
}

fn mean_metrics(items: &[Metrics]) -> Option<Metrics> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    Some(Metrics {
        psnr: items.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: items.iter().map(|m| m.ssim).sum::<f64>() / n,
    })
}

/// Mean per-image PSNR/SSIM overall and per regime. Without a partition only
/// the overall metrics are filled in.
pub fn evaluate(
    scene: &SplatScene,
    target_scene: &SplatScene,
    test_cams: &[CameraSpec],
    partition: Option<&RegimePartition>,
    cfg: &LossConfig,
) -> Result<RegimeMetrics> {
    if test_cams.is_empty() {
        return Err(Error::invalid("empty test camera set"));
    }
    if let Some(p) = partition {
        if let Some(c) = test_cams.iter().find(|c| p.is_near(c.id) || p.is_far(c.id)) {
            return Err(Error::invalid(format!(
                "test camera {} is also a training camera",
                c.id
            )));
        }
    }
    let (mut all, mut near, mut far) = (Vec::new(), Vec::new(), Vec::new());
    for cam in test_cams {
        let img = render(scene, cam);
        let target = render(target_scene, cam);
        let m = Metrics {
            psnr: psnr(&img, &target)?,
            ssim: ssim(&img, &target, cfg)?,
        };
        all.push(m);
        match partition.map(|p| p.regime_of(cam)) {
            Some(Regime::Near) => near.push(m),
            Some(Regime::Far) => far.push(m),
            None => {}
        }
    }
    Ok(RegimeMetrics {
        all: mean_metrics(&all).expect("nonempty"),
        near: mean_metrics(&near),
        far: mean_metrics(&far),
    })
}

/// Stepwise trainer; [`train`] drives it for the configured budget.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    params: BlockVectors,
    template: SplatScene,
    adam: AdamState,
    sampler: SamplerState,
    reconciler: Reconciler,
    cams: Vec<CameraSpec>,
    targets: Vec<Image>,
    index: BTreeMap<u32, usize>,
    partition: Option<RegimePartition>,
    iter: u64,
}

impl Trainer {
    pub fn new(scene0: &SplatScene, target_scene: &SplatScene, cams: &[CameraSpec], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if scene0.len() != target_scene.len() {
            return Err(Error::invalid("initial and target scenes differ in size"));
        }
        if cams.is_empty() {
            return Err(Error::invalid("no training cameras"));
        }
        if cfg.sampler.kind.is_paired() && cams.len() < 2 {
            return Err(Error::config("paired samplers need at least 2 cameras"));
        }
        let mut index = BTreeMap::new();
        for (i, c) in cams.iter().enumerate() {
            if index.insert(c.id, i).is_some() {
                return Err(Error::invalid(format!("duplicate camera id {}", c.id)));
            }
        }
        let partition = if cfg.sampler.kind.needs_partition() {
            Some(split(cams, cfg.partition).map_err(|e| Error::config(e.to_string()))?)
        } else {
            split(cams, cfg.partition).ok()
        };
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7461_7267);
        let noise = (cfg.target_noise > 0.0)
            .then(|| Normal::new(0.0, cfg.target_noise))
            .transpose()
            .map_err(|e| Error::config(e.to_string()))?;
        let targets = cams
            .iter()
            .map(|c| {
                let mut img = render(target_scene, c);
                if let Some(n) = &noise {
                    for p in img.pixels.iter_mut().flat_map(|p| p.iter_mut()) {
                        *p += n.sample(&mut noise_rng);
                    }
                }
                img
            })
            .collect();
        Ok(Trainer {
            params: scene0.params(),
            template: scene0.clone(),
            adam: AdamState::new(scene0.len()),
            sampler: SamplerState::new(cfg.seed, &cfg.sampler),
            reconciler: Reconciler::new(cfg.reconcile.clone())?,
            cams: cams.to_vec(),
            targets,
            index,
            partition,
            iter: 0,
            cfg,
        })
    }

    pub fn scene(&self) -> SplatScene {
        self.template
            .with_params(&self.params)
            .expect("parameter layout is fixed at construction")
    }

    pub fn partition(&self) -> Option<&RegimePartition> {
        self.partition.as_ref()
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn cameras(&self) -> &[CameraSpec] {
        &self.cams
    }

    fn view(&self, id: u32) -> Result<usize> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown camera id {id}")))
    }

    fn view_gradient(&self, scene: &SplatScene, id: u32) -> Result<(f64, GradientSet)> {
        let i = self.view(id)?;
        let (loss, mut g) = backward(scene, &self.cams[i], &self.targets[i], &self.cfg.loss)?;
        g.iteration = self.iter + 1;
        Ok((loss, g))
    }

    /// The gradient handed to the optimizer for the given views at the
    /// current parameters, together with its telemetry. Does not step.
    pub fn update_gradient(&mut self, first: u32, second: Option<u32>) -> Result<(GradientSet, IterRow)> {
        let scene = self.scene();
        let (loss_a, ga) = self.view_gradient(&scene, first)?;
        let (update, loss_b, stats) = match second {
            None => (ga, None, None),
            Some(b) => {
                let (loss_b, gb) = self.view_gradient(&scene, b)?;
                let r_a = self.cams[self.view(first)?].r;
                let r_b = self.cams[self.view(b)?].r;
                let (u, stats) = self.reconciler.combine(&ga, r_a, &gb, r_b)?;
                (u, Some(loss_b), Some(stats))
            }
        };
        let row = IterRow {
            iter: self.iter + 1,
            view_a: first,
            view_b: second,
            loss_a,
            loss_b,
            stats,
            update_norm: update.blocks.norm(),
            step_norm: 0.0,
        };
        Ok((update, row))
    }

    /// Runs one optimizer step on the given views.
    pub fn step_views(&mut self, first: u32, second: Option<u32>) -> Result<IterRow> {
        let (update, mut row) = self.update_gradient(first, second)?;
        if !update.blocks.is_finite() || !row.loss_a.is_finite() || row.loss_b.is_some_and(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("gradient or loss at iteration {}", row.iter)));
        }
        if self.cfg.sampler.kind == SamplerKind::Active {
            self.sampler.update_loss_ema(first, row.loss_a)?;
            if let (Some(b), Some(l)) = (second, row.loss_b) {
                self.sampler.update_loss_ema(b, l)?;
            }
        }
        row.step_norm = adam_step(
            &mut self.params,
            &update.blocks,
            &mut self.adam,
            &self.cfg.lr,
            &self.cfg.adam,
        )?;
        if !self.params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after iteration {}", row.iter)));
        }
        self.iter += 1;
        Ok(row)
    }

    /// Draws views with the configured sampler and steps.
    pub fn step(&mut self) -> Result<IterRow> {
        let draw = self
            .sampler
            .draw(self.cfg.sampler.kind, &self.cams, self.partition.as_ref())?;
        self.step_views(draw.first, draw.second)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scene: SplatScene,
    pub record: RunRecord,
    /// Scenes at each evaluation point, including iteration 0.
    pub checkpoints: Vec<(u64, SplatScene)>,
}

/// Full run: evaluates at iteration 0, every `eval_every` iterations and at
/// the end. Evaluation is skipped when `test_cams` is empty.
pub fn train(
    scene0: &SplatScene,
    target_scene: &SplatScene,
    cams: &[CameraSpec],
    test_cams: &[CameraSpec],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(scene0, target_scene, cams, cfg.clone())?;
    let mut record = RunRecord::default();
    let mut checkpoints = Vec::new();
    let eval = |trainer: &Trainer, record: &mut RunRecord, checkpoints: &mut Vec<(u64, SplatScene)>| {
        let scene = trainer.scene();
        if !test_cams.is_empty() {
            let metrics = evaluate(&scene, target_scene, test_cams, trainer.partition(), &cfg.loss)?;
            record.evals.push(EvalRow {
                iter: trainer.iteration(),
                metrics,
            });
        }
        checkpoints.push((trainer.iteration(), scene));
        Ok::<(), Error>(())
    };
    eval(&trainer, &mut record, &mut checkpoints)?;
    for it in 1..=cfg.iterations {
        record.iters.push(trainer.step()?);
        let at_eval = cfg.eval_every > 0 && it % cfg.eval_every == 0;
        if at_eval || it == cfg.iterations {
            eval(&trainer, &mut record, &mut checkpoints)?;
        }
    }
    Ok(TrainOutcome {
        scene: trainer.scene(),
        record,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::conflict_rate_from_dots;
    use crate::reconcile::Operator;
    use crate::render::PSNR_CAP_DB;
    use crate::scene::{make_synthetic_scene, perturb_scene};

    fn cams() -> Vec<CameraSpec> {
        let rs = [1.0, 1.2, 1.1, 5.0, 5.5, 6.0];
        rs.iter()
            .enumerate()
            .map(|(i, &r)| CameraSpec::new(i as u32, [0.05 * i as f64, -0.03 * i as f64], r, 12.0, 12, 12).unwrap())
            .collect()
    }

    fn test_cams() -> Vec<CameraSpec> {
        [1.05, 5.2]
            .iter()
            .enumerate()
            .map(|(i, &r)| CameraSpec::new(100 + i as u32, [0.0, 0.0], r, 12.0, 12, 12).unwrap())
            .collect()
    }

    fn cfg(kind: SamplerKind, iterations: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            eval_every: 5,
            sampler: SamplerConfig {
                kind,
                ..SamplerConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = BlockVectors::zeros(2);
        p[BlockKind::Position] = vec![1.0, 2.0, 3.0, 4.0];
        let before = p.clone();
        let mut st = AdamState::new(2);
        st.m[BlockKind::Position] = vec![1.0; 4];
        let g = BlockVectors::zeros(2);
        adam_step(&mut p, &g, &mut st, &DEFAULT_LR, &AdamConfig::default()).unwrap();
        assert_ne!(p, before);
        // Fresh moments and a zero gradient leave the parameters alone.
        let mut p = before.clone();
        let mut st = AdamState::new(2);
        adam_step(&mut p, &g, &mut st, &DEFAULT_LR, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_moments_decay_under_zero_gradient() {
        let mut p = BlockVectors::zeros(1);
        let mut st = AdamState::new(1);
        st.m[BlockKind::Opacity] = vec![1.0];
        st.v[BlockKind::Opacity] = vec![1.0];
        adam_step(
            &mut p,
            &BlockVectors::zeros(1),
            &mut st,
            &DEFAULT_LR,
            &AdamConfig::default(),
        )
        .unwrap();
        assert!((st.m[BlockKind::Opacity][0] - 0.9).abs() < 1e-15);
        assert!((st.v[BlockKind::Opacity][0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_steps_at_lr() {
        let mut p = BlockVectors::zeros(1);
        let mut g = BlockVectors::zeros(1);
        g[BlockKind::Opacity] = vec![-3.7];
        let mut st = AdamState::new(1);
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p[BlockKind::Opacity][0];
            adam_step(&mut p, &g, &mut st, &DEFAULT_LR, &AdamConfig::default()).unwrap();
            last = p[BlockKind::Opacity][0] - before;
        }
        assert!((last - DEFAULT_LR[3]).abs() < 1e-9 * DEFAULT_LR[3], "{last}");
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = BlockVectors::zeros(2);
        let mut st = AdamState::new(2);
        assert!(adam_step(
            &mut p,
            &BlockVectors::zeros(1),
            &mut st,
            &DEFAULT_LR,
            &AdamConfig::default()
        )
        .is_err());
    }

    #[test]
    fn fixed_point_stays_at_cap() {
        let target = make_synthetic_scene(3, 4, 1.0).unwrap();
        let out = train(
            &target,
            &target,
            &cams(),
            &test_cams(),
            &cfg(SamplerKind::RandomPair, 10),
        )
        .unwrap();
        for r in &out.record.iters {
            assert!(r.loss_a < 1e-12);
        }
        for e in &out.record.evals {
            assert_eq!(e.metrics.all.psnr, PSNR_CAP_DB);
            assert_eq!(e.metrics.near.unwrap().psnr, PSNR_CAP_DB);
            assert_eq!(e.metrics.far.unwrap().psnr, PSNR_CAP_DB);
        }
    }

    #[test]
    fn deterministic_and_finite() {
        let target = make_synthetic_scene(5, 4, 1.0).unwrap();
        let init = perturb_scene(&target, 9, 0.15).unwrap();
        let c = cfg(SamplerKind::Active, 20);
        let a = train(&init, &target, &cams(), &test_cams(), &c).unwrap();
        let b = train(&init, &target, &cams(), &test_cams(), &c).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.checkpoints.len(), 5);
        for r in &a.record.iters {
            assert!(r.loss_a.is_finite() && r.update_norm.is_finite());
            assert!(r.stats.is_some());
        }
        let mut csv = Vec::new();
        a.record.write_iter_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(!text.contains("NaN") && !text.contains("inf"));
        assert_eq!(text.lines().count(), 21);
    }

    #[test]
    fn online_conflict_rate_matches_diagnostics() {
        let target = make_synthetic_scene(5, 4, 1.0).unwrap();
        let init = perturb_scene(&target, 2, 0.15).unwrap();
        let out = train(&init, &target, &cams(), &[], &cfg(SamplerKind::Balanced, 30)).unwrap();
        let dots: Vec<[f64; 5]> = out.record.iters.iter().filter_map(|r| r.dots()).collect();
        assert_eq!(dots.len(), 30);
        let offline = conflict_rate_from_dots(&dots).unwrap().conflict_rate;
        assert_eq!(out.record.conflict_rate(), Some(offline));
    }

    #[test]
    fn single_and_two_view_first_updates_differ() {
        let target = make_synthetic_scene(5, 4, 1.0).unwrap();
        let init = perturb_scene(&target, 2, 0.15).unwrap();
        let mut single = Trainer::new(&init, &target, &cams(), cfg(SamplerKind::Single, 1)).unwrap();
        let mut pair = Trainer::new(&init, &target, &cams(), cfg(SamplerKind::RandomPair, 1)).unwrap();
        assert_ne!(single.step().unwrap().update_norm, pair.step().unwrap().update_norm);
    }

    #[test]
    fn same_view_twice_with_sum_doubles_gradient() {
        let target = make_synthetic_scene(5, 4, 1.0).unwrap();
        let init = perturb_scene(&target, 2, 0.15).unwrap();
        let mut c = cfg(SamplerKind::RandomPair, 1);
        c.reconcile = ReconcileConfig::with_operator(Operator::Sum);
        let mut t = Trainer::new(&init, &target, &cams(), c).unwrap();
        let (single, _) = t.update_gradient(3, None).unwrap();
        let (double, row) = t.update_gradient(3, Some(3)).unwrap();
        assert_eq!(double.blocks, single.blocks.scaled(2.0));
        assert!(!row.conflict_any());
    }

    #[test]
    fn regime_samplers_need_a_partition() {
        let target = make_synthetic_scene(5, 4, 1.0).unwrap();
        let same: Vec<CameraSpec> = (0..4)
            .map(|i| CameraSpec::new(i, [0.0, 0.0], 2.0, 12.0, 12, 12).unwrap())
            .collect();
        let err = Trainer::new(&target, &target, &same, cfg(SamplerKind::Balanced, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfiguration(_)));
        assert!(Trainer::new(&target, &target, &same, cfg(SamplerKind::Single, 1)).is_ok());
    }

    #[test]
    fn evaluate_cases() {
        let target = make_synthetic_scene(5, 4, 1.0).unwrap();
        let part = split(&cams(), PartitionMethod::MedianRadial).unwrap();
        let m = evaluate(&target, &target, &test_cams(), Some(&part), &LossConfig::default()).unwrap();
        assert_eq!(m.all.psnr, PSNR_CAP_DB);
        assert!(evaluate(&target, &target, &[], None, &LossConfig::default()).is_err());
        assert!(evaluate(&target, &target, &cams()[..1], Some(&part), &LossConfig::default()).is_err());
        let init = perturb_scene(&target, 1, 0.2).unwrap();
        let m = evaluate(&init, &target, &test_cams(), Some(&part), &LossConfig::default()).unwrap();
        let (n, f) = (m.near.unwrap(), m.far.unwrap());
        assert!((m.all.psnr - 0.5 * (n.psnr + f.psnr)).abs() < 1e-12);
    }
}
