//! Library-level runs that cross module boundaries.

use regime_grad::diagnostics::{check_ratio_identity, conflict_rate_from_dots, Estimation};
use regime_grad::grouping::split;
use regime_grad::harness::{population_report, run_scenario, Arm, ScenarioSpec};
use regime_grad::sampler::SamplerKind;
use regime_grad::train::{evaluate, train};
use regime_grad::Error;

fn small_spec(arms: &[&str], iterations_scale: Option<u64>) -> ScenarioSpec {
    let mut spec = ScenarioSpec::hybrid16();
    spec.arms = arms.iter().map(|a| Arm::parse(a, 0.5, -0.1).unwrap()).collect();
    if let Some(every) = iterations_scale {
        spec.base.eval_every = every;
    }
    spec
}

#[test]
fn compute_matched_pair_bookkeeping() {
    let spec = small_spec(&["single@60", "r2view@30"], Some(10));
    let out = run_scenario(&spec).unwrap();
    assert_eq!(out.report.runs.len(), 6);
    assert_eq!(out.report.arms.len(), 2);
    assert_eq!(out.report.deltas.len(), 1);
    let d = &out.report.deltas[0];
    assert_eq!((d.arm_a.as_str(), d.arm_b.as_str()), ("single@60", "r2view@30"));
    assert!(d.band.is_some());
    for run in &out.runs {
        let record = &run.outcome.record;
        assert_eq!(record.iters.len() as u64, run.arm.iterations);
        if run.arm.sampler == SamplerKind::RandomPair {
            let dots: Vec<[f64; 5]> = record.iters.iter().map(|r| r.dots().unwrap()).collect();
            let offline = conflict_rate_from_dots(&dots).unwrap();
            assert_eq!(record.conflict_rate(), Some(offline.conflict_rate));
        } else {
            assert!(record.conflict_rate().is_none());
        }
    }
    let mid: Vec<u64> = out
        .report
        .variance
        .iter()
        .filter(|v| v.stage == "mid")
        .map(|v| v.iter)
        .collect();
    assert_eq!(mid, [10, 10, 10]);
}

#[test]
fn empty_arms_are_rejected() {
    let mut spec = ScenarioSpec::hybrid16();
    spec.arms.clear();
    assert!(matches!(run_scenario(&spec), Err(Error::InvalidArgument(_))));
}

#[test]
fn far_only_training_underfits_near_views() {
    let spec = ScenarioSpec::hybrid16();
    let target = spec.target_scene().unwrap();
    let init = spec.init_scene(&target, 0).unwrap();
    let all = spec.train_cameras().unwrap();
    let partition = split(&all, spec.base.partition).unwrap();
    let far: Vec<_> = all.iter().filter(|c| partition.is_far(c.id)).cloned().collect();
    let test = spec.test_cameras().unwrap();
    let mut cfg = spec.base.clone();
    cfg.iterations = 400;
    cfg.sampler.kind = SamplerKind::Single;
    let out = train(&init, &target, &far, &[], &cfg).unwrap();
    assert!(out.record.evals.is_empty());
    let m = evaluate(&out.scene, &target, &test, Some(&partition), &cfg.loss).unwrap();
    let (near, far) = (m.near.unwrap().psnr, m.far.unwrap().psnr);
    assert!(near < far, "near {near} far {far}");
}

#[test]
fn target_point_has_no_gradient_variance() {
    let spec = ScenarioSpec::hybrid16();
    let target = spec.target_scene().unwrap();
    let cams = spec.train_cameras().unwrap();
    let partition = split(&cams, spec.base.partition).unwrap();
    let (pop, report) = population_report(&target, &target, &cams, &partition, &spec.base.loss).unwrap();
    assert_eq!(report.sigma2_w, 0.0);
    assert_eq!(report.sigma2_b, 0.0);
    assert!(report.ratio_predicted.is_none());
    assert!(matches!(
        check_ratio_identity(&pop, Estimation::Exhaustive, 1e-12),
        Err(Error::UndefinedRatio(_))
    ));
}

#[test]
fn perturbed_point_satisfies_the_identity_on_real_gradients() {
    let spec = ScenarioSpec::hybrid16();
    let target = spec.target_scene().unwrap();
    let init = spec.init_scene(&target, 1).unwrap();
    let cams = spec.train_cameras().unwrap();
    let partition = split(&cams, spec.base.partition).unwrap();
    let (pop, _) = population_report(&init, &target, &cams, &partition, &spec.base.loss).unwrap();
    assert_eq!(pop.near.len(), 8);
    let check = check_ratio_identity(&pop, Estimation::Exhaustive, 1e-12).unwrap();
    assert!(check.pass, "{check:?}");
}
