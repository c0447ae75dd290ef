//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use noisycal::candidates::{
    candidate_accuracy, retrieve, AccuracyMode, Candidate, CandidateKind, CandidateSet, RetrievalConfig,
};
use noisycal::coreg::coregularization_loss;
use noisycal::diffusion::{forward_sample, reinforce_candidate, DiffusionSchedule};
use noisycal::noise::{
    empirical_transition_matrix, inject_asymmetric, inject_instance_dependent, inject_symmetric, noise_ratio,
    NoiseKind, NoiseSpec,
};
use noisycal::pipeline::{run_pipeline, PipelineConfig, PipelineRun, RunOptions};
use noisycal::rng::substream;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(
        elapsed < budget,
        format!(
            "took {:.2}s, budget {:.0}s",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        ),
    )
}

fn schedule_correctness() -> Check {
    let start = Instant::now();
    let s = DiffusionSchedule::new(500, 5.0, 0.008).map_err(|e| e.to_string())?;
    let ab = |t| s.alpha_bar(t).unwrap();
    ensure(ab(0) == 1.0, format!("alpha_bar_0 = {}", ab(0)))?;
    ensure((1..=500).all(|t| ab(t) < ab(t - 1)), "not strictly decreasing")?;
    ensure(
        (ab(250) - 0.4939).abs() <= 1e-3,
        format!("alpha_bar_250 = {:.6}", ab(250)),
    )?;
    ensure(ab(500) < 0.01, format!("alpha_bar_500 = {:.6}", ab(500)))?;
    within_budget(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "alpha_bar_250 = {:.4}, alpha_bar_500 = {:.2e}",
        ab(250),
        ab(500)
    ))
}

/// Timesteps are drawn where `alpha_bar >= 0.8` so the mean is well away from
/// zero and a 1% relative check is meaningful at 10^5 draws.
fn forward_law() -> Check {
    let start = Instant::now();
    let k = 5.0;
    let schedule = DiffusionSchedule::new(500, k, 0.008).map_err(|e| e.to_string())?;
    let usable: Vec<usize> = (1..=500).filter(|&t| schedule.alpha_bar(t).unwrap() >= 0.8).collect();
    let mut pick = common::rng(2024);
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    let mut pairs = Vec::new();
    for case in 0..3u64 {
        let t = usable[pick.random_range(0..usable.len())];
        let classes = pick.random_range(2..6);
        let label = pick.random_range(0..classes);
        let s0: Vec<f64> = (0..classes).map(|i| if i == label { k } else { -k }).collect();
        let ab = schedule.alpha_bar(t).unwrap();
        let mut r = substream(case, &[99]);
        let mut sum = vec![0.0; classes];
        let mut sq = vec![0.0; classes];
        for _ in 0..draws {
            let s = forward_sample(&s0, t, &schedule, &mut r).map_err(|e| e.to_string())?;
            for c in 0..classes {
                sum[c] += s[c];
                sq[c] += s[c] * s[c];
            }
        }
        for c in 0..classes {
            let mean = sum[c] / draws as f64;
            let std = (sq[c] / draws as f64 - mean * mean).sqrt();
            let want_mean = ab.sqrt() * s0[c];
            let want_std = (1.0 - ab).sqrt() * k;
            worst = worst.max(((mean - want_mean) / want_mean).abs());
            worst = worst.max(((std - want_std) / want_std).abs());
        }
        pairs.push(format!("t={t},C={classes}"));
    }
    ensure(worst < 0.01, format!("worst relative deviation {worst:.4}"))?;
    within_budget(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{}; worst relative deviation {worst:.4}", pairs.join(" ")))
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        worst = worst
            .max(common::denoiser_gradient_error(seed))
            .max(common::coregularized_denoiser_gradient_error(seed))
            .max(common::classifier_gradient_error(seed));
    }
    ensure(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    within_budget(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("max relative error {worst:.3e}"))
}

fn retrieval_oracle() -> Check {
    let start = Instant::now();
    let mut r = common::rng(77);
    for case in 0..20 {
        let n = r.random_range(20..=200);
        let classes = r.random_range(2..=6);
        let grid = case % 2 == 1;
        let ds = common::random_dataset(n, classes, 3, r.random_range(1..5), grid, &mut r);
        let sigma = r.random_range(0.0..0.6);
        let config = RetrievalConfig {
            k: r.random_range(1..=10),
            lambda: r.random_range(0.0..=1.0),
            gamma: r.random_range(0.0..=1.0),
            sigma,
            ..RetrievalConfig::default()
        };
        let got = retrieve(&ds, &config).map_err(|e| format!("case {case}: {e}"))?;
        let mask = common::oracle_noisy_mask(&ds, sigma);
        ensure(got.noisy_mask == mask, format!("case {case}: noisy mask differs"))?;
        let want = common::oracle_candidates(&ds, &mask, &config);
        common::same_candidates(&got.sets, &want, 1e-12).map_err(|e| format!("case {case}: {e}"))?;
    }
    within_budget(start.elapsed(), Duration::from_secs(10))?;
    Ok("20 instances identical to the all-pairs oracle".into())
}

fn weight_update(run: &PipelineRun) -> Check {
    let mut set = CandidateSet {
        sample_id: "hand".into(),
        kind: CandidateKind::Uncertain,
        candidates: vec![Candidate { label: 0, weight: 0.6 }, Candidate { label: 1, weight: 0.4 }],
        noisy_label: 0,
    };
    reinforce_candidate(&mut set, 0, 4);
    let (a, b) = (set.candidates[0].weight, set.candidates[1].weight);
    ensure(
        (a - 7.0 / 11.0).abs() < 1e-12 && (b - 4.0 / 11.0).abs() < 1e-12,
        format!("hand example gave ({a}, {b})"),
    )?;
    let mut rounds = 0;
    let mut worst: f64 = 0.0;
    for seed in &run.seeds {
        for r in &seed.diffusion.rounds {
            worst = worst.max(r.max_mass_error);
            rounds += 1;
        }
        for s in &seed.diffusion.refined_candidates {
            worst = worst.max((s.candidates.iter().map(|c| c.weight).sum::<f64>() - 1.0).abs());
        }
    }
    ensure(rounds > 0, "no refinement rounds ran")?;
    ensure(worst <= 1e-9, format!("mass error {worst:.2e}"))?;
    Ok(format!(
        "(0.6, 0.4) -> ({a:.6}, {b:.6}); {rounds} rounds, max mass error {worst:.1e}"
    ))
}

fn coregularization() -> Check {
    let mut r = common::rng(5);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| common::random_simplex(5, &mut r)).collect();
    let same = coregularization_loss(&vec![rows; 3], 1e-8).map_err(|e| e.to_string())?;
    ensure(same.abs() <= 1e-12, format!("identical branches gave {same:e}"))?;
    let two = coregularization_loss(&[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]], 1e-8).map_err(|e| e.to_string())?;
    ensure((two - 8.516).abs() <= 0.01, format!("two-branch example gave {two}"))?;
    let branches: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| (0..6).map(|_| common::random_simplex(3, &mut r)).collect())
        .collect();
    let base = coregularization_loss(&branches, 1e-8).map_err(|e| e.to_string())?;
    for shift in 1..4 {
        let mut p = branches.clone();
        p.rotate_left(shift);
        let v = coregularization_loss(&p, 1e-8).map_err(|e| e.to_string())?;
        ensure(
            (v - base).abs() < 1e-12,
            format!("rotation {shift} changed the loss by {:e}", v - base),
        )?;
    }
    let mut p = branches.clone();
    p.reverse();
    let v = coregularization_loss(&p, 1e-8).map_err(|e| e.to_string())?;
    ensure((v - base).abs() < 1e-12, "reversal changed the loss")?;
    Ok(format!("identical {same:.1e}, two-branch {two:.4}, order invariant"))
}

/// Three classes and r = 0.2 keep every per-entry standard error near 0.007,
/// so the 0.02 tolerance sits around three standard errors.
fn noise_injectors() -> Check {
    let n = 10_000;
    let spec = |kind, ratio, seed| NoiseSpec { kind, ratio, seed };
    let truth: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let sn = inject_symmetric(&truth, 3, &spec(NoiseKind::Symmetric, 0.2, 0)).map_err(|e| e.to_string())?;
    let asn = inject_asymmetric(&truth, 3, &spec(NoiseKind::Asymmetric, 0.2, 0)).map_err(|e| e.to_string())?;
    let sn = empirical_transition_matrix(&truth, &sn, 3).map_err(|e| e.to_string())?;
    let asn = empirical_transition_matrix(&truth, &asn, 3).map_err(|e| e.to_string())?;
    let sn_err = common::worst_entry(&sn.normalized, &common::symmetric_target(3, 0.2));
    let asn_err = common::worst_entry(&asn.normalized, &common::asymmetric_target(3, 0.2));
    ensure(sn_err < 0.02, format!("symmetric entry off by {sn_err:.4}"))?;
    ensure(asn_err < 0.02, format!("asymmetric entry off by {asn_err:.4}"))?;

    let truth4: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let mut r = common::rng(3);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..8).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    let idn = |seed| inject_instance_dependent(&x, &truth4, 4, &spec(NoiseKind::InstanceDependent, 0.4, seed));
    let a = idn(1).map_err(|e| e.to_string())?;
    let b = idn(2).map_err(|e| e.to_string())?;
    let ratio = noise_ratio(&truth4, &a).map_err(|e| e.to_string())?;
    ensure(
        (ratio - 0.4).abs() <= 0.03,
        format!("instance-dependent ratio {ratio:.4} for r = 0.4"),
    )?;
    let ma = empirical_transition_matrix(&truth4, &a, 4).map_err(|e| e.to_string())?;
    let mb = empirical_transition_matrix(&truth4, &b, 4).map_err(|e| e.to_string())?;
    let gap = ma.frobenius_distance(&mb);
    ensure(gap > 0.0, "two seeds gave identical matrices")?;
    Ok(format!(
        "symmetric worst {sn_err:.4}, asymmetric worst {asn_err:.4}, instance ratio {ratio:.4}, seed gap {gap:.4}"
    ))
}

fn end_to_end(run: &PipelineRun, elapsed: Duration) -> Check {
    let r = &run.report;
    let gain = 100.0 * (r.accuracy_mean - r.classifier_accuracy_mean);
    let detail = format!(
        "calibrated {:.2} +- {:.2} vs classifier {:.2} +- {:.2} ({gain:+.2} points) in {:.1}s",
        100.0 * r.accuracy_mean,
        100.0 * r.accuracy_std,
        100.0 * r.classifier_accuracy_mean,
        100.0 * r.classifier_accuracy_std,
        elapsed.as_secs_f64()
    );
    ensure(gain >= 2.0, detail.clone())?;
    within_budget(elapsed, Duration::from_secs(300))?;
    Ok(detail)
}

fn dynamic_vs_fixed(run: &PipelineRun) -> Check {
    let config = PipelineConfig::synthetic_benchmark();
    let mut lines = Vec::new();
    let mut ratios = Vec::new();
    for seed in &run.seeds {
        let truth: Vec<usize> = seed
            .retrieval
            .indices
            .iter()
            .map(|&i| seed.dataset.records[i].true_label.expect("synthetic labels are clean"))
            .collect();
        let dynamic = RetrievalConfig {
            lambda: 0.9,
            gamma: 0.8,
            ..config.retrieval.clone()
        };
        let fixed = RetrievalConfig {
            lambda: 0.0,
            gamma: 0.0,
            ..config.retrieval.clone()
        };
        let dynamic = retrieve(&seed.dataset, &dynamic).map_err(|e| e.to_string())?;
        let fixed = retrieve(&seed.dataset, &fixed).map_err(|e| e.to_string())?;
        let contains = candidate_accuracy(&dynamic.sets, &truth, AccuracyMode::Contains).map_err(|e| e.to_string())?;
        let argmax = candidate_accuracy(&fixed.sets, &truth, AccuracyMode::Argmax).map_err(|e| e.to_string())?;
        ensure(
            contains >= argmax,
            format!("seed {}: contains {contains:.4} < fixed argmax {argmax:.4}", seed.seed),
        )?;
        lines.push(format!("{:.3}/{:.3}", contains, argmax));
        ratios.push(seed.corrected_uncertain_ratio.unwrap_or(0.0));
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ensure(mean_ratio > 0.0, "no uncertain sample was corrected")?;
    Ok(format!(
        "contains/fixed per seed {}; corrected uncertain ratio {:.1}%",
        lines.join(" "),
        100.0 * mean_ratio
    ))
}

fn report(id: usize, name: &str, check: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    match outcome {
        Ok(detail) => {
            println!("criterion {id} PASS {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {id} FAIL {name}: {detail}");
            false
        }
    }
}

fn main() {
    let start = Instant::now();
    let run = run_pipeline(&PipelineConfig::synthetic_benchmark(), &RunOptions::default());
    let pipeline_time = start.elapsed();
    let run = run.map_err(|e| e.to_string());
    let with_run = |f: &dyn Fn(&PipelineRun) -> Check| -> Check { run.as_ref().map_err(Clone::clone).and_then(f) };

    let results = [
        report(1, "schedule", schedule_correctness),
        report(2, "forward process", forward_law),
        report(3, "gradients", gradient_fidelity),
        report(4, "candidate retrieval", retrieval_oracle),
        report(5, "candidate weights", || with_run(&weight_update)),
        report(6, "co-regularization", coregularization),
        report(7, "noise injectors", noise_injectors),
        report(8, "end-to-end gain", || with_run(&|r| end_to_end(r, pipeline_time))),
        report(9, "dynamic prior", || with_run(&dynamic_vs_fixed)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
