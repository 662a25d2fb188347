//! End-to-end acceptance checks, one test per criterion.
//!
//! Each test writes a single `PASS`/`FAIL criterion N` line directly to the
//! process stdout (bypassing libtest capture) and then asserts the same
//! condition.

use std::fs;
use std::io::Write;
use std::time::{Duration, Instant};

use collapse_lab::diagnostics::{
    dff_lower_bound, gate_position_sensitivity, head_subspace_dim, per_token_ambiguity_dim,
    pgop_param_overhead, recovery_ambiguity_dim,
};
use collapse_lab::harness::{
    self, exp2_residual_ablation, exp3_gauge_sweep, exp4_alpha_vs_rank,
    generic_rank_increase_check, ln_rank_trials, local_linearity_check, parametric_sim,
    Exp2Config, Exp3Config, Exp4Config, GenericRankConfig, LinearityConfig, LnTrialsConfig,
    SimConfig,
};
use collapse_lab::io::{write_report, Experiment, RunConfig};
use collapse_lab::linalg::random::{gaussian, planted_rank, rng_stream, stream_id};
use collapse_lab::linalg::{mean, DEFAULT_REL_TOL};
use collapse_lab::model::{
    attention_head, forward, mha, mha_pgop, scores_with_asymmetry, sinusoidal_encodings,
    AttentionMode, HeadWeights, LayerWeights, ModelConfig, ModelWeights, OutputProjection,
};
use collapse_lab::symmetry::{apply_head_permutation, non_identifiability_witness};
use rand::seq::SliceRandom;

fn report(criterion: u32, ok: bool, detail: &str) {
    let line = format!("{} criterion {criterion}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {criterion}: {detail}");
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn failed_checks(r: &harness::ExperimentReport) -> Vec<&str> {
    r.checks().into_iter().filter(|(_, ok)| !ok).map(|(k, _)| k).collect()
}

#[test]
fn criterion_01_layernorm_rank_neutrality() {
    let (r, t) = timed(|| ln_rank_trials(&LnTrialsConfig::default()).unwrap());
    let preserved = r.summary["preserved"].as_u64().unwrap();
    let ok = preserved == 100 && r.all_passed() && t < Duration::from_secs(5);
    report(1, ok, &format!("rank and affine rank preserved {preserved}/100 in {t:.2?} (limit 5s)"));
}

#[test]
fn criterion_02_residual_obstruction() {
    let cfg = Exp2Config::default();
    assert_eq!(cfg.attention_mode, AttentionMode::Uniform);
    let (r, t) = timed(|| exp2_residual_ablation(&cfg).unwrap());
    let collapsed = r.summary["plain_collapsed_seeds"].as_u64().unwrap();
    let min_rank = r.summary["residual_min_rank"].as_u64().unwrap();
    let ok = collapsed == 20 && min_rank >= 31 && r.all_passed() && t < Duration::from_secs(30);
    report(
        2,
        ok,
        &format!("plain arm collapsed by layer 6 in {collapsed}/20 seeds, residual min rank {min_rank}, {t:.2?} (limit 30s)"),
    );
}

#[test]
fn criterion_03_gauge_symmetry() {
    let (r, t) = timed(|| exp3_gauge_sweep(&Exp3Config::default()).unwrap());
    let within = r.column("within").unwrap();
    let n_ok = within.iter().filter(|w| **w == 1.0).count();
    let ratio = r.number("max_error_over_tolerance").unwrap();
    let ok = n_ok == 7 * 3 * 50 && r.all_passed() && t < Duration::from_secs(180);
    report(
        3,
        ok,
        &format!("{n_ok}/{} gauged outputs within tolerance, worst error/tolerance {ratio:.3e}, {t:.2?} (limit 180s)", within.len()),
    );
}

#[test]
fn criterion_04_permutation_invariance() {
    let cfg = ModelConfig::default();
    let x = gaussian(&mut rng_stream(4, 0), cfg.n, cfg.d_model, 1.0);
    let mut worst: f64 = 0.0;
    let mut passed = 0;
    for trial in 0..20u64 {
        let mut rng = rng_stream(4, stream_id(1, trial));
        let w = LayerWeights::random(&cfg, &mut rng);
        let mut pi: Vec<usize> = (0..cfg.heads).collect();
        pi.shuffle(&mut rng);
        let permuted = apply_head_permutation(&w, &pi).unwrap();
        let base = mha(&x, &w, &cfg).unwrap().output;
        let err = mha(&x, &permuted, &cfg).unwrap().output.rel_error(&base);
        worst = worst.max(err);
        passed += usize::from(err <= 1e-13);
    }
    report(4, passed == 20, &format!("{passed}/20 permutations within 1e-13, worst {worst:.2e}"));
}

#[test]
fn criterion_05_non_identifiability_witness() {
    let cfg = ModelConfig::default();
    let mut passed = 0;
    let (mut min_change, mut max_sum) = (f64::INFINITY, 0.0f64);
    for trial in 0..50u64 {
        let mut rng = rng_stream(5, stream_id(1, trial));
        let w = LayerWeights::random(&cfg, &mut rng);
        let x = gaussian(&mut rng, cfg.n, cfg.d_model, 1.0);
        let a = (trial as usize) % cfg.heads;
        let b = (a + 1) % cfg.heads;
        let wit = non_identifiability_witness(&x, &w, &cfg, (a, b), 1.0, &mut rng).unwrap();
        min_change = min_change.min(wit.head_change);
        max_sum = max_sum.max(wit.sum_change);
        passed += usize::from(wit.head_change >= 0.1 && wit.sum_change <= 1e-12);
    }
    report(
        5,
        passed == 50,
        &format!("{passed}/50 witnesses, min head change {min_change:.3}, max sum change {max_sum:.2e}"),
    );
}

/// Planted ranks are exact, so the bound is checked at a threshold between
/// round-off and the conditioning of `A X W_V` at `rank(X) = d_k`, where the
/// default 1e-3 cut misclassifies a few percent of instances.
const EXACT_RANK_TOL: f64 = 1e-8;

#[test]
fn criterion_06_head_subspace_bound() {
    let (n, d, d_k) = (32, 64, 8);
    let cfg = ModelConfig {
        n,
        d_model: d,
        heads: 1,
        d_k,
        layers: 1,
        ..ModelConfig::default()
    };
    let mut all_ok = true;
    let mut lines = Vec::new();
    let mut default_tol_hits = 0;
    for (ri, &rank) in [2usize, 4, 8, 16].iter().enumerate() {
        let mut means = Vec::new();
        for (ai, &alpha) in [0.0, 0.5, 1.0].iter().enumerate() {
            let mut hits = 0;
            let mut dims = Vec::new();
            for inst in 0..50u64 {
                let mut rng = rng_stream(6, stream_id((ri * 3 + ai) as u64, inst));
                let x = planted_rank(&mut rng, n, d, rank);
                let s = scores_with_asymmetry(d, d_k, alpha, (d_k as f64).sqrt(), &mut rng).unwrap();
                let mut head = HeadWeights::random(&cfg, &mut rng);
                head.w_q = s.w_q;
                head.w_k = s.w_k;
                let out = attention_head(&x, &head.w_q, &head.w_k, &head.w_v, AttentionMode::Softmax).unwrap();
                let contribution = out.values.matmul(&head.w_o).unwrap();
                let dim = head_subspace_dim(&contribution, EXACT_RANK_TOL).unwrap();
                hits += usize::from(dim == rank.min(d_k));
                default_tol_hits += usize::from(head_subspace_dim(&contribution, DEFAULT_REL_TOL).unwrap() == rank.min(d_k));
                dims.push(dim as f64);
            }
            all_ok &= hits >= 49;
            means.push(mean(&dims));
            lines.push(format!("r={rank} a={alpha}: {hits}/50"));
        }
        all_ok &= means.iter().all(|m| *m == means[0]);
    }
    report(
        6,
        all_ok,
        &format!(
            "dim = min(rank, d_k) at rel_tol {EXACT_RANK_TOL:e}, means equal across alpha [{}]; {default_tol_hits}/600 at rel_tol 1e-3",
            lines.join(", ")
        ),
    );
}

#[test]
fn criterion_07_parametric_sim() {
    let (r, t) = timed(|| parametric_sim(&SimConfig::default()).unwrap());
    let ok = r.all_passed() && t < Duration::from_secs(60);
    report(
        7,
        ok,
        &format!("residual full rank, plain rank one, dim R_h = d_k per alpha; failed {:?}; {t:.2?} (limit 60s)", failed_checks(&r)),
    );
}

#[test]
fn criterion_08_alpha_rank_null_result() {
    let r = exp4_alpha_vs_rank(&Exp4Config::default()).unwrap();
    let pearson = r.number("pearson_r");
    let ok = pearson.is_some_and(|p| p.abs() < 0.3) && r.all_passed();
    report(8, ok, &format!("pearson r = {pearson:?}, need |r| < 0.3"));
}

#[test]
fn criterion_09_formula_oracle() {
    let got = [
        recovery_ambiguity_dim(512, 12, 64),
        per_token_ambiguity_dim(12, 64),
        dff_lower_bound(768, 768).unwrap(),
        dff_lower_bound(768, 24).unwrap(),
        pgop_param_overhead(12, 768, 768),
    ];
    // 12 heads × (768 content + 768 positional + 1 bias) gate parameters.
    let expected = [360448, 704, 768, 1512, 12 * (768 + 768 + 1)];
    report(9, got == expected, &format!("got {got:?}, expected {expected:?}"));
}

#[test]
fn criterion_10_generic_rank_increase() {
    let r = generic_rank_increase_check(&GenericRankConfig::default()).unwrap();
    let sum = r.summary["sum_increased"].as_u64().unwrap();
    let res = r.summary["residual_increased"].as_u64().unwrap();
    let control = r.summary["control_negated_sum_rank"].as_u64().unwrap();
    let ok = sum == 100 && res >= 99 && control == 0 && r.all_passed();
    report(10, ok, &format!("sum {sum}/100, residual {res}/100, negated control rank {control}"));
}

#[test]
fn criterion_11_local_linearity() {
    let r = local_linearity_check(&LinearityConfig::default()).unwrap();
    let order = r.number("order_attention");
    let ok = order.is_some_and(|o| (o - 2.0).abs() <= 0.3);
    report(11, ok, &format!("remainder order {order:?}, need 2.0 +/- 0.3"));
}

#[test]
fn criterion_12_position_gate_containment() {
    let mut worst: f64 = 0.0;
    let mut passed = 0;
    for trial in 0..20u64 {
        let mut rng = rng_stream(12, stream_id(1, trial));
        let heads = 1 + (trial as usize % 4);
        let d_k = 2 + (trial as usize % 3) * 2;
        let cfg = ModelConfig {
            n: 4 + trial as usize % 7,
            d_model: heads * d_k + (trial as usize % 5),
            heads,
            d_k,
            layers: 1,
            attention_mode: if trial % 2 == 0 { AttentionMode::Softmax } else { AttentionMode::Uniform },
            output_projection: OutputProjection::Pgop,
            ..ModelConfig::default()
        }
        .resolved();
        let mut w = LayerWeights::random(&cfg, &mut rng);
        for h in &mut w.heads {
            h.gate.w_g.iter_mut().for_each(|v| *v = 0.0);
            h.gate.w_p.iter_mut().for_each(|v| *v = 0.0);
            h.gate.b_g = 1e3;
        }
        let x = gaussian(&mut rng, cfg.n, cfg.d_model, 1.0);
        let pe = sinusoidal_encodings(cfg.n, cfg.pe_dim());
        let gated = mha_pgop(&x, &w, &cfg, &pe).unwrap().output;
        let plain = mha(&x, &w, &cfg).unwrap().output;
        let err = gated.rel_error(&plain);
        worst = worst.max(err);
        passed += usize::from(err <= 1e-12);
    }

    let cfg = ModelConfig {
        n: 16,
        d_model: 32,
        heads: 4,
        d_k: 8,
        layers: 2,
        output_projection: OutputProjection::Pgop,
        ..ModelConfig::default()
    }
    .resolved();
    let mut weights = ModelWeights::random(&cfg, 12);
    for layer in &mut weights.layers {
        for h in &mut layer.heads {
            h.gate.w_p.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let x = gaussian(&mut rng_stream(12, 0), cfg.n, cfg.d_model, 1.0);
    let trace = forward(&x, &weights, &cfg).unwrap();
    let mut sens = Vec::new();
    for l in 0..cfg.layers {
        for h in 0..cfg.heads {
            sens.push(gate_position_sensitivity(&trace, &weights, &cfg, l, h).unwrap());
        }
    }
    let zero = sens.iter().all(|s| *s == 0.0);
    report(
        12,
        passed == 20 && zero,
        &format!("unit gates {passed}/20 within 1e-12 (worst {worst:.2e}); sensitivity with w_p = 0 exactly zero: {zero}"),
    );
}

fn all_experiments() -> Vec<RunConfig> {
    [
        Experiment::Exp1,
        Experiment::Exp2,
        Experiment::Exp3,
        Experiment::Exp4,
        Experiment::Sim,
        Experiment::Angles,
        Experiment::Linearity,
        Experiment::GenericRank,
    ]
    .into_iter()
    .map(RunConfig::new)
    .collect()
}

fn written_bytes(cfg: &RunConfig, dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for r in collapse_lab::cli::run_experiment(cfg).unwrap() {
        for p in write_report(&r, dir).unwrap() {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn criterion_13_determinism() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let mut files = 0;
    let mut mismatched = Vec::new();
    for cfg in all_experiments() {
        let a = written_bytes(&cfg, first.path());
        let b = written_bytes(&cfg, second.path());
        assert_eq!(a.len(), b.len());
        for ((name, x), (_, y)) in a.iter().zip(&b) {
            files += 1;
            if x != y {
                mismatched.push(name.clone());
            }
        }
    }
    report(
        13,
        mismatched.is_empty() && files == 18,
        &format!("{files} report files rewritten byte-identically, mismatches {mismatched:?}"),
    );
}
