mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use qla_core::asymptotics::{Block, InvariantMeasure, information_matrices};
use qla_core::estimate::{adaptive_ml, EstimatorKind};
use qla_core::harness::{emit_report, run_monte_carlo, ExperimentConfig, Field, McReport};
use qla_core::model::{builtin_ou_model, NoiseFamily, NoiseSpec, SamplingScheme};
use qla_core::optimize::OptimizerConfig;
use qla_core::quasilik::{self, Contrast, QuasiLikContext};
use qla_core::simulate::{contaminate, LatentPath};
use qla_core::stats::{ks_critical_1pct, ks_statistic_normal, mean, median, sample_variance};
use qla_core::{noise_variance_estimate, zeta_moment_constants, SimSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn reference_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ou_reference.toml");
    ExperimentConfig::load(&path).expect("reference configuration")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let model = builtin_ou_model();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let case = random_ou_case(&mut rng, (50, 1000), 0.01);
        let sc = *case.series.scheme();
        assert!(sc.k <= 100);
        let ctx = QuasiLikContext::from_series(&case.series, &model).unwrap();
        let y = case.series.values();
        for _ in 0..5 {
            let a = rng.random_range(0.1..2.0);
            let b = [rng.random_range(0.1..3.0), rng.random_range(-2.0..2.0)];
            worst = worst.max(rel_err(ctx.h1(&[a]).unwrap(), naive_h1(y, sc.p, sc.k, sc.delta, a)));
            worst = worst.max(rel_err(ctx.h2(&b, &[a]).unwrap(), naive_h2(y, sc.p, sc.k, sc.delta, a, &b)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 5.0,
        format!("max relative error {worst:.2e} over 50 datasets x 5 points, {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let model = builtin_ou_model();
    let (ab, bb) = (model.alpha_box().clone(), model.beta_box().clone());
    let spacing = |lo: f64, hi: f64| (hi - lo) / 2000.0;
    let grid = |lo: f64, hi: f64| (0..2001).map(move |i| lo + (hi - lo) * i as f64 / 2000.0);
    let (sa, sb1, sb2) = (
        spacing(ab.lower()[0], ab.upper()[0]),
        spacing(bb.lower()[0], bb.upper()[0]),
        spacing(bb.lower()[1], bb.upper()[1]),
    );
    let mut worst = [0.0f64; 3];
    for _ in 0..20 {
        let case = random_ou_case(&mut rng, (10_000, 40_000), 0.005);
        let rep = adaptive_ml(&case.series, &model, case.series.scheme(), &OptimizerConfig::default()).unwrap();
        let st = OuStats::new(&case.series);
        let a_grid = grid(ab.lower()[0], ab.upper()[0])
            .map(|a| (a, st.h1(a)))
            .fold((f64::NAN, f64::NEG_INFINITY), |m, v| if v.1 > m.1 { v } else { m })
            .0;
        let mut best = ([f64::NAN; 2], f64::NEG_INFINITY);
        for b1 in grid(bb.lower()[0], bb.upper()[0]) {
            for b2 in grid(bb.lower()[1], bb.upper()[1]) {
                let v = st.h2(rep.alpha[0], &[b1, b2]);
                if v > best.1 {
                    best = ([b1, b2], v);
                }
            }
        }
        worst[0] = worst[0].max((rep.alpha[0] - a_grid).abs() / sa);
        worst[1] = worst[1].max((rep.beta[0] - best.0[0]).abs() / sb1);
        worst[2] = worst[2].max((rep.beta[1] - best.0[1]).abs() / sb2);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.iter().all(|w| *w <= 1.0) && secs < 60.0,
        format!(
            "largest distance to grid argmax in grid spacings: alpha {:.3}, beta_1 {:.3}, beta_2 {:.3}; {secs:.1} s",
            worst[0], worst[1], worst[2]
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let (m, n, lam) = (1000, 10_000, 0.25);
    let noise = NoiseSpec::scalar(lam, NoiseFamily::Gaussian).unwrap();
    let scheme = SamplingScheme::build(n, 1e-4, 2.0).unwrap();
    let path = LatentPath::from_states(scheme, 1, vec![0.0; n + 1]).unwrap();
    let est: Vec<f64> = (0..m)
        .map(|r| noise_variance_estimate(&contaminate(&path, &noise, SimSeed::new(303, r)).unwrap()).unwrap()[0])
        .collect();
    let avg = mean(&est);
    let se = (sample_variance(&est) / m as f64).sqrt();
    let scaled: Vec<f64> = est.iter().map(|v| (n as f64).sqrt() * (v - lam)).collect();
    let var = sample_variance(&scaled);
    let w1 = 3.0 * lam * lam;
    let secs = start.elapsed().as_secs_f64();
    let mean_ok = (avg - lam).abs() <= 3.0 * se;
    let var_ok = (var - w1).abs() <= 0.15 * w1;
    outcome(
        mean_ok && var_ok && secs < 30.0,
        format!(
            "mean {avg:.6} (|bias|/SE = {:.2}), variance {var:.5} vs W1 {w1:.5} ({:+.1}%), {secs:.1} s",
            (avg - lam).abs() / se,
            100.0 * (var - w1) / w1
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let blocks = 100_000;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for p in [2usize, 10, 50] {
        let h = 1.0 / (p * p) as f64;
        let delta = p as f64 * h;
        let mut rng = ChaCha8Rng::seed_from_u64(400 + p as u64);
        let (mut szz, mut spp, mut szp) = (0.0, 0.0, 0.0);
        let mut w = vec![0.0; p + 1];
        for _ in 0..blocks {
            // Brownian path on the block grid jΔ + ih, i = 0..=p, started at 0.
            for i in 1..=p {
                let z: f64 = rng.sample(StandardNormal);
                w[i] = w[i - 1] + h.sqrt() * z;
            }
            let zeta = (0..p).map(|i| w[p] - w[i]).sum::<f64>() / p as f64;
            let zeta_prime = (0..p).map(|i| w[i] - w[0]).sum::<f64>() / p as f64;
            szz += zeta * zeta;
            spp += zeta_prime * zeta_prime;
            szp += zeta * zeta_prime;
        }
        let b = blocks as f64;
        let c = zeta_moment_constants(p);
        let errs = [
            rel_err(szz / b, c.m * delta),
            rel_err(spp / b, c.m_prime * delta),
            rel_err(szp / b, c.chi * delta),
        ];
        worst = errs.iter().fold(worst, |m, e| m.max(*e));
        parts.push(format!("p={p}: {:.2}%/{:.2}%/{:.2}%", 100.0 * errs[0], 100.0 * errs[1], 100.0 * errs[2]));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 0.05 && secs < 30.0,
        format!("relative errors (m, m', chi) {}; {secs:.1} s", parts.join(", ")),
    )
}

fn column(report: &McReport, scheme: usize, method: EstimatorKind, coord: usize) -> Vec<f64> {
    report.errors_for(scheme, method).map(|e| e.coordinates()[coord]).collect()
}

fn criterion_5(report: &McReport, secs: f64) -> Outcome {
    let g = report.group(0, EstimatorKind::Ml).expect("ML group");
    let ac = &report.asymptotics[0];
    let [_, oa, _] = ac.block_offsets();
    let crit = ks_critical_1pct(g.count);
    let mut pass = report.failure_rate < 0.01;
    let mut parts = Vec::new();
    for c in oa..ac.size() {
        let xs = column(report, 0, EstimatorKind::Ml, c);
        let sd_theory = g.sandwich_diagonal[c].sqrt();
        let var = sample_variance(&xs);
        let se = (var / xs.len() as f64).sqrt();
        let m = mean(&xs);
        let standardized: Vec<f64> = xs.iter().map(|x| x / sd_theory).collect();
        let ks = ks_statistic_normal(&standardized);
        let var_ok = (var - g.sandwich_diagonal[c]).abs() <= 0.2 * g.sandwich_diagonal[c];
        let mean_ok = m.abs() <= 3.0 * se;
        let ks_ok = ks < crit;
        pass &= var_ok && mean_ok && ks_ok;
        parts.push(format!(
            "{}: var {:.3} vs {:.3} [{}], mean {:+.3} = {:+.1} SE [{}], KS {:.3} vs {:.3} [{}]",
            g.labels[c],
            var,
            g.sandwich_diagonal[c],
            ok(var_ok),
            m,
            m / se,
            ok(mean_ok),
            ks,
            crit,
            ok(ks_ok)
        ));
    }
    parts.push(format!(
        "failure rate {:.2}% [{}]; {} replications, {secs:.0} s",
        100.0 * report.failure_rate,
        ok(report.failure_rate < 0.01),
        g.count
    ));
    outcome(pass, parts.join("; "))
}

fn criterion_6(report: &McReport) -> Outcome {
    let (g0, g1) = (
        report.group(0, EstimatorKind::Ml).expect("scheme 0"),
        report.group(1, EstimatorKind::Ml).expect("scheme 1"),
    );
    let finite = report
        .errors
        .iter()
        .all(|e| e.coordinates().iter().all(|v| v.powi(4).is_finite()));
    let mut pass = finite;
    let mut parts = Vec::new();
    for c in 0..g0.labels.len() {
        let r2 = g0.moment2[c] / g1.moment2[c];
        let r4 = g0.moment4[c] / g1.moment4[c];
        let good = (0.5..=2.0).contains(&r2) && (0.5..=2.0).contains(&r4);
        pass &= good;
        parts.push(format!("{}: m2 ratio {:.3}, m4 ratio {:.3} [{}]", g0.labels[c], r2, r4, ok(good)));
    }
    parts.push(format!("fourth powers finite [{}]", ok(finite)));
    outcome(pass, parts.join("; "))
}

fn criterion_7(report: &McReport) -> Outcome {
    let g = report.group(0, EstimatorKind::Ml).expect("ML group");
    let [_, oa, ob] = report.asymptotics[0].block_offsets();
    let size = report.asymptotics[0].size();
    let mut da = Vec::new();
    let mut db = Vec::new();
    for ml in report.errors_for(0, EstimatorKind::Ml) {
        if let Some(b) = report.errors_for(0, EstimatorKind::Bayes).find(|b| b.rep_index == ml.rep_index) {
            let (x, y) = (ml.coordinates(), b.coordinates());
            let norm = |r: std::ops::Range<usize>| r.map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
            da.push(norm(oa..ob));
            db.push(norm(ob..size));
        }
    }
    let (ma, mb) = (median(&da), median(&db));
    outcome(
        ma <= 0.5 && mb <= 0.5,
        format!(
            "median sqrt(k)|alpha_bayes - alpha_ml| = {ma:.4}, median sqrt(T)|beta_bayes - beta_ml| = {mb:.4} over {} paired replications (of {})",
            da.len(),
            g.count
        ),
    )
}

fn criterion_8(report: &McReport) -> Outcome {
    let tail = report.tail.as_ref().expect("tail table enabled in the reference configuration");
    let mut pass = true;
    let mut parts = Vec::new();
    for field in [Field::Z1, Field::Z2] {
        let f = tail.frequencies(0, field);
        let monotone = f.windows(2).all(|w| w[1].1 <= w[0].1);
        let at = |r: f64| f.iter().find(|(x, _)| *x == r).map(|(_, v)| *v).expect("r in grid");
        let (f2, f4) = (at(2.0), at(4.0));
        let decay = f2 < 0.05 || f4 <= 0.5 * f2;
        pass &= monotone && decay;
        let freqs: Vec<String> = f.iter().map(|(r, v)| format!("{r}:{v:.3}")).collect();
        parts.push(format!(
            "{} frequencies [{}] monotone [{}] f(4) <= f(2)/2 [{}]",
            field.as_str(),
            freqs.join(" "),
            ok(monotone),
            ok(decay)
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let cfg = reference_config();
    let exp = cfg.resolve().unwrap();
    let model = exp.model.clone();
    let scheme = exp.schemes[0];
    let series = ou_series(1.0, [1.0, 0.0], 0.1, &scheme, SimSeed::new(909, 0));
    let ctx = QuasiLikContext::from_series(&series, &model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let inner = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
        let pad = 0.05 * (hi - lo);
        rng.random_range(lo + pad..hi - pad)
    };
    let (ab, bb) = (model.alpha_box().clone(), model.beta_box().clone());
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = vec![inner(ab.lower()[0], ab.upper()[0], &mut rng)];
        let b = vec![inner(bb.lower()[0], bb.upper()[0], &mut rng), inner(bb.lower()[1], bb.upper()[1], &mut rng)];
        let drift = Contrast::Drift { alpha: a.clone() };
        for (contrast, point) in [(Contrast::Diffusion, &a), (drift, &b)] {
            let fd = quasilik::gradient(&ctx, &contrast, point).unwrap();
            let mut f = |p: &[f64]| ctx.evaluate(&contrast, p).unwrap();
            let oracle: Vec<f64> = (0..point.len()).map(|i| richardson_partial(&mut f, point, i, 1e-2)).collect();
            let diff = fd.iter().zip(&oracle).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm = oracle.iter().map(|y| y * y).sum::<f64>().sqrt();
            worst = worst.max(diff / norm);
        }
    }
    let truth = exp.truth.clone();
    let nu = InvariantMeasure::closed_form(&model, &truth).unwrap();
    let ac = information_matrices(&model, &truth, &truth.noise, scheme.tau, &nu).unwrap();
    let frob = |a: &[f64], b: &[f64]| {
        let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
    };
    let c1 = quasilik::curvature(&ctx, &Contrast::Diffusion, &truth.alpha).unwrap();
    let c2 = quasilik::curvature(&ctx, &Contrast::Drift { alpha: truth.alpha.clone() }, &truth.beta).unwrap();
    let symmetric = c2[1] == c2[2];
    let (e1, e2) = (frob(&c1, &ac.j_block(Block::Alpha)), frob(&c2, &ac.j_block(Block::Beta)));
    outcome(
        worst <= 1e-5 && symmetric && e1 <= 0.15 && e2 <= 0.15,
        format!(
            "worst FD/Richardson relative error {worst:.2e}; curvature symmetric [{}]; alpha curvature {:.4} vs J {:.4} ({:.1}%); beta curvature vs Gamma_2 relative Frobenius error {:.1}%",
            ok(symmetric),
            c1[0],
            ac.j_block(Block::Alpha)[0],
            100.0 * e1,
            100.0 * e2
        ),
    )
}

fn criterion_10(dir: &Path) -> Outcome {
    let mut cfg = reference_config();
    cfg.replications = 8;
    let mut bytes = Vec::new();
    for threads in [1usize, 8] {
        for run in 0..2 {
            cfg.threads = Some(threads);
            let out = dir.join(format!("determinism_t{threads}_r{run}"));
            let report = run_monte_carlo(&cfg).unwrap();
            emit_report(&report, &out).unwrap();
            bytes.push((threads, std::fs::read(out.join("report.json")).unwrap()));
        }
    }
    let same_within = |t: usize| {
        let v: Vec<&Vec<u8>> = bytes.iter().filter(|(x, _)| *x == t).map(|(_, b)| b).collect();
        v[0] == v[1]
    };
    let (one, eight) = (same_within(1), same_within(8));
    let without_threads = |b: &[u8]| {
        let mut v: serde_json::Value = serde_json::from_slice(b).unwrap();
        v["config"].as_object_mut().unwrap().remove("threads");
        v
    };
    let across = without_threads(&bytes[0].1) == without_threads(&bytes[2].1);
    outcome(
        one && eight,
        format!(
            "identical report.json at 1 thread [{}], at 8 threads [{}]; 1 vs 8 threads identical apart from the thread setting [{}] ({} bytes)",
            ok(one),
            ok(eight),
            ok(across),
            bytes[0].1.len()
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

fn selected() -> Vec<usize> {
    match std::env::var("QLA_ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=10).collect(),
    }
}

fn main() -> ExitCode {
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let wanted = selected();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if wanted.contains(&id) {
            let o = f();
            println!("[{}] {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((id, name, o));
        }
    };
    run(1, "contrast oracle equivalence", &mut criterion_1);
    run(2, "optimizer vs grid search", &mut criterion_2);
    run(3, "noise estimator statistics", &mut criterion_3);
    run(4, "block Brownian moment constants", &mut criterion_4);

    if wanted.iter().any(|i| (5..=8).contains(i)) {
        let mut cfg = reference_config();
        if let Some(m) = std::env::var("QLA_ACCEPTANCE_REPS").ok().and_then(|s| s.parse().ok()) {
            println!("note: replications overridden to {m}");
            cfg.replications = m;
        }
        let start = Instant::now();
        let report = run_monte_carlo(&cfg).expect("reference experiment");
        let secs = start.elapsed().as_secs_f64();
        let _ = emit_report(&report, &out_dir.join("ou_reference"));
        run(5, "asymptotic normality", &mut || criterion_5(&report, secs));
        run(6, "moment stability across n", &mut || criterion_6(&report));
        run(7, "ML and Bayes agreement", &mut || criterion_7(&report));
        run(8, "random field tail decay", &mut || criterion_8(&report));
    }
    run(9, "gradient and curvature", &mut criterion_9);
    run(10, "determinism across runs and threads", &mut || criterion_10(&out_dir));

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("{} ({})", r.0, r.1)).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(": {}", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
