//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so every line is printed
//! whether or not it passes; the process exits non-zero if any criterion
//! fails.

use coherence_core::composition::{
    certify_composed, construct_witness, disagreement_bound, is_product_structured, residual, CompositionSpec,
    CouplingConstraint, CouplingKind, CouplingSet, LocalStructure, OwnershipMap,
};
use coherence_core::decision::{brier, exposure};
use coherence_core::monitor::{EProcess, StreamStep};
use coherence_core::polytope::{build_polytope, enumerate_vertices};
use coherence_core::prediction::{observe_magnitude, panel_stats, predict_magnitude};
use coherence_core::projection::{project_closed_form, project_dykstra, project_oracle, project_relation};
use coherence_core::simharness::{run_ensemble, Bias, EnsembleConfig, Operator, PanelModel, RoutingKind, TruthModel};
use coherence_core::{Clique, DykstraConfig, Relation, RelationKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn cfg() -> DykstraConfig {
    DykstraConfig::default()
}

fn rng(stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(20_240_601);
    r.set_stream(stream);
    r
}

fn catalog(max_m: usize) -> Vec<Relation> {
    let mut out = vec![Relation::negation(), Relation::conjunction(), Relation::disjunction()];
    for m in 2..=max_m {
        out.push(Relation::partition(m).unwrap());
        out.push(Relation::ladder(m).unwrap());
        out.push(Relation::paraphrase(m).unwrap());
    }
    out
}

fn uniform_quote(relation: &Relation, rng: &mut impl Rng) -> Vec<f64> {
    (0..relation.arity()).map(|_| rng.random::<f64>()).collect()
}

/// Random point of the relation polytope: exponential weights over its vertices.
fn coherent_quote(relation: &Relation, rng: &mut impl Rng) -> Vec<f64> {
    let verts = enumerate_vertices(relation).unwrap().vertices;
    let w: Vec<f64> = verts.iter().map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    (0..relation.arity())
        .map(|j| verts.iter().zip(&w).map(|(v, wi)| v[j] * wi / total).sum())
        .collect()
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fig1() -> (CompositionSpec, Vec<Vec<f64>>) {
    let ownership = OwnershipMap::from_owners(vec![0, 1, 2, 3], 4).unwrap();
    let comp = CompositionSpec::new(
        vec![LocalStructure::Free { dim: 1 }; 4],
        ownership,
        CouplingSet::new(vec![CouplingConstraint::new(
            "p",
            CouplingKind::Partition,
            vec![0, 1, 2, 3],
        )]),
    )
    .unwrap();
    (comp, vec![vec![0.39], vec![0.73], vec![0.67], vec![0.71]])
}

fn criterion_1() -> Verdict {
    let (comp, locals) = fig1();
    let cert = residual(&comp, &locals, &cfg()).unwrap();
    let mut times = Vec::new();
    for _ in 0..200 {
        let start = Instant::now();
        let (comp, locals) = fig1();
        std::hint::black_box(residual(&comp, &locals, &cfg()).unwrap());
        times.push(start.elapsed());
    }
    times.sort();
    let median = times[times.len() / 2];
    let repaired_gap = sup_gap(&cert.repaired, &[0.015, 0.355, 0.295, 0.335]);
    let pass = (cert.epsilon_star - 0.750).abs() <= 0.002
        && repaired_gap <= 1e-9
        && (cert.exposure_bound - 1.500).abs() <= 0.004
        && median < Duration::from_millis(1);
    verdict(
        pass,
        format!(
            "eps*={:.6} bound={:.6} repaired gap={repaired_gap:.1e} median runtime={median:?}",
            cert.epsilon_star, cert.exposure_bound
        ),
    )
}

fn criterion_2() -> Verdict {
    let neg = project_relation(&Relation::negation(), &[0.84, 0.89], &cfg())
        .unwrap()
        .residual;
    let or = Relation::disjunction();
    let dj = project_dykstra(&build_polytope(&or), &[0.02, 0.03, 0.92], &cfg()).unwrap();
    let pass = (neg - 0.517).abs() <= 0.002 && (dj.residual - 0.502).abs() <= 0.005 && dj.converged;
    verdict(
        pass,
        format!("negation eps*={neg:.6}; disjunction eps*={:.6} (Dykstra)", dj.residual),
    )
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst_oracle: f64 = 0.0;
    let mut worst_closed: f64 = 0.0;
    for relation in catalog(4) {
        let verts = enumerate_vertices(&relation).unwrap();
        let spec = build_polytope(&relation);
        for _ in 0..1000 {
            let q = uniform_quote(&relation, &mut r);
            let d = project_dykstra(&spec, &q, &cfg()).unwrap();
            let o = project_oracle(&verts, &q).unwrap();
            worst_oracle = worst_oracle.max(sup_gap(&d.projected, &o.projected));
            if matches!(relation.kind(), RelationKind::Negation | RelationKind::Partition) {
                let c = project_closed_form(&relation, &q).unwrap();
                worst_closed = worst_closed.max(sup_gap(&c.projected, &d.projected));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_oracle <= 1e-6 && worst_closed <= 1e-12 && elapsed < Duration::from_secs(30);
    verdict(
        pass,
        format!("max |dykstra-oracle|={worst_oracle:.2e}; max |closed-dykstra|={worst_closed:.2e}; {elapsed:?}"),
    )
}

/// Product-structured composition: clique components with at most
/// component-internal coupling.
fn random_product_spec(r: &mut impl Rng) -> (CompositionSpec, Vec<Relation>) {
    let pool = catalog(4);
    let k = r.random_range(1..=3);
    let relations: Vec<Relation> = (0..k).map(|_| pool[r.random_range(0..pool.len())]).collect();
    let mut owners = Vec::new();
    let mut coupling = Vec::new();
    for (a, rel) in relations.iter().enumerate() {
        let start = owners.len();
        owners.extend(std::iter::repeat_n(a, rel.arity()));
        if r.random::<bool>() {
            coupling.push(CouplingConstraint::new(
                format!("internal{a}"),
                CouplingKind::for_relation(rel.kind()),
                (start..start + rel.arity()).collect(),
            ));
        }
    }
    let ownership = OwnershipMap::from_owners(owners, k).unwrap();
    let components = relations.iter().map(|r| LocalStructure::Clique(*r)).collect();
    (
        CompositionSpec::new(components, ownership, CouplingSet::new(coupling)).unwrap(),
        relations,
    )
}

fn criterion_4() -> Verdict {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    let mut misclassified = 0;
    for _ in 0..10_000 {
        let (comp, relations) = random_product_spec(&mut r);
        if !is_product_structured(&comp).unwrap() {
            misclassified += 1;
        }
        let locals: Vec<Vec<f64>> = relations.iter().map(|rel| coherent_quote(rel, &mut r)).collect();
        worst = worst.max(residual(&comp, &locals, &cfg()).unwrap().epsilon_star);
    }
    let mut weakest = f64::INFINITY;
    let mut weakest_name = String::new();
    let mut specs = 0;
    for relation in catalog(4) {
        let m = relation.arity();
        // every split of the clique across owners that is not a single owner
        for mask in 1..(1usize << m) - 1 {
            let owners: Vec<usize> = (0..m).map(|j| (mask >> j) & 1).collect();
            let comp = CompositionSpec::routed_clique(&relation, &owners).unwrap();
            let (_, cert) = construct_witness(&comp, &cfg()).unwrap();
            specs += 1;
            if cert.epsilon_star < weakest {
                weakest = cert.epsilon_star;
                weakest_name = format!("{}{m} owners {owners:?}", relation.kind().tag());
            }
        }
        let singletons: Vec<usize> = (0..m).collect();
        let comp = CompositionSpec::routed_clique(&relation, &singletons).unwrap();
        let (_, cert) = construct_witness(&comp, &cfg()).unwrap();
        specs += 1;
        weakest = weakest.min(cert.epsilon_star);
    }
    let (comp, _) = fig1();
    let (_, cert) = construct_witness(&comp, &cfg()).unwrap();
    weakest = weakest.min(cert.epsilon_star);
    let pass = worst <= 1e-8 && misclassified == 0 && weakest > 1e-3;
    verdict(
        pass,
        format!(
            "product max eps*={worst:.1e} (misclassified {misclassified}); weakest witness over {} specs eps*={weakest:.4} ({weakest_name})",
            specs + 1
        ),
    )
}

fn random_routed(r: &mut impl Rng, pool: &[Relation]) -> (Relation, CompositionSpec, Vec<Vec<f64>>) {
    let relation = pool[r.random_range(0..pool.len())];
    let owners: Vec<usize> = (0..relation.arity()).map(|_| r.random_range(0..3)).collect();
    let comp = CompositionSpec::routed_clique(&relation, &owners).unwrap();
    let locals = (0..comp.components().len())
        .map(|a| {
            comp.ownership()
                .coords_of(a)
                .iter()
                .map(|_| r.random::<f64>())
                .collect()
        })
        .collect();
    (relation, comp, locals)
}

fn criterion_5() -> Verdict {
    let mut r = rng(5);
    let pool = catalog(6);
    let mut violations = 0;
    let mut worst_slack = f64::INFINITY;
    for _ in 0..10_000 {
        let relation = pool[r.random_range(0..pool.len())];
        let q = uniform_quote(&relation, &mut r);
        let owners: Vec<usize> = (0..relation.arity()).collect();
        let comp = CompositionSpec::routed_clique(&relation, &owners).unwrap();
        let cert = certify_composed(&comp, &q, true, &cfg()).unwrap();
        let e = exposure(&relation, &q).unwrap();
        let slack = cert.exposure_bound + 1e-9 - e;
        worst_slack = worst_slack.min(slack);
        if slack < 0.0 {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("violations {violations}/10000; min slack {worst_slack:.2e}"),
    )
}

fn criterion_6() -> Verdict {
    let mut r = rng(6);
    let pool = catalog(4);
    let mut violations = 0;
    let mut worst_tight: f64 = 0.0;
    for _ in 0..10_000 {
        let (relation, comp, locals) = random_routed(&mut r, &pool);
        let cert = residual(&comp, &locals, &cfg()).unwrap();
        let reference = coherent_quote(&relation, &mut r);
        let bound = disagreement_bound(&comp, &locals, &reference, &cfg()).unwrap();
        if bound < cert.epsilon_star {
            violations += 1;
        }
        let tight = disagreement_bound(&comp, &locals, &cert.repaired, &cfg()).unwrap();
        worst_tight = worst_tight.max((tight - cert.epsilon_star).abs());
    }
    let pass = violations == 0 && worst_tight <= 1e-9;
    verdict(
        pass,
        format!("violations {violations}/10000; max |bound-eps*| at repaired reference {worst_tight:.1e}"),
    )
}

/// `k` specialists in antithetic pairs around `center`, each perturbed along
/// the directions that keep it coherent.
fn symmetric_panel(relation: &Relation, center: &[f64], k: usize, sigma: f64, r: &mut impl Rng) -> Vec<Vec<f64>> {
    let m = relation.arity();
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut panel = Vec::with_capacity(k);
    for _ in 0..k / 2 {
        let z: Vec<f64> = match relation.kind() {
            RelationKind::Paraphrase => vec![normal.sample(r); m],
            RelationKind::Negation | RelationKind::Partition => {
                let raw: Vec<f64> = (0..m).map(|_| normal.sample(r)).collect();
                let mean = raw.iter().sum::<f64>() / m as f64;
                raw.iter().map(|v| v - mean).collect()
            }
            _ => (0..m).map(|_| normal.sample(r)).collect(),
        };
        panel.push(center.iter().zip(&z).map(|(c, d)| c + d).collect());
        panel.push(center.iter().zip(&z).map(|(c, d)| c - d).collect());
    }
    panel
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let neg = Relation::negation();
    let panel = vec![vec![0.6, 0.4], vec![0.4, 0.6]];
    let comp = CompositionSpec::routed_clique(&neg, &[0, 0]).unwrap();
    let pred = predict_magnitude(&panel_stats(&panel).unwrap(), &neg)
        .unwrap()
        .predicted_sq_residual;
    let obs = observe_magnitude(&comp, &panel, 0, 0, &cfg()).unwrap();
    let exact_ok = obs.exhaustive && (obs.mean - 0.01).abs() <= 1e-12 && (pred - 0.01).abs() <= 1e-12;
    let mut detail = format!("exhaustive negation observed={:.6} predicted={pred:.6}", obs.mean);

    let mut r = rng(7);
    let mut ratios_ok = true;
    let cases: Vec<(Relation, Vec<f64>)> = vec![
        (neg, vec![0.45, 0.55]),
        (Relation::partition(3).unwrap(), vec![0.3, 0.3, 0.4]),
        (Relation::partition(5).unwrap(), vec![0.2; 5]),
        (Relation::paraphrase(5).unwrap(), vec![0.5; 5]),
    ];
    for (relation, center) in &cases {
        let panel = symmetric_panel(relation, center, 16, 0.03, &mut r);
        let pred = predict_magnitude(&panel_stats(&panel).unwrap(), relation)
            .unwrap()
            .predicted_sq_residual;
        let comp = CompositionSpec::routed_clique(relation, &vec![0; relation.arity()]).unwrap();
        let obs = observe_magnitude(&comp, &panel, 20_000, 7, &cfg()).unwrap();
        let ratio = obs.mean / pred;
        ratios_ok &= (0.9..=1.1).contains(&ratio);
        detail += &format!("; {}{} ratio={ratio:.3}", relation.kind().tag(), relation.arity());
    }
    let and = Relation::conjunction();
    let panel = symmetric_panel(&and, &[0.6, 0.6, 0.3], 8, 0.05, &mut r);
    let pred = predict_magnitude(&panel_stats(&panel).unwrap(), &and).unwrap();
    let comp = CompositionSpec::routed_clique(&and, &[0, 0, 0]).unwrap();
    let obs = observe_magnitude(&comp, &panel, 20_000, 7, &cfg()).unwrap();
    let interior_ok = obs.mean <= pred.predicted_sq_residual + 3.0 * obs.std_error;
    detail += &format!(
        "; interior and: observed={:.2e} <= predicted={:.2e} + 3SE ({})",
        obs.mean,
        pred.predicted_sq_residual,
        pred.regime.tag()
    );
    let elapsed = start.elapsed();
    detail += &format!("; {elapsed:?}");
    verdict(
        exact_ok && ratios_ok && interior_ok && elapsed < Duration::from_secs(60),
        detail,
    )
}

fn bernoulli_mean(p: f64, k: u64, r: &mut impl Rng) -> f64 {
    Binomial::new(k, p).unwrap().sample(r) as f64 / k as f64
}

fn criterion_8_type_one() -> Verdict {
    let (m, k, n_streams, len) = (2u64, 8u64, 1000, 600);
    let mut crossed = [0usize; 2];
    let alphas = [0.05, 1e-4];
    let neg = Relation::negation();
    for s in 0..n_streams {
        let mut r = rng(80_000 + s);
        let u: f64 = r.random();
        let p = [u, 1.0 - u];
        let mut e = EProcess::new(alphas.to_vec()).unwrap();
        for _ in 0..len {
            let x = [bernoulli_mean(p[0], k, &mut r), bernoulli_mean(p[1], k, &mut r)];
            let eps = project_relation(&neg, &x, &cfg()).unwrap().residual;
            e.update(&StreamStep::new(eps * eps, m, k).unwrap()).unwrap();
        }
        for (i, (_, at)) in e.crossings().enumerate() {
            if at.is_some() {
                crossed[i] += 1;
            }
        }
    }
    let mut pass = true;
    let mut detail = String::new();
    for (i, &a) in alphas.iter().enumerate() {
        let rate = crossed[i] as f64 / n_streams as f64;
        let limit = a + 2.0 * (a / n_streams as f64).sqrt();
        pass &= rate <= limit;
        detail += &format!("alpha={a:e}: rate {rate:.4} <= {limit:.4}; ");
    }
    verdict(pass, detail.trim_end_matches("; ").to_string())
}

fn criterion_8_power() -> Verdict {
    let (m, k, n_runs, horizon, delta) = (2u64, 8u64, 1000, 500, 0.05);
    let mut detected = 0;
    let mut final_log_e = Vec::with_capacity(n_runs);
    for s in 0..n_runs as u64 {
        let mut r = rng(90_000 + s);
        let mut e = EProcess::new(vec![0.05]).unwrap();
        for _ in 0..horizon {
            // squared distance of a K-sample estimate from p = (½, ½) has mean
            // m/(4K); shifting by delta gives the alternative's mean exactly
            let d: f64 = (0..m).map(|_| (bernoulli_mean(0.5, k, &mut r) - 0.5).powi(2)).sum();
            e.update(&StreamStep::new(d + delta, m, k).unwrap()).unwrap();
        }
        if e.crossings().next().and_then(|(_, at)| at).is_some() {
            detected += 1;
        }
        final_log_e.push(e.log_e_mix());
    }
    let rate = detected as f64 / n_runs as f64;
    let mean_log = final_log_e.iter().sum::<f64>() / n_runs as f64;
    verdict(
        rate >= 0.95,
        format!(
            "detected {detected}/{n_runs} ({rate:.3}, need >= 0.95); mean log e at t=500 {mean_log:.2} vs ln 20 = {:.2}",
            20f64.ln()
        ),
    )
}

fn ensemble(truth: TruthModel, n_seeds: u64) -> Vec<coherence_core::simharness::EnsembleRecord> {
    let relations = [
        Relation::negation(),
        Relation::conjunction(),
        Relation::disjunction(),
        Relation::partition(4).unwrap(),
        Relation::ladder(3).unwrap(),
        Relation::paraphrase(3).unwrap(),
    ];
    let cliques: Vec<Clique> = relations
        .iter()
        .enumerate()
        .flat_map(|(i, r)| (0..5).map(move |j| Clique::anonymous(format!("{}-{i}-{j}", r.kind().tag()), *r)))
        .collect();
    let model = PanelModel {
        k: 3,
        sigma: 0.1,
        k_samples: Some(30),
        bias: Bias::Constant(vec![0.05, 0.0, -0.05]),
        truth,
    };
    let config = EnsembleConfig {
        routing: RoutingKind::RandomUniform,
        n_seeds,
        master_seed: 0,
        projection: cfg(),
    };
    run_ensemble(&cliques, &model, &config).unwrap()
}

fn criterion_9() -> Verdict {
    let records = ensemble(TruthModel::Coherent { concentration: 1.0 }, 20);
    let gaps: Vec<f64> = records
        .iter()
        .map(|rec| {
            let bet = rec.bet();
            let m = bet.naive.len() as f64;
            let delta = brier(&bet.repaired, &bet.labels) - brier(&bet.naive, &bet.labels);
            delta + bet.eps_star.powi(2) / m
        })
        .collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let se = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let transfer_ok = mean <= 3.0 * se;

    let adversarial = ensemble(TruthModel::Adversarial { margin: 0.2 }, 20);
    let positive = adversarial
        .iter()
        .filter(|rec| {
            let bet = rec.bet();
            brier(&bet.repaired, &bet.labels) - brier(&bet.naive, &bet.labels) > 0.0
        })
        .count();
    verdict(
        transfer_ok && positive > 0,
        format!(
            "coherent truth: mean(dBrier + eps*^2/m)={mean:.2e} <= 3SE={:.2e} over {} bets; adversarial truth: {positive}/{} bets with dBrier > 0",
            3.0 * se,
            gaps.len(),
            adversarial.len()
        ),
    )
}

fn criterion_10() -> Verdict {
    let records = ensemble(TruthModel::Coherent { concentration: 1.0 }, 20);
    let mean = |op: Operator| records.iter().map(|r| r.operator(op).eps_star).sum::<f64>() / records.len() as f64;
    let [a, b, c, d] = Operator::ALL.map(mean);
    let pass = a >= b && b >= c && c <= 1e-8 && d <= 1e-8;
    verdict(pass, format!("mean eps*: A={a:.4} B={b:.4} C={c:.1e} D={d:.1e}"))
}

fn criterion_11() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    std::fs::write(
        &scenario,
        "seed = 11\nn_seeds = 6\n[panel]\nk = 4\nsigma = 0.1\nk_samples = 25\nbias = [0.02, 0.0, -0.02, 0.0]\n\
         [[cliques]]\nkind = \"partition\"\nm = 4\ncount = 4\n[[cliques]]\nkind = \"or\"\ncount = 4\n",
    )
    .unwrap();
    let exe = env!("CARGO_BIN_EXE_coherence");
    let run = |tag: &str, jobs: &str| -> Option<(Vec<Vec<u8>>, coherence_core::manifest::RunManifest)> {
        let rec = dir.path().join(format!("rec-{tag}.jsonl"));
        let bets = dir.path().join(format!("bets-{tag}.jsonl"));
        let regret = dir.path().join(format!("regret-{tag}.json"));
        let ok = Command::new(exe)
            .args(["simulate", "--jobs", jobs, "--config"])
            .arg(&scenario)
            .arg("-o")
            .arg(&rec)
            .arg("--bets-out")
            .arg(&bets)
            .status()
            .ok()?
            .success()
            && Command::new(exe)
                .args(["regret", "--bootstrap", "300", "--jobs", jobs])
                .arg(&bets)
                .arg("-o")
                .arg(&regret)
                .status()
                .ok()?
                .success();
        if !ok {
            return None;
        }
        let manifest =
            serde_json::from_str(&std::fs::read_to_string(format!("{}.manifest.json", rec.display())).ok()?).ok()?;
        Some((
            [rec, bets, regret].iter().map(|p| std::fs::read(p).unwrap()).collect(),
            manifest,
        ))
    };
    match (run("a", "1"), run("b", "4")) {
        (Some((a, ma)), Some((b, mb))) => {
            let same = a == b && ma.same_run(&mb);
            verdict(
                same,
                format!(
                    "simulate+regret repeated (jobs 1 vs 4): outputs identical={}, manifests equal={}",
                    a == b,
                    ma.same_run(&mb)
                ),
            )
        }
        _ => verdict(false, "CLI run failed"),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8 (type-I)", criterion_8_type_one),
        ("8 (power)", criterion_8_power),
        ("9", criterion_9),
        ("10", criterion_10),
        ("11", criterion_11),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let v = check();
        println!(
            "criterion {name}: {} — {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
