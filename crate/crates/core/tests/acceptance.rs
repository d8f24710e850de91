//! Acceptance gate: twelve criteria, one [PASS]/[FAIL] line each. Exits
//! non-zero when any criterion fails.
//!
//! Criteria 4 and 7-12 run on three desk-scale worlds built per seed:
//! an overfit world (balanced target at the 0.25 cutoff), a property world
//! (two fleets for held-out PropInf evaluation) and a biased world (2:8
//! target and shadow data, attribute tied to property).

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use infercomp_core::analysis::{auc, ks_shift, tpr_at_fpr_target, LOW_FPR};
use infercomp_core::attacks::lira::{likelihood_ratio_score, GaussianFit};
use infercomp_core::attacks::{
    adv_l2_profile, prepare_meminf, propinf_attack, AdvMode, AttrInfConfig, MemInfConfig, MemInfContext, MemInfSetting,
    PropInfConfig, PropInfOutput, QueryAux,
};
use infercomp_core::compose::*;
use infercomp_core::data::{
    generate, partition_dataset, DatasetBundle, PartitionFractions, PartitionSpec, PropertyProportion, Sample,
    SyntheticSpec,
};
use infercomp_core::models::{
    noise_multiplier_for, train_dp_model, train_model, train_shadow_fleet, Architecture, DpConfig, FleetMember, ModelConfig, TrainedModel,
    WhiteBox,
};
use infercomp_core::nn::{softmax_rows, Network};
use infercomp_core::seed::{derive_seed, json_hash, rng_for};
use ndarray::Array2;
use rand::Rng as _;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

// pinned tolerances
const GRAD_REL_TOL: f64 = 1e-3;
const LIRA_TOL: f64 = 1e-9;
const NULL_AUC_TOL: f64 = 0.02;
const CALIBRATION_TOL: f64 = 1e-6;
const CLIP_TOL: f64 = 1e-6;
const KS_MIN_REJECTS: usize = 4;
const ADV_MEMINF_MIN_SETTINGS: usize = 3;
const ADV_MEMINF_MIN_GAIN: f64 = 0.02;
const ADV_PROPINF_MIN_GAIN: f64 = 0.05;
const ATTRINF_MIN_GAIN: f64 = 0.05;
const PROPINF_MEMINF_SLACK: f64 = 0.01;
const PROPINF_MEMINF_MIN_WINS: usize = 2;
const CHAIN_AUC_TOL: f64 = 0.02;

// desk-scale adversarial budget
const ADV_EPSILON: f64 = 0.1;

fn budget(epsilon: f64) -> AdvBudget {
    let mut b = AdvBudget::default().with_epsilon(epsilon);
    b.pgd.step = epsilon / 40.0;
    b.pgd.max_iters = 100;
    b.square.max_queries = 1000;
    b
}

fn pgd(epsilon: f64) -> AdvMode {
    AdvMode::Pgd(budget(epsilon).pgd)
}

fn proportion(p0: f64) -> PropertyProportion {
    PropertyProportion::new(vec![p0, 1.0 - p0]).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Gate {
    results: Vec<(u32, bool)>,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, pass));
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

// ---------------------------------------------------------------- property suites

fn brute_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut count2, mut np, mut nn) = (0u64, 0u64, 0u64);
    for (i, &ti) in truth.iter().enumerate() {
        if ti {
            np += 1;
        } else {
            nn += 1;
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if !tj {
                count2 += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    count2 as f64 / 2.0 / (np as f64 * nn as f64)
}

/// Every distinct score (plus +inf) as a `>=` threshold.
fn brute_tpr(scores: &[f64], truth: &[bool], target: f64) -> f64 {
    let pos = truth.iter().filter(|&&t| t).count() as f64;
    let neg = truth.len() as f64 - pos;
    let mut best: f64 = 0.0;
    for &t in scores.iter().chain([f64::INFINITY].iter()) {
        let tp = scores.iter().zip(truth).filter(|(s, &y)| y && **s >= t).count() as f64;
        let fp = scores.iter().zip(truth).filter(|(s, &y)| !y && **s >= t).count() as f64;
        if fp / neg <= target {
            best = best.max(tp / pos);
        }
    }
    best
}

fn criterion_1(gate: &mut Gate) {
    let t = Instant::now();
    let mut rng = rng_for(101);
    let mut mismatches = 0;
    for case in 0..50 {
        let n = rng.random_range(2..=200);
        // coarse grid on half the cases to force ties
        let scores: Vec<f64> = (0..n)
            .map(|_| if case % 2 == 0 { f64::from(rng.random_range(0..10u8)) } else { rng.random::<f64>() })
            .collect();
        let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        truth[0] = true;
        truth[1] = false;
        let a = auc(&scores, &truth).unwrap();
        let tpr = tpr_at_fpr_target(&scores, &truth, LOW_FPR).unwrap();
        if a != brute_auc(&scores, &truth) || tpr != brute_tpr(&scores, &truth, LOW_FPR) {
            mismatches += 1;
        }
    }
    let el = t.elapsed();
    gate.report(
        1,
        "metric oracles",
        mismatches == 0 && within(el, 10),
        format!("{mismatches}/50 mismatches against brute force, {el:.2?}"),
    );
}

fn loss_of(net: &Network, x: &Array2<f64>, y: usize) -> f64 {
    -softmax_rows(&net.forward(x))[[0, y]].ln()
}

fn criterion_2(gate: &mut Gate) {
    let t = Instant::now();
    let mut rng = rng_for(202);
    let mut worst: f64 = 0.0;
    for m in 0..20u64 {
        let net = if m % 4 == 3 {
            let meta = SyntheticSpec { side: 4, num_classes: rng.random_range(2..5), ..SyntheticSpec::default() }.meta();
            Architecture::SmallCnn.build(&meta, m)
        } else {
            let dims = [rng.random_range(2..8), rng.random_range(2..10), rng.random_range(2..6), rng.random_range(2..5)];
            Network::mlp(&dims, &mut rng_for(m))
        };
        let d = net.input_dim;
        let k = net.output_dim();
        let features: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let y = rng.random_range(0..k);
        let sample = Sample { id: 0, features: features.clone(), task_label: y, attribute: 0, property: 0 };
        let analytic = net.views(&[sample])[0].last_layer_gradient.clone();
        let x = Array2::from_shape_vec((1, d), features).unwrap();
        let params = net.params();
        let offset = params.len() - analytic.len();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|j| {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut p = params.clone();
                p[offset + j] += h;
                plus.set_params(&p);
                p[offset + j] -= 2.0 * h;
                minus.set_params(&p);
                (loss_of(&plus, &x, y) - loss_of(&minus, &x, y)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    let el = t.elapsed();
    gate.report(
        2,
        "last-layer gradient check",
        worst < GRAD_REL_TOL && within(el, 60),
        format!("worst relative error {worst:.2e} over 20 models (< {GRAD_REL_TOL:e}), {el:.2?}"),
    );
}

fn criterion_3(gate: &mut Gate) {
    let t = Instant::now();
    let g = |m: f64, v: f64| GaussianFit::new(vec![m], vec![vec![v]]).unwrap();
    let logpdf = |x: f64, m: f64, v: f64| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v);
    let cases = [(0.0, 1.0, 1.0, -1.0, 1.0), (2.0, 1.0, 1.0, -1.0, 1.0), (0.3, 2.0, 0.5, -1.0, 3.0), (-4.0, 0.0, 2.0, 0.0, 2.0), (1.0, 1.0, 0.25, 1.0, 4.0)];
    let mut worst: f64 = 0.0;
    for (x, m_in, v_in, m_out, v_out) in cases {
        let got = likelihood_ratio_score(&[x], &g(m_in, v_in), &g(m_out, v_out));
        let want = -logpdf(x, m_in, v_in) + logpdf(x, m_out, v_out);
        worst = worst.max((got - want).abs());
    }
    // midpoint of equal-variance fits scores exactly zero
    let midpoint = likelihood_ratio_score(&[0.0], &g(1.0, 1.0), &g(-1.0, 1.0)).abs();
    worst = worst.max(midpoint);
    let el = t.elapsed();
    gate.report(
        3,
        "LiRA closed form",
        worst < LIRA_TOL && within(el, 1),
        format!("max deviation {worst:.1e}, midpoint score {midpoint:.1e}, {el:.2?}"),
    );
}

fn criterion_6(gate: &mut Gate) {
    let t = Instant::now();
    let spec = SyntheticSpec { n_samples: 300, ..SyntheticSpec::default() };
    let (meta, s) = generate(&spec, 6).unwrap();
    let mut c = ModelConfig::new(Architecture::Mlp, 6);
    c.max_epochs = 3;
    c.batch_size = 32;
    c.overfit_threshold = 1.0;
    c.dp = Some(DpConfig::new(10.0, 0.5));
    let m = train_dp_model(&c, meta, &s[..200], &s[200..]).unwrap();
    let report = m.dp_report.as_ref().unwrap();
    let max_norm = report.max_clipped_norms.iter().copied().fold(0.0, f64::max);
    let clipped = report.steps == 3 * 200usize.div_ceil(32) && max_norm <= 0.5 + CLIP_TOL;
    let sigma = |eps: f64| noise_multiplier_for(eps, 1e-5, 256.0 / 1000.0, 400).unwrap();
    let (s10, s20, s50) = (sigma(10.0), sigma(20.0), sigma(50.0));
    let el = t.elapsed();
    gate.report(
        6,
        "DP mechanics",
        clipped && s10 > s20 && s20 > s50,
        format!(
            "{} updates, max clipped norm {max_norm:.6} <= 0.5; sigma(10)={s10:.4} > sigma(20)={s20:.4} > sigma(50)={s50:.4}, {el:.2?}",
            report.steps
        ),
    );
}

// ---------------------------------------------------------------- worlds

fn cnn(seed: u64) -> ModelConfig {
    ModelConfig::new(Architecture::SmallCnn, seed)
}

struct OverfitWorld {
    bundle: DatasetBundle,
    target: TrainedModel,
}

fn overfit_world(seed: u64) -> OverfitWorld {
    let spec = SyntheticSpec { noise: 0.75, ..SyntheticSpec::default() };
    let (meta, s) = generate(&spec, seed).unwrap();
    let bundle = partition_dataset(&s, meta, &PartitionSpec::balanced(2), seed).unwrap();
    let target = train_model(&cnn(seed), meta, &bundle.target_train, &bundle.target_test).unwrap();
    OverfitWorld { bundle, target }
}

struct PropertyWorld {
    fleet: Vec<FleetMember>,
    held_out: Vec<FleetMember>,
    query_aux: QueryAux,
}

fn property_world(seed: u64) -> PropertyWorld {
    let spec = SyntheticSpec { noise: 0.75, ..SyntheticSpec::default() };
    let (meta, s) = generate(&spec, seed).unwrap();
    let labels = vec![proportion(0.3), proportion(0.7)];
    let mut ps = PartitionSpec::balanced(2);
    ps.fractions = PartitionFractions { target_train: 0.2, target_test: 0.2, shadow_train: 0.3, shadow_test: 0.2 };
    ps.query_proportions = labels.clone();
    ps.query_set_size = 20;
    let b = partition_dataset(&s, meta, &ps, seed).unwrap();
    let train = |stage: &str| {
        train_shadow_fleet(&cnn(seed), meta, &b.shadow_train, &b.shadow_test, &labels, 10, 500, derive_seed(seed, stage, 0))
            .unwrap()
    };
    PropertyWorld { fleet: train("fleet"), held_out: train("held_out"), query_aux: b.query_aux.clone() }
}

struct BiasedWorld {
    bundle: DatasetBundle,
    target: TrainedModel,
    fleet: Vec<FleetMember>,
    inferred: PropInfOutput,
}

fn biased_world(seed: u64) -> BiasedWorld {
    let spec = SyntheticSpec { noise: 0.5, attribute_signal: 0.4, attribute_property_agreement: 0.9, ..SyntheticSpec::default() };
    let (meta, s) = generate(&spec, seed).unwrap();
    let biased = proportion(0.2);
    let mut ps = PartitionSpec::balanced(2);
    ps.fractions = PartitionFractions { target_train: 0.2, target_test: 0.15, shadow_train: 0.2, shadow_test: 0.15 };
    ps.target_train_proportion = biased.clone();
    ps.shadow_train_proportion = biased.clone();
    ps.query_proportions = vec![biased, proportion(0.8)];
    ps.query_set_size = 20;
    let bundle = partition_dataset(&s, meta, &ps, seed).unwrap();
    let target = train_model(&cnn(seed), meta, &bundle.target_train, &bundle.target_test).unwrap();
    let pool: Vec<Sample> = bundle.shadow_train.iter().chain(&bundle.reserve).cloned().collect();
    let fleet = train_shadow_fleet(&cnn(seed), meta, &pool, &bundle.shadow_test, &ps.query_proportions, 10, 400, derive_seed(seed, "fleet", 0))
        .unwrap();
    let (inferred, _) = propinf_attack(&target, &fleet, &bundle.query_aux, None, &PropInfConfig { seed, ..PropInfConfig::default() }).unwrap();
    BiasedWorld { bundle, target, fleet, inferred }
}

// ---------------------------------------------------------------- directional replications

#[derive(Default)]
struct Tally {
    /// composition name -> |composition AUC - origin AUC| per seed
    null_gaps: BTreeMap<String, Vec<f64>>,
    ks: Vec<(bool, f64)>,
    adv_meminf: BTreeMap<&'static str, Vec<(f64, f64)>>,
    adv_propinf: Vec<(f64, f64)>,
    attrinf: Vec<(f64, f64)>,
    propinf_meminf: BTreeMap<&'static str, Vec<(f64, f64)>>,
    chain_gaps: Vec<(String, f64)>,
    contracts: Vec<(&'static str, bool)>,
    time: BTreeMap<u32, Duration>,
}

impl Tally {
    fn null(&mut self, name: String, origin: f64, composition: f64) {
        self.null_gaps.entry(name).or_default().push((composition - origin).abs());
    }

    fn charge(&mut self, criteria: &[u32], d: Duration) {
        for c in criteria {
            *self.time.entry(*c).or_default() += d;
        }
    }
}

fn run_overfit(seed: u64, tally: &mut Tally) {
    let t = Instant::now();
    let w = overfit_world(seed);
    tally.charge(&[7, 8], t.elapsed());

    let t = Instant::now();
    let mode = pgd(ADV_EPSILON);
    let l2 = |samples: &[Sample]| -> Vec<f64> {
        adv_l2_profile(&w.target, samples, &mode, derive_seed(seed, "ks", 0)).iter().map(|r| r.l2_distance).collect()
    };
    let ks = ks_shift(&l2(&w.bundle.target_train), &l2(&w.bundle.target_test));
    tally.ks.push((ks.reject, ks.p_value));
    tally.charge(&[7], t.elapsed());

    let t = Instant::now();
    let cfg = MemInfConfig { seed, ..MemInfConfig::default() };
    for setting in MemInfSetting::CLASSIFIERS {
        let ctx = prepare_meminf(&w.target, &w.bundle, setting, &cfg).unwrap();
        let out = adv_to_meminf_in(&ctx, &budget(ADV_EPSILON), &cfg).unwrap();
        tally
            .adv_meminf
            .entry(setting.name())
            .or_default()
            .push((out.origin.result.accuracy(), out.composition.result.accuracy()));
        if seed == SEEDS[0] && setting == MemInfSetting::BbShadow {
            let ids = |r: &[infercomp_core::AttackFeatureRecord]| r.iter().map(|x| (x.sample_id, x.member)).collect::<Vec<_>>();
            let same_samples = ids(&out.origin.eval_records) == ids(&out.composition.eval_records)
                && ids(&out.origin.train_records) == ids(&out.composition.train_records);
            let schema_moved = out.artifacts["origin_feature_schema"] != out.artifacts["composition_feature_schema"];
            tally.contracts.push(("execution: same samples, new feature schema", same_samples && schema_moved));
        }
    }
    tally.charge(&[8], t.elapsed());
}

fn run_property(seed: u64, tally: &mut Tally) {
    let t = Instant::now();
    let w = property_world(seed);
    let fleets = t.elapsed();
    tally.charge(&[4, 9], fleets);
    let cfg = PropInfConfig { seed, ..PropInfConfig::default() };

    let t = Instant::now();
    let out = adv_to_propinf_fleet_eval(&w.fleet, &w.held_out, &w.query_aux, &pgd(ADV_EPSILON), &cfg).unwrap();
    tally.adv_propinf.push((out.origin.accuracy(), out.composition.accuracy()));
    tally.charge(&[9], t.elapsed());

    let t = Instant::now();
    let null = adv_to_propinf_fleet_eval(&w.fleet, &w.held_out, &w.query_aux, &pgd(0.0), &cfg).unwrap();
    tally.null("adv_to_propinf".into(), null.origin.auc(), null.composition.auc());
    tally.charge(&[4], t.elapsed());
}

fn run_biased(seed: u64, tally: &mut Tally) {
    let t = Instant::now();
    let w = biased_world(seed);
    let b = &w.bundle;
    let mcfg = MemInfConfig { seed, ..MemInfConfig::default() };
    let pcfg = PropInfConfig { seed, ..PropInfConfig::default() };
    let acfg = AttrInfConfig { seed, ..AttrInfConfig::default() };
    let contexts: Vec<MemInfContext<'_>> =
        MemInfSetting::ALL.iter().map(|&s| prepare_meminf(&w.target, b, s, &mcfg).unwrap()).collect();
    tally.charge(&[4, 10, 11, 12], t.elapsed());

    // criterion 4: zero budget and a uniform inference
    let t = Instant::now();
    let uniform = PropInfOutput::fixed(PropertyProportion::uniform(2), 1.0);
    for ctx in &contexts {
        let name = ctx.setting.name();
        let adv = adv_to_meminf_in(ctx, &budget(0.0), &mcfg).unwrap();
        tally.null(format!("adv_to_meminf[{name}]"), adv.origin.result.auc(), adv.composition.result.auc());
        let cal = propinf_to_meminf(ctx, Some(&uniform), &mcfg).unwrap();
        tally.null(format!("propinf_to_meminf[{name}]"), cal.origin.result.auc(), cal.result.auc());
    }
    for mode in [Mode::Empirical, Mode::Theoretical] {
        let out = propinf_to_attrinf(&w.target, 2, 2, &uniform, &b.shadow_train, mode, &b.target_test, &acfg, seed).unwrap();
        tally.null(CompositionPlan::propinf_to_attrinf(mode).name(), out.origin.auc(), out.composition.auc());
    }
    tally.charge(&[4], t.elapsed());

    // criterion 10
    let t = Instant::now();
    let prep = propinf_to_attrinf(&w.target, 2, 2, &w.inferred, &b.shadow_train, Mode::Empirical, &b.target_test, &acfg, seed).unwrap();
    tally.attrinf.push((prep.origin.accuracy(), prep.composition.accuracy()));
    if seed == SEEDS[0] {
        let ok = prep.origin_aux_hash != prep.composition_aux_hash && prep.config_hash == json_hash(&acfg);
        tally.contracts.push(("preparation: new aux hash, same config hash", ok));
    }
    tally.charge(&[10], t.elapsed());

    // criterion 11
    let t = Instant::now();
    let mut calibrated = Vec::new();
    for ctx in &contexts {
        let out = propinf_to_meminf(ctx, Some(&w.inferred), &mcfg).unwrap();
        tally
            .propinf_meminf
            .entry(ctx.setting.name())
            .or_default()
            .push((out.origin.result.accuracy(), out.result.accuracy()));
        if seed == SEEDS[0] && ctx.setting.is_classifier() {
            let worst = out
                .result
                .scores
                .iter()
                .zip(&out.origin_component)
                .zip(out.lambda.iter().zip(&out.terms))
                .map(|((s, o), (l, t))| (s - o - l * t).abs())
                .fold(0.0, f64::max);
            tally.contracts.push(("evaluation: calibrated - origin = lambda*(P-0.5)", worst < CALIBRATION_TOL));
        }
        calibrated.push(out);
    }
    tally.charge(&[11], t.elapsed());

    // criterion 12: zero-budget chains against the two-step compositions
    let t = Instant::now();
    let chain = chain_adv_propinf_attrinf(&w.target, &w.fleet, &b.query_aux, &pgd(0.0), &pcfg, &b.shadow_train, &b.target_test, &acfg, seed)
        .unwrap();
    tally.chain_gaps.push(("attrinf".into(), (chain.downstream.composition.auc() - prep.composition.auc()).abs()));
    for (ctx, two_step) in contexts.iter().zip(&calibrated) {
        let chain = chain_adv_propinf_meminf(ctx, &w.fleet, &b.query_aux, &pgd(0.0), &pcfg, &mcfg).unwrap();
        tally.chain_gaps.push((ctx.setting.name().into(), (chain.downstream.result.auc() - two_step.result.auc()).abs()));
    }
    tally.charge(&[12], t.elapsed());
}

fn conclude(gate: &mut Gate, tally: &Tally) {
    let time = |c: u32| tally.time.get(&c).copied().unwrap_or_default();

    let worst_null = tally.null_gaps.iter().map(|(n, g)| (n.clone(), mean(g))).fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    gate.report(
        4,
        "composition no-op nulls",
        worst_null.1 < NULL_AUC_TOL && within(time(4), 30 * 60),
        format!("{} compositions, worst mean |dAUC| {:.4} ({}), {:.0?}", tally.null_gaps.len(), worst_null.1, worst_null.0, time(4)),
    );

    // one entry per level, each checked in every setting it applies to
    let mut levels: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (name, ok) in &tally.contracts {
        let e = levels.entry(name).or_default();
        e.0 += usize::from(*ok);
        e.1 += 1;
    }
    let contracts_ok = levels.len() == 3 && levels.values().all(|(ok, n)| ok == n);
    let names: Vec<String> = levels.iter().map(|(n, (ok, total))| format!("{n} {ok}/{total}")).collect();
    gate.report(5, "level contracts", contracts_ok, names.join("; "));

    let rejects = tally.ks.iter().filter(|k| k.0).count();
    let p: Vec<String> = tally.ks.iter().map(|k| format!("{:.1e}", k.1)).collect();
    gate.report(
        7,
        "distribution shift",
        rejects >= KS_MIN_REJECTS && within(time(7), 20 * 60),
        format!("KS rejects in {rejects}/5 seeds (p = {}), {:.0?}", p.join(", "), time(7)),
    );

    let per_setting: Vec<(&str, f64, f64)> =
        tally.adv_meminf.iter().map(|(n, v)| (*n, mean(&v.iter().map(|x| x.0).collect::<Vec<_>>()), mean(&v.iter().map(|x| x.1).collect::<Vec<_>>()))).collect();
    let wins = per_setting.iter().filter(|s| s.2 >= s.1).count();
    let gain = mean(&per_setting.iter().map(|s| s.2 - s.1).collect::<Vec<_>>());
    let desc: Vec<String> = per_setting.iter().map(|s| format!("{} {:.3}->{:.3}", s.0, s.1, s.2)).collect();
    gate.report(
        8,
        "ADV->MemInf",
        wins >= ADV_MEMINF_MIN_SETTINGS && gain >= ADV_MEMINF_MIN_GAIN && within(time(8), 3600),
        format!("{}; {wins}/4 not worse, mean gain {gain:+.4} (need {ADV_MEMINF_MIN_GAIN:+}), {:.0?}", desc.join(", "), time(8)),
    );

    let (o, c) = (mean(&tally.adv_propinf.iter().map(|x| x.0).collect::<Vec<_>>()), mean(&tally.adv_propinf.iter().map(|x| x.1).collect::<Vec<_>>()));
    gate.report(
        9,
        "ADV->PropInf",
        c >= o + ADV_PROPINF_MIN_GAIN && within(time(9), 3600),
        format!("held-out fleet accuracy {o:.3} -> {c:.3} ({:+.3}, need {ADV_PROPINF_MIN_GAIN:+}), {:.0?}", c - o, time(9)),
    );

    let (o, c) = (mean(&tally.attrinf.iter().map(|x| x.0).collect::<Vec<_>>()), mean(&tally.attrinf.iter().map(|x| x.1).collect::<Vec<_>>()));
    gate.report(
        10,
        "PropInf->AttrInf",
        c >= o + ATTRINF_MIN_GAIN && within(time(10), 30 * 60),
        format!("empirical accuracy {o:.3} -> {c:.3} ({:+.3}, need {ATTRINF_MIN_GAIN:+}), {:.0?}", c - o, time(10)),
    );

    let per_setting: Vec<(&str, f64, f64)> = tally
        .propinf_meminf
        .iter()
        .map(|(n, v)| (*n, mean(&v.iter().map(|x| x.0).collect::<Vec<_>>()), mean(&v.iter().map(|x| x.1).collect::<Vec<_>>())))
        .collect();
    let none_worse = per_setting.iter().all(|s| s.2 >= s.1 - PROPINF_MEMINF_SLACK);
    let wins = per_setting.iter().filter(|s| s.2 > s.1).count();
    let desc: Vec<String> = per_setting.iter().map(|s| format!("{} {:.3}->{:.3}", s.0, s.1, s.2)).collect();
    gate.report(
        11,
        "PropInf->MemInf",
        none_worse && wins >= PROPINF_MEMINF_MIN_WINS && within(time(11), 3600),
        format!("{}; {wins}/5 improved, {:.0?}", desc.join(", "), time(11)),
    );

    let worst = tally.chain_gaps.iter().fold(("", 0.0), |a, (n, g)| if *g > a.1 { (n.as_str(), *g) } else { a });
    gate.report(
        12,
        "chain reduction",
        worst.1 < CHAIN_AUC_TOL,
        format!("{} chain/two-step pairs, worst |dAUC| {:.4} ({})", tally.chain_gaps.len(), worst.1, worst.0),
    );
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this gate
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let started = Instant::now();
    let mut gate = Gate { results: Vec::new() };
    criterion_1(&mut gate);
    criterion_2(&mut gate);
    criterion_3(&mut gate);
    criterion_6(&mut gate);

    let mut tally = Tally::default();
    for seed in SEEDS {
        let t = Instant::now();
        run_overfit(seed, &mut tally);
        run_property(seed, &mut tally);
        run_biased(seed, &mut tally);
        eprintln!("seed {seed} done in {:.0?}", t.elapsed());
    }
    conclude(&mut gate, &tally);

    gate.results.sort();
    let failed: Vec<String> = gate.results.iter().filter(|r| !r.1).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0?}{}",
        gate.results.len() - failed.len(),
        gate.results.len(),
        started.elapsed(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
