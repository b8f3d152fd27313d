//! Acceptance suite: the ten end-to-end criteria, on the default desk setup
//! (20 speakers × 10 utterances, 400 dev + 200 eval trials, trained model).
//!
//! Every criterion prints one `[criterion N] PASS|FAIL` line straight to
//! stdout, so the lines show up even when test output is captured. The
//! criteria run one at a time so their runtimes are not inflated by each
//! other on small machines.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use asv_vote::commands::{cmd_evaluate, cmd_gen_corpus, cmd_train, CHECKPOINT_FILE, CORPUS_DIR};
use asv_vote::corpus_io::{read_corpus, LoadedCorpus};
use asv_vote::runner::{Attack, Defense, Evaluator};
use asv_vote::{checkpoint, config::KnowledgeLevel, ExperimentConfig, RunOptions};
use asv_vote_core::attack::{attack_with_observer, bim_adaptive_vs_voting, AdversarialResult, AttackConfig, Knowledge};
use asv_vote_core::autodiff::finite_diff_partial;
use asv_vote_core::defense::{apply_filter, FilterKind, FilterSpec, VoteConfig, SIGMA_SWEEP};
use asv_vote_core::metrics::{calibrate_threshold, far, frr, Trial};
use asv_vote_core::model::{AsvModel, Scorer};
use asv_vote_core::seed::{derive_seed, rng_from_seed};
use asv_vote_core::AMPLITUDE_UNIT;
use rand::Rng;
use rayon::prelude::*;

const SEED: u64 = 0;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "[criterion {criterion:>2}] {verdict}: {detail}").unwrap();
    out.flush().unwrap();
}

struct Fixture {
    _dir: tempfile::TempDir,
    config: ExperimentConfig,
    model: AsvModel,
    corpus: LoadedCorpus,
    setup_secs: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            seed: SEED,
            out_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        cmd_gen_corpus(&config).unwrap();
        cmd_train(&config).unwrap();
        let model = checkpoint::load(&config.out_dir.join(CHECKPOINT_FILE)).unwrap();
        let corpus = read_corpus(&config.out_dir.join(CORPUS_DIR)).unwrap();
        Fixture {
            _dir: dir,
            config,
            model,
            corpus,
            setup_secs: start.elapsed().as_secs_f64(),
        }
    })
}

fn evaluator() -> &'static Evaluator<'static> {
    static EVALUATOR: OnceLock<Evaluator<'static>> = OnceLock::new();
    EVALUATOR.get_or_init(|| {
        let f = fixture();
        Evaluator::new(&f.model, &f.corpus, SEED).unwrap()
    })
}

fn limited(epsilon: f64) -> Attack {
    Attack::Bim {
        knowledge: KnowledgeLevel::Limited,
        epsilon,
        n_iters: 5,
    }
}

/// Limited-knowledge BIM (N = 5) on every eval trial for ε = 1, 5, 10, with
/// the time it took.
fn limited_attacks() -> &'static (Vec<Vec<AdversarialResult>>, f64) {
    static ATTACKS: OnceLock<(Vec<Vec<AdversarialResult>>, f64)> = OnceLock::new();
    ATTACKS.get_or_init(|| {
        let ev = evaluator();
        let start = Instant::now();
        let results = [1.0, 5.0, 10.0]
            .iter()
            .map(|&eps| ev.attack(&limited(eps), &Defense::None).unwrap().unwrap())
            .collect();
        (results, start.elapsed().as_secs_f64())
    })
}

fn attacked_at(epsilon: f64) -> &'static [AdversarialResult] {
    let i = [1.0, 5.0, 10.0].iter().position(|&e| e == epsilon).unwrap();
    &limited_attacks().0[i]
}

fn nontarget_indices() -> Vec<usize> {
    let eval = evaluator().eval_trials();
    (0..eval.len()).filter(|&i| !eval[i].is_target).collect()
}

/// FAR of non-target trials whose test side is `inputs`, under `defense`.
fn far_on_nontargets(inputs: &[AdversarialResult], defense: &Defense) -> f64 {
    let ev = evaluator();
    let idx = nontarget_indices();
    let trials: Vec<Trial> = idx.iter().map(|&i| ev.eval_trials()[i]).collect();
    let adv: Vec<AdversarialResult> = idx.iter().map(|&i| inputs[i].clone()).collect();
    let scores = ev.score_trials(&trials, Some(&adv), defense).unwrap();
    far(&scores, ev.threshold().tau).unwrap()
}

#[derive(Debug, Clone, Copy)]
struct VoteRow {
    sigma: f64,
    genuine_far: f64,
    genuine_frr: f64,
    attacked_far: f64,
}

struct DefenseSweep {
    undefended_genuine: (f64, f64),
    undefended_attacked_far: f64,
    rows: Vec<VoteRow>,
    secs: f64,
}

impl DefenseSweep {
    fn qualifies(&self, r: &VoteRow) -> bool {
        r.attacked_far <= 0.5 * self.undefended_attacked_far
            && r.genuine_far - self.undefended_genuine.0 < 0.10
            && r.genuine_frr - self.undefended_genuine.1 < 0.10
    }

    /// The σ used to compare against filters: the qualifying σ with the
    /// lowest attacked FAR, else the lowest attacked FAR overall.
    fn best(&self) -> VoteRow {
        let pick = |rows: Vec<VoteRow>| rows.into_iter().min_by(|a, b| a.attacked_far.total_cmp(&b.attacked_far));
        pick(self.rows.iter().copied().filter(|r| self.qualifies(r)).collect())
            .or_else(|| pick(self.rows.clone()))
            .unwrap()
    }
}

/// Voting with K = 50 over the σ sweep, at ε = 5.
fn defense_sweep() -> &'static DefenseSweep {
    static SWEEP: OnceLock<DefenseSweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let ev = evaluator();
        let adv = attacked_at(5.0);
        let start = Instant::now();
        let genuine = ev.rates(&ev.eval_scores(None, &Defense::None).unwrap()).unwrap();
        let undefended_attacked_far = far_on_nontargets(adv, &Defense::None);
        let rows = SIGMA_SWEEP
            .iter()
            .map(|&sigma| {
                let defense = Defense::Vote { sigma, k_votes: 50 };
                let g = ev.rates(&ev.eval_scores(None, &defense).unwrap()).unwrap();
                VoteRow {
                    sigma,
                    genuine_far: g.far,
                    genuine_frr: g.frr,
                    attacked_far: far_on_nontargets(adv, &defense),
                }
            })
            .collect();
        DefenseSweep {
            undefended_genuine: (genuine.far, genuine.frr),
            undefended_attacked_far,
            rows,
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_01_gradient_matches_finite_differences() {
    let _serial = serial();
    let f = fixture();
    let ev = evaluator();
    let start = Instant::now();
    let mut rng = rng_from_seed(derive_seed(SEED, 1, "acceptance"));
    let eval = ev.eval_trials();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let trial = eval[rng.random_range(0..eval.len())];
        let scorer = ev.scorer(&trial);
        let x = &f.corpus.waveforms[trial.test];
        let (_, grad) = scorer.score_with_grad(x).unwrap();
        let coords: Vec<usize> = (0..20).map(|_| rng.random_range(0..x.len())).collect();
        let numeric = finite_diff_partial(|w| scorer.score(w).unwrap(), x, &coords, 1e-6).unwrap();
        for (&i, n) in coords.iter().zip(&numeric) {
            let rel = (grad[i] - n).abs() / n.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 30.0;
    report(1, pass, &format!("max relative error {worst:.2e} over 5 trials × 20 coords in {secs:.1}s"));
    assert!(pass);
}

/// Minimize |FAR − FRR| over every score ± 1e-9, smallest τ on ties. Gaps
/// are compared as exact fractions.
fn brute_force(targets: &[f64], nontargets: &[f64]) -> (f64, f64) {
    let mut candidates: Vec<f64> = targets
        .iter()
        .chain(nontargets)
        .flat_map(|&s| [s - 1e-9, s + 1e-9])
        .collect();
    candidates.sort_by(f64::total_cmp);
    let (n_t, n_n) = (targets.len() as i64, nontargets.len() as i64);
    let mut best: Option<(i64, i64, i64)> = None;
    for tau in candidates {
        let accepted = nontargets.iter().filter(|&&s| s >= tau).count() as i64;
        let rejected = targets.iter().filter(|&&s| s < tau).count() as i64;
        let gap = (accepted * n_t - rejected * n_n).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, accepted, rejected));
        }
    }
    let (_, accepted, rejected) = best.unwrap();
    (accepted as f64 / n_n as f64, rejected as f64 / n_t as f64)
}

#[test]
fn criterion_02_threshold_matches_brute_force_scan() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = rng_from_seed(derive_seed(SEED, 2, "acceptance"));
    let mut mismatches = 0;
    for _ in 0..100 {
        let n_t = rng.random_range(1..=25);
        let n_n = rng.random_range(1..=25);
        // Coarse grid values force ties.
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| f64::from(rng.random_range(-16i32..=16)) / 16.0).collect() };
        let t = draw(n_t);
        let n = draw(n_n);
        let th = calibrate_threshold(&t, &n).unwrap();
        let oracle = brute_force(&t, &n);
        let got = (far(&n, th.tau).unwrap(), frr(&t, th.tau).unwrap());
        if got != oracle || (th.dev_far_at_tau, th.dev_frr_at_tau) != oracle {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 5.0;
    report(2, pass, &format!("{mismatches} mismatches over 100 score lists in {secs:.2}s"));
    assert!(pass);
}

#[test]
fn criterion_03_every_iterate_stays_in_the_ball() {
    let _serial = serial();
    let f = fixture();
    let ev = evaluator();
    let eval = ev.eval_trials();
    let picks = [eval.iter().find(|t| t.is_target).unwrap(), eval.iter().find(|t| !t.is_target).unwrap()];
    let mut variants = vec![
        Knowledge::Limited,
        Knowledge::PerfectVsVoting {
            k_votes: 5,
            sigma: 60.0,
        },
    ];
    variants.extend(FilterSpec::defaults().into_iter().map(Knowledge::PerfectVsFilter));
    let mut worst_excess = f64::NEG_INFINITY;
    let mut iterates = 0;
    let mut zero_exact = true;
    for trial in picks {
        let scorer = ev.scorer(trial);
        let x_t = &f.corpus.waveforms[trial.test];
        for knowledge in &variants {
            for eps in [1.0, 5.0, 10.0] {
                let config = AttackConfig::new(eps, 5).unwrap().with_knowledge(*knowledge).with_seed(7);
                let bound = eps * AMPLITUDE_UNIT + 1e-12;
                let result = attack_with_observer(&scorer, x_t, trial.is_target, &config, |_, x| {
                    let linf = x.iter().zip(x_t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    worst_excess = worst_excess.max(linf - bound);
                    iterates += 1;
                })
                .unwrap();
                assert_eq!(result.forward_backward_count, config.budget());
            }
            let config = AttackConfig::new(0.0, 5).unwrap().with_knowledge(*knowledge).with_seed(7);
            let result = attack_with_observer(&scorer, x_t, trial.is_target, &config, |_, _| {}).unwrap();
            let same_bits = result.x_adv.iter().zip(x_t).all(|(a, b)| a.to_bits() == b.to_bits());
            zero_exact &= same_bits && result.x_adv.len() == x_t.len();
        }
    }
    let pass = worst_excess <= 0.0 && zero_exact;
    report(
        3,
        pass,
        &format!(
            "{iterates} iterates over {} variants, max ‖x−x_t‖∞ − ε bound = {worst_excess:.3e}; ε=0 bit-exact: {zero_exact}",
            variants.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_degenerate_voting_is_undefended_scoring() {
    let _serial = serial();
    let ev = evaluator();
    let raw = ev.eval_scores(None, &Defense::None).unwrap();
    let base = ev.rates(&raw).unwrap();
    let k0 = ev.eval_scores(None, &Defense::Vote { sigma: 30.0, k_votes: 0 }).unwrap();
    let s0 = ev.eval_scores(None, &Defense::Vote { sigma: 0.0, k_votes: 50 }).unwrap();
    let (r_k0, r_s0) = (ev.rates(&k0).unwrap(), ev.rates(&s0).unwrap());
    let pass = r_k0 == base && r_s0 == base && k0 == raw && s0 == raw;
    report(
        4,
        pass,
        &format!(
            "undefended FAR/FRR {:.3}/{:.3}; K=0 {:.3}/{:.3}; σ=0 {:.3}/{:.3} on {} eval trials",
            base.far,
            base.frr,
            r_k0.far,
            r_k0.frr,
            r_s0.far,
            r_s0.frr,
            raw.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_larger_epsilon_hurts_more() {
    let _serial = serial();
    let f = fixture();
    let ev = evaluator();
    let dev_eer = ev.threshold().eer();
    let base = ev.rates(&ev.eval_scores(None, &Defense::None).unwrap()).unwrap();
    let (_, attack_secs) = limited_attacks();
    let rates: Vec<_> = [1.0, 5.0, 10.0]
        .iter()
        .map(|&e| ev.rates(&ev.eval_scores(Some(attacked_at(e)), &Defense::None).unwrap()).unwrap())
        .collect();
    let monotone = rates.windows(2).all(|w| w[1].far >= w[0].far && w[1].frr >= w[0].frr);
    let lift = rates[2].far - base.far;
    let secs = f.setup_secs + attack_secs;
    let pass = dev_eer < 0.10 && monotone && lift >= 0.30 && secs < 600.0;
    report(
        5,
        pass,
        &format!(
            "dev EER {dev_eer:.3}; FAR/FRR none {:.2}/{:.2}, ε=1 {:.2}/{:.2}, ε=5 {:.2}/{:.2}, ε=10 {:.2}/{:.2}; FAR lift {:.0}pp; {secs:.0}s",
            base.far,
            base.frr,
            rates[0].far,
            rates[0].frr,
            rates[1].far,
            rates[1].frr,
            rates[2].far,
            rates[2].frr,
            lift * 100.0
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_voting_halves_attacked_far() {
    let _serial = serial();
    let sweep = defense_sweep();
    let (g_far, g_frr) = sweep.undefended_genuine;
    let table: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| format!("σ={}: genuine {:.2}/{:.2} attacked FAR {:.2}", r.sigma, r.genuine_far, r.genuine_frr, r.attacked_far))
        .collect();
    let winner = sweep.rows.iter().find(|r| sweep.qualifies(r));
    let pass = winner.is_some() && sweep.secs < 900.0;
    report(
        6,
        pass,
        &format!(
            "undefended genuine {g_far:.2}/{g_frr:.2}, attacked FAR {:.2}; {}; qualifying σ: {}; {:.0}s",
            sweep.undefended_attacked_far,
            table.join("; "),
            winner.map_or("none".to_string(), |r| r.sigma.to_string()),
            sweep.secs
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_voting_beats_filters() {
    let _serial = serial();
    let sweep = defense_sweep();
    let best = sweep.best();
    let adv = attacked_at(5.0);
    let filters: Vec<(FilterKind, f64)> = FilterSpec::defaults()
        .iter()
        .map(|spec| (spec.kind, far_on_nontargets(adv, &Defense::Filter(*spec))))
        .collect();
    let pass = filters.iter().all(|(_, fa)| best.attacked_far <= *fa);
    let listed: Vec<String> = filters.iter().map(|(k, fa)| format!("{k} {fa:.2}")).collect();
    report(
        7,
        pass,
        &format!("voting σ={} attacked FAR {:.2}; filters {}", best.sigma, best.attacked_far, listed.join(", ")),
    );
    assert!(pass);
}

#[test]
fn criterion_08_perfect_knowledge_budget_and_saturation() {
    let _serial = serial();
    let f = fixture();
    let ev = evaluator();
    let start = Instant::now();
    let trial = ev.eval_trials().iter().find(|t| !t.is_target).unwrap();
    let vote = VoteConfig::for_trial(60.0, 5, SEED, trial.trial_id).unwrap();
    let config = AttackConfig::new(5.0, 5).unwrap().with_seed(derive_seed(SEED, trial.trial_id as u64, "attack"));
    let result = bim_adaptive_vs_voting(&ev.scorer(trial), &f.corpus.waveforms[trial.test], false, &config, &vote).unwrap();
    let budget = result.forward_backward_count;

    let defense = Defense::Vote { sigma: 60.0, k_votes: 5 };
    let idx = nontarget_indices();
    let trials: Vec<Trial> = idx.iter().map(|&i| ev.eval_trials()[i]).collect();
    let clean = ev.score_trials(&trials, None, &defense).unwrap();
    let no_attack = far(&clean, ev.threshold().tau).unwrap();
    let curve: Vec<(usize, f64)> = [1, 5, 10, 20, 40]
        .iter()
        .map(|&n| {
            let base = AttackConfig::new(5.0, n).unwrap().with_knowledge(KnowledgeLevel::Perfect.against(&defense));
            let adv: Vec<AdversarialResult> = trials
                .par_iter()
                .map(|t| {
                    let c = base.with_seed(derive_seed(SEED, t.trial_id as u64, "attack"));
                    asv_vote_core::attack::run_attack(&ev.scorer(t), &f.corpus.waveforms[t.test], false, &c).unwrap()
                })
                .collect();
            let scores = ev.score_trials(&trials, Some(&adv), &defense).unwrap();
            (n, far(&scores, ev.threshold().tau).unwrap())
        })
        .collect();
    let early = curve[1].1 - curve[0].1;
    let late = curve[4].1 - curve[3].1;
    let pass = budget == 30 && late < early;
    let points: Vec<String> = curve.iter().map(|(n, fa)| format!("N={n}: {fa:.2}")).collect();
    report(
        8,
        pass,
        &format!(
            "K=5,N=5 passes = {budget}; voted FAR no attack {no_attack:.2}, {}; Δ(1→5) {:+.2}, Δ(20→40) {:+.2}; {:.0}s",
            points.join(", "),
            early,
            late,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_evaluate_is_deterministic() {
    let _serial = serial();
    let f = fixture();
    let mut config = f.config.clone();
    config.attack.epsilons = vec![5.0];
    config.defense.sigmas = vec![30.0];
    config.defense.k_votes = vec![5];
    config.defense.filters.retain(|s| s.kind == "median");
    let mut reports = Vec::new();
    for threads in [1, 4, 1] {
        config.threads = threads;
        let out = cmd_evaluate(&config, RunOptions { no_timing: true }).unwrap();
        reports.push(std::fs::read(&out.report).unwrap());
    }
    let pass = reports[0] == reports[1] && reports[0] == reports[2];
    report(
        9,
        pass,
        &format!("3 runs (threads 1, 4, 1), {} bytes each, identical: {pass}", reports[0].len()),
    );
    assert!(pass);
}

#[test]
fn criterion_10_filter_hand_examples() {
    let _serial = serial();
    let mean = apply_filter(&[0.0, 3.0, 6.0], &FilterSpec::default_for(FilterKind::Mean)).unwrap();
    let median = apply_filter(&[1.0, 9.0, 1.0], &FilterSpec::default_for(FilterKind::Median)).unwrap();
    let constant = vec![0.3; 16];
    let gaussian = apply_filter(&constant, &FilterSpec::default_for(FilterKind::Gaussian)).unwrap();
    let pass = mean == [1.0, 3.0, 5.0] && median == [1.0, 1.0, 1.0] && gaussian == constant;
    report(
        10,
        pass,
        &format!("mean {mean:?}, median {median:?}, gaussian on constant 0.3 exact: {}", gaussian == constant),
    );
    assert!(pass);
}
