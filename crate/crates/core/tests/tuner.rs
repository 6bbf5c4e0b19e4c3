use std::sync::Mutex;

use pbpm_core::hypermodel::{HyperParams, TuneObjective};
use pbpm_core::tuner::*;
use pbpm_core::vectorize::Variant;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scores are fixed per trial id; optionally some trials fail.
struct Scripted {
    scores: Vec<f64>,
    fail: Vec<usize>,
    calls: Mutex<Vec<(usize, usize)>>,
}

impl Scripted {
    fn new(scores: Vec<f64>) -> Self {
        Self {
            scores,
            fail: Vec::new(),
            calls: Mutex::new(Vec::new()),
        }
    }
}

impl TrialRunner for Scripted {
    type State = (usize, usize);

    fn start(&self, id: usize, _hp: &HyperParams) -> pbpm_core::Result<(usize, usize)> {
        Ok((id, 0))
    }

    fn advance(&self, state: &mut (usize, usize), budget: usize) -> pbpm_core::Result<TrialOutcome> {
        assert!(budget > state.1, "budgets must grow");
        self.calls.lock().unwrap().push((state.0, budget - state.1));
        state.1 = budget;
        let s = self.scores[state.0 % self.scores.len()];
        Ok(TrialOutcome {
            objective: if self.fail.contains(&state.0) { f64::NEG_INFINITY } else { s + budget as f64 * 1e-6 },
            failed: self.fail.contains(&state.0),
        })
    }
}

#[test]
fn canonical_schedule() {
    let b = hyperband_schedule(81, 3).unwrap();
    let nr: Vec<(usize, usize)> = b.iter().map(|b| (b.n, b.r)).collect();
    assert_eq!(nr, vec![(81, 1), (27, 3), (9, 9), (6, 27), (5, 81)]);
    assert_eq!(b[0].rung_budgets, vec![1, 3, 9, 27, 81]);
    let b = hyperband_schedule(300, 3).unwrap();
    assert_eq!(b[0].s, 5);
    assert_eq!(b.len(), 6);
}

#[test]
fn halving_keeps_the_top_third() {
    let runner = Scripted::new((0..9).map(|i| i as f64).collect());
    let configs: Vec<_> = (0..9).map(|i| (i, HyperParams::simple(Variant::B, 16, 16, 1e-3, 16))).collect();
    let rep = successive_halving(&runner, configs, &[1, 3], 3, 1, None).unwrap();
    assert_eq!(rep.survivors, vec![vec![6, 7, 8], vec![8]]);
    let pruned = rep.records.iter().filter(|r| r.status == TrialStatus::Pruned).count();
    assert_eq!(pruned, 6);
    // resumed training: survivors only pay the increment
    let calls = runner.calls.lock().unwrap();
    assert!(calls.iter().filter(|c| c.0 == 8).map(|c| c.1).eq([1, 2]));
}

#[test]
fn failures_never_survive() {
    let mut runner = Scripted::new(vec![1.0; 9]);
    runner.fail = (0..9).collect();
    let configs: Vec<_> = (0..9).map(|i| (i, HyperParams::simple(Variant::B, 16, 16, 1e-3, 16))).collect();
    let rep = successive_halving(&runner, configs, &[1, 3], 3, 1, None).unwrap();
    assert_eq!(rep.survivors, vec![Vec::<usize>::new()]);
    assert!(rep.records.iter().all(|r| r.status == TrialStatus::Failed && r.objective.is_none()));
}

#[test]
fn ties_break_by_lower_id() {
    let runner = Scripted::new(vec![0.5; 9]);
    let configs: Vec<_> = (0..9).map(|i| (i, HyperParams::simple(Variant::B, 16, 16, 1e-3, 16))).collect();
    let rep = successive_halving(&runner, configs, &[1], 3, 0, None).unwrap();
    assert_eq!(rep.survivors, vec![vec![0, 1, 2]]);
}

#[test]
fn hyperband_is_independent_of_worker_count() {
    let space = SearchSpace::desk();
    let scores: Vec<f64> = (0..97).map(|i| ((i * 37) % 97) as f64 / 97.0).collect();
    let run = |workers| {
        let runner = Scripted::new(scores.clone());
        let cfg = HyperbandConfig {
            max_resource: 27,
            eta: 3,
            seed: 5,
            workers,
            max_trials: None,
        };
        let res = hyperband(&space, Variant::D, &runner, &cfg).unwrap();
        (res.trial_log(), res.best.map(|b| (b.trial_id, b.objective)))
    };
    let (log1, best1) = run(1);
    let (log3, best3) = run(3);
    assert_eq!(log1, log3);
    assert_eq!(best1, best3);

    let records = parse_trial_log(&log1).unwrap();
    let best = best1.unwrap();
    let max = records.iter().filter_map(|r| r.objective).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.1, max);
    let bound = (s_max(27, 3) + 1) * 27;
    for (bracket, total) in bracket_epoch_totals(&records) {
        assert!(total <= bound, "bracket {bracket}: {total} > {bound}");
    }
}

#[test]
fn max_trials_truncates_brackets_in_order() {
    let runner = Scripted::new(vec![0.1, 0.2, 0.3]);
    let cfg = HyperbandConfig {
        max_resource: 30,
        eta: 3,
        seed: 1,
        workers: 1,
        max_trials: Some(30),
    };
    let res = hyperband(&SearchSpace::desk(), Variant::B, &runner, &cfg).unwrap();
    assert_eq!(res.n_trials, 30);
    let rung0 = |b| res.records.iter().filter(|r| r.bracket == b && r.rung == 0 && r.status != TrialStatus::Pruned).count();
    assert_eq!(rung0(3), 27);
    assert_eq!(rung0(2), 3);
    assert_eq!(rung0(1), 0);
}

#[test]
fn samples_stay_inside_the_published_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for space in [SearchSpace::full(), SearchSpace::desk()] {
        for variant in Variant::ALL {
            for _ in 0..50 {
                let hp = sample_config(&space, variant, &mut rng);
                hp.check_structure(variant).unwrap();
                let v = hp.search_space_violations(variant);
                assert!(v.is_empty(), "{variant}: {v:?}");
            }
        }
    }
}

#[test]
fn objective_must_suit_the_data() {
    let balanced = [0, 1, 2, 0, 1, 2];
    let skewed = [0, 0, 0, 0, 1, 1, 2];
    assert!(check_objective(TuneObjective::Accuracy, &balanced, 3).is_ok());
    assert!(check_objective(TuneObjective::WeightedF1, &balanced, 3).is_err());
    assert!(check_objective(TuneObjective::WeightedF1, &skewed, 3).is_ok());
    assert!(check_objective(TuneObjective::Accuracy, &skewed, 3).is_err());
}
