//! Hyperband over the hyperparameter search space, with successive halving
//! inside each bracket and resumed (not restarted) training across rungs.
//!
//! Trials are independent and may run on a worker pool; results are always
//! collected in trial-id order, so the worker count never changes the log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pbpm_nn::{Activation, LrSchedule, OptimizerKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::hypermodel::{
    build_model, required_stacks, BatchNormSpec, DenseLayerSpec, HyperParams, LstmLayerSpec, TrainConfig, Trainer,
    TuneObjective,
};
use crate::vectorize::{EncodedDataset, Variant};

/// Inclusive integer grid `lo, lo + step, ..., hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: usize,
    pub hi: usize,
    pub step: usize,
}

impl Grid {
    pub const fn new(lo: usize, hi: usize, step: usize) -> Self {
        Self { lo, hi, step }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let n = (self.hi - self.lo) / self.step;
        self.lo + self.step * rng.gen_range(0..=n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationChoice {
    Relu,
    Tanh,
    Softmax,
    LeakyRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleChoice {
    Exponential,
    InverseTime,
    PiecewiseConstant,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
    RmsProp,
}

/// Samplers for every [`HyperParams`] field. Real ranges are `(lo, hi)`;
/// L2, epsilons and the learning rate are drawn log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lstm_layers: Grid,
    pub lstm_units: Grid,
    pub dense_layers: Grid,
    pub dense_units: Grid,
    pub l2: (f64, f64),
    pub bn_momentum: (f64, f64),
    pub bn_epsilon: (f64, f64),
    pub dropout: (f64, f64),
    pub activations: Vec<ActivationChoice>,
    pub leaky_alpha: (f64, f64),
    pub schedules: Vec<ScheduleChoice>,
    pub initial_lr: (f64, f64),
    pub optimizers: Vec<OptimizerChoice>,
    pub adam_beta1: (f64, f64),
    pub adam_beta2: (f64, f64),
    pub sgd_momentum: (f64, f64),
    pub rms_rho: (f64, f64),
    pub rms_momentum: (f64, f64),
    pub rms_epsilon: (f64, f64),
    pub embedding_dim: Grid,
    pub batch_sizes: Vec<usize>,
}

impl SearchSpace {
    /// The full published tuning ranges.
    pub fn full() -> Self {
        Self {
            lstm_layers: Grid::new(1, 3, 1),
            lstm_units: Grid::new(16, 512, 16),
            dense_layers: Grid::new(1, 3, 1),
            dense_units: Grid::new(16, 256, 16),
            l2: (1e-5, 1e-2),
            bn_momentum: (0.01, 0.999),
            bn_epsilon: (1e-5, 1e-2),
            dropout: (0.2, 0.7),
            activations: vec![
                ActivationChoice::Relu,
                ActivationChoice::Tanh,
                ActivationChoice::Softmax,
                ActivationChoice::LeakyRelu,
            ],
            leaky_alpha: (0.01, 0.3),
            schedules: vec![
                ScheduleChoice::Exponential,
                ScheduleChoice::InverseTime,
                ScheduleChoice::PiecewiseConstant,
                ScheduleChoice::Polynomial,
            ],
            initial_lr: (1e-4, 1e-2),
            optimizers: vec![OptimizerChoice::Adam, OptimizerChoice::Sgd, OptimizerChoice::RmsProp],
            adam_beta1: (0.85, 0.99),
            adam_beta2: (0.99, 0.999),
            sgd_momentum: (0.0, 0.9),
            rms_rho: (0.9, 0.999),
            rms_momentum: (0.01, 0.9),
            rms_epsilon: (1e-10, 1e-6),
            embedding_dim: Grid::new(10, 250, 10),
            batch_sizes: vec![16, 31, 64, 128],
        }
    }

    /// Same choices with narrower widths and depths, for single-core runs.
    /// Every sample is still inside the published ranges.
    pub fn desk() -> Self {
        Self {
            lstm_layers: Grid::new(1, 2, 1),
            lstm_units: Grid::new(16, 64, 16),
            dense_layers: Grid::new(1, 2, 1),
            dense_units: Grid::new(16, 64, 16),
            embedding_dim: Grid::new(10, 40, 10),
            ..Self::full()
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    uniform(rng, (lo.ln(), hi.ln())).exp().clamp(lo, hi)
}

fn pick<T: Copy, R: Rng>(rng: &mut R, items: &[T]) -> T {
    *items.choose(rng).expect("search space choices are non-empty")
}

fn sample_stack<R: Rng>(space: &SearchSpace, rng: &mut R) -> Vec<LstmLayerSpec> {
    (0..space.lstm_layers.sample(rng))
        .map(|_| LstmLayerSpec {
            units: space.lstm_units.sample(rng),
            l2: log_uniform(rng, space.l2),
            batchnorm: rng.gen_bool(0.5).then(|| BatchNormSpec {
                momentum: uniform(rng, space.bn_momentum),
                epsilon: log_uniform(rng, space.bn_epsilon),
            }),
            dropout: rng.gen_bool(0.5).then(|| uniform(rng, space.dropout)),
        })
        .collect()
}

/// Decay parameters the published table leaves open are fixed here:
/// exponential rate U[0.5, 0.99] every {100, 1000, 10000} steps; inverse-time
/// rate U[0.1, 1] on the same step choices; piecewise drops to 0.5x and 0.1x
/// at steps 1000 and 5000; polynomial decays to 1% over 10000 steps with
/// power U[0.5, 2].
fn sample_schedule<R: Rng>(space: &SearchSpace, rng: &mut R) -> LrSchedule {
    let lr = log_uniform(rng, space.initial_lr);
    match pick(rng, &space.schedules) {
        ScheduleChoice::Exponential => LrSchedule::Exponential {
            initial_lr: lr,
            decay_rate: uniform(rng, (0.5, 0.99)),
            decay_steps: pick(rng, &[100.0, 1000.0, 10_000.0]),
        },
        ScheduleChoice::InverseTime => LrSchedule::InverseTime {
            initial_lr: lr,
            decay_rate: uniform(rng, (0.1, 1.0)),
            decay_steps: pick(rng, &[100.0, 1000.0, 10_000.0]),
        },
        ScheduleChoice::PiecewiseConstant => LrSchedule::PiecewiseConstant {
            boundaries: vec![1000, 5000],
            values: vec![lr, lr * 0.5, lr * 0.1],
        },
        ScheduleChoice::Polynomial => LrSchedule::Polynomial {
            initial_lr: lr,
            end_lr: lr * 0.01,
            power: uniform(rng, (0.5, 2.0)),
            total_steps: 10_000.0,
        },
    }
}

/// Draws one configuration for `variant` (only the stacks it uses).
pub fn sample_config<R: Rng>(space: &SearchSpace, variant: Variant, rng: &mut R) -> HyperParams {
    let mut hp = HyperParams {
        event_stack: Vec::new(),
        bin_stack: Vec::new(),
        cor_stack: Vec::new(),
        text_stack: Vec::new(),
        fusion_stack: Vec::new(),
        dense: Vec::new(),
        schedule: LrSchedule::constant(1e-3),
        optimizer: OptimizerKind::adam(0.9, 0.999),
        verb_dim: 0,
        desc_dim: 0,
        batch_size: 0,
    };
    for role in required_stacks(variant) {
        *hp.stack_mut(role) = sample_stack(space, rng);
    }
    hp.dense = (0..space.dense_layers.sample(rng))
        .map(|_| DenseLayerSpec {
            units: space.dense_units.sample(rng),
            l2: log_uniform(rng, space.l2),
            dropout: rng.gen_bool(0.5).then(|| uniform(rng, space.dropout)),
            activation: match pick(rng, &space.activations) {
                ActivationChoice::Relu => Activation::Relu,
                ActivationChoice::Tanh => Activation::Tanh,
                ActivationChoice::Softmax => Activation::Softmax,
                ActivationChoice::LeakyRelu => Activation::LeakyRelu {
                    alpha: uniform(rng, space.leaky_alpha),
                },
            },
        })
        .collect();
    hp.schedule = sample_schedule(space, rng);
    hp.optimizer = match pick(rng, &space.optimizers) {
        OptimizerChoice::Adam => OptimizerKind::adam(uniform(rng, space.adam_beta1), uniform(rng, space.adam_beta2)),
        OptimizerChoice::Sgd => OptimizerKind::Sgd {
            momentum: uniform(rng, space.sgd_momentum),
        },
        OptimizerChoice::RmsProp => OptimizerKind::RmsProp {
            rho: uniform(rng, space.rms_rho),
            momentum: uniform(rng, space.rms_momentum),
            epsilon: log_uniform(rng, space.rms_epsilon),
        },
    };
    if variant.needs_text() {
        hp.verb_dim = space.embedding_dim.sample(rng);
        hp.desc_dim = space.embedding_dim.sample(rng);
    }
    hp.batch_size = pick(rng, &space.batch_sizes);
    hp
}

/// Largest `s` with `eta^s <= r`, in exact integer arithmetic.
pub fn s_max(r: usize, eta: usize) -> usize {
    let mut s = 0;
    let mut p = eta;
    while p <= r {
        s += 1;
        p = match p.checked_mul(eta) {
            Some(v) => v,
            None => break,
        };
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    /// Configurations sampled for the bracket.
    pub n: usize,
    /// Initial per-configuration budget in epochs.
    pub r: usize,
    /// Cumulative epoch budget at each rung.
    pub rung_budgets: Vec<usize>,
}

fn pow(eta: usize, e: usize) -> usize {
    eta.pow(e as u32)
}

/// Brackets `s = s_max..0` with `n = floor((s_max + 1) / (s + 1)) * eta^s`
/// configurations and rung budgets `ceil(R * eta^(i - s))`.
pub fn hyperband_schedule(r: usize, eta: usize) -> Result<Vec<Bracket>> {
    if r < 1 || eta < 2 {
        return Err(CoreError::Config(format!("hyperband needs R >= 1 and eta >= 2, got R={r}, eta={eta}")));
    }
    let top = s_max(r, eta);
    Ok((0..=top)
        .rev()
        .map(|s| {
            let rung_budgets: Vec<usize> = (0..=s).map(|i| r.div_ceil(pow(eta, s - i)).max(1)).collect();
            Bracket {
                s,
                n: (top + 1) / (s + 1) * pow(eta, s),
                r: rung_budgets[0],
                rung_budgets,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Completed,
    Failed,
    Pruned,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Completed => "completed",
            TrialStatus::Failed => "failed",
            TrialStatus::Pruned => "pruned",
        }
    }
}

/// One trial-log row. `objective` is present exactly for completed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub bracket: usize,
    pub rung: usize,
    /// Cumulative epochs granted so far.
    pub budget: usize,
    pub hp_digest: String,
    pub objective: Option<f64>,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub objective: f64,
    pub failed: bool,
}

/// Trains one configuration; `advance` must be resumable.
pub trait TrialRunner: Sync {
    type State: Send;

    fn start(&self, trial_id: usize, hp: &HyperParams) -> Result<Self::State>;

    /// Continues training until `budget` cumulative epochs.
    fn advance(&self, state: &mut Self::State, budget: usize) -> Result<TrialOutcome>;
}

pub struct Trial<S> {
    pub id: usize,
    pub hp: HyperParams,
    pub state: S,
    pub outcome: Option<TrialOutcome>,
}

pub struct HalvingReport<S> {
    /// Trial ids alive after each rung's selection.
    pub survivors: Vec<Vec<usize>>,
    pub records: Vec<TrialRecord>,
    pub trials: Vec<Trial<S>>,
}

fn run_parallel<R: TrialRunner>(
    runner: &R,
    trials: &mut [&mut Trial<R::State>],
    budget: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<()> {
    let work = |t: &mut &mut Trial<R::State>| -> Result<()> {
        t.outcome = Some(runner.advance(&mut t.state, budget)?);
        Ok(())
    };
    match pool {
        Some(p) => p.install(|| trials.par_iter_mut().map(work).collect::<Result<Vec<()>>>())?,
        None => trials.iter_mut().map(work).collect::<Result<Vec<()>>>()?,
    };
    Ok(())
}

/// Ranks completed trials by objective (descending), ties by lower id.
fn select(trials: &[&mut Trial<impl Send>], keep: usize) -> Vec<usize> {
    let mut done: Vec<(f64, usize)> = trials
        .iter()
        .filter_map(|t| t.outcome.filter(|o| !o.failed).map(|o| (o.objective, t.id)))
        .collect();
    done.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    done.into_iter().take(keep).map(|(_, id)| id).collect()
}

/// Runs the rungs of one bracket. After each rung the best
/// `max(1, floor(n / eta))` completed trials go on; failures never do.
pub fn successive_halving<R: TrialRunner>(
    runner: &R,
    configs: Vec<(usize, HyperParams)>,
    rung_budgets: &[usize],
    eta: usize,
    bracket: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<HalvingReport<R::State>> {
    let mut trials = Vec::with_capacity(configs.len());
    for (id, hp) in configs {
        let state = runner.start(id, &hp)?;
        trials.push(Trial {
            id,
            hp,
            state,
            outcome: None,
        });
    }
    let mut alive: Vec<usize> = trials.iter().map(|t| t.id).collect();
    let mut survivors = Vec::new();
    let mut records = Vec::new();
    for (rung, &budget) in rung_budgets.iter().enumerate() {
        if alive.is_empty() {
            break;
        }
        let mut active: Vec<&mut Trial<R::State>> = trials.iter_mut().filter(|t| alive.contains(&t.id)).collect();
        run_parallel(runner, &mut active, budget, pool)?;
        for t in &active {
            let o = t.outcome.expect("just evaluated");
            records.push(TrialRecord {
                trial_id: t.id,
                bracket,
                rung,
                budget,
                hp_digest: t.hp.digest(),
                objective: (!o.failed).then_some(o.objective),
                status: if o.failed { TrialStatus::Failed } else { TrialStatus::Completed },
            });
        }
        let keep = (active.len() / eta).max(1);
        let next = select(&active, keep);
        if rung + 1 < rung_budgets.len() {
            for t in &active {
                if !next.contains(&t.id) && !t.outcome.is_some_and(|o| o.failed) {
                    records.push(TrialRecord {
                        trial_id: t.id,
                        bracket,
                        rung: rung + 1,
                        budget,
                        hp_digest: t.hp.digest(),
                        objective: None,
                        status: TrialStatus::Pruned,
                    });
                }
            }
        }
        alive = next.clone();
        alive.sort_unstable();
        survivors.push(alive.clone());
    }
    Ok(HalvingReport {
        survivors,
        records,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbandConfig {
    /// Maximum epochs per configuration.
    pub max_resource: usize,
    pub eta: usize,
    pub seed: u64,
    pub workers: usize,
    /// Cap on sampled configurations; brackets are truncated in order.
    pub max_trials: Option<usize>,
}

pub struct BestTrial<S> {
    pub trial_id: usize,
    pub hp: HyperParams,
    pub objective: f64,
    pub state: S,
}

pub struct HyperbandResult<S> {
    pub records: Vec<TrialRecord>,
    pub schedule: Vec<Bracket>,
    pub best: Option<BestTrial<S>>,
    pub n_trials: usize,
}

impl<S> HyperbandResult<S> {
    pub fn trial_log(&self) -> String {
        trial_log_tsv(&self.records)
    }
}

pub fn hyperband<R: TrialRunner>(
    space: &SearchSpace,
    variant: Variant,
    runner: &R,
    cfg: &HyperbandConfig,
) -> Result<HyperbandResult<R::State>> {
    let schedule = hyperband_schedule(cfg.max_resource, cfg.eta)?;
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| CoreError::Config(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next_id = 0;
    let mut remaining = cfg.max_trials.unwrap_or(usize::MAX);
    let mut records = Vec::new();
    let mut best: Option<BestTrial<R::State>> = None;
    for bracket in &schedule {
        let n = bracket.n.min(remaining);
        if n == 0 {
            break;
        }
        remaining -= n;
        let configs: Vec<(usize, HyperParams)> = (0..n)
            .map(|_| {
                next_id += 1;
                (next_id - 1, sample_config(space, variant, &mut rng))
            })
            .collect();
        log::info!("bracket s={}: {n} configs, rung budgets {:?}", bracket.s, bracket.rung_budgets);
        let report = successive_halving(runner, configs, &bracket.rung_budgets, cfg.eta, bracket.s, pool.as_ref())?;
        records.extend(report.records);
        for t in report.trials {
            let Some(o) = t.outcome.filter(|o| !o.failed) else {
                continue;
            };
            if best.as_ref().is_none_or(|b| o.objective > b.objective) {
                best = Some(BestTrial {
                    trial_id: t.id,
                    hp: t.hp,
                    objective: o.objective,
                    state: t.state,
                });
            }
        }
    }
    Ok(HyperbandResult {
        records,
        schedule,
        best,
        n_trials: next_id,
    })
}

pub const TRIAL_LOG_HEADER: &str = "trial_id\tbracket\trung\tbudget\thp_digest\tobjective\tstatus";

pub fn trial_log_tsv(records: &[TrialRecord]) -> String {
    let mut out = String::from(TRIAL_LOG_HEADER);
    out.push('\n');
    for r in records {
        let obj = r.objective.map_or(String::new(), |o| o.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.trial_id,
            r.bracket,
            r.rung,
            r.budget,
            r.hp_digest,
            obj,
            r.status.as_str()
        );
    }
    out
}

pub fn parse_trial_log(text: &str) -> Result<Vec<TrialRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRIAL_LOG_HEADER) {
        return Err(CoreError::Format("trial log header mismatch".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || CoreError::Format(format!("trial log line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
            Ok(TrialRecord {
                trial_id: num(f[0])?,
                bracket: num(f[1])?,
                rung: num(f[2])?,
                budget: num(f[3])?,
                hp_digest: f[4].to_string(),
                objective: if f[5].is_empty() {
                    None
                } else {
                    Some(f[5].parse().map_err(|_| bad())?)
                },
                status: match f[6] {
                    "completed" => TrialStatus::Completed,
                    "failed" => TrialStatus::Failed,
                    "pruned" => TrialStatus::Pruned,
                    _ => return Err(bad()),
                },
            })
        })
        .collect()
}

/// Epochs each bracket actually granted: per trial, the highest budget it
/// was trained to (training resumes across rungs), summed per bracket.
pub fn bracket_epoch_totals(records: &[TrialRecord]) -> BTreeMap<usize, usize> {
    let mut per_trial: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status != TrialStatus::Pruned) {
        let e = per_trial.entry((r.bracket, r.trial_id)).or_default();
        *e = (*e).max(r.budget);
    }
    let mut out = BTreeMap::new();
    for ((bracket, _), b) in per_trial {
        *out.entry(bracket).or_default() += b;
    }
    out
}

/// Rejects an objective that does not suit the label balance of the data.
pub fn check_objective(objective: TuneObjective, labels: &[usize], n_classes: usize) -> Result<()> {
    let expected = TuneObjective::for_labels(labels, n_classes);
    if objective == expected {
        Ok(())
    } else {
        Err(CoreError::Config(format!(
            "objective {} does not match the dataset, whose class balance calls for {}",
            objective.name(),
            expected.name()
        )))
    }
}

/// Runs trials as real training jobs; trial `i` uses seed `base_seed + i`.
pub struct ModelTrialRunner<'a> {
    pub variant: Variant,
    pub train: &'a EncodedDataset,
    pub val: &'a EncodedDataset,
    pub config: TrainConfig,
}

impl TrialRunner for ModelTrialRunner<'_> {
    type State = Trainer;

    fn start(&self, trial_id: usize, hp: &HyperParams) -> Result<Trainer> {
        let seed = self.config.seed.wrapping_add(trial_id as u64);
        let model = build_model(self.variant, hp, &self.train.meta, seed)?;
        let cfg = TrainConfig {
            seed,
            ..self.config.clone()
        };
        Ok(Trainer::new(model, cfg, self.train))
    }

    fn advance(&self, state: &mut Trainer, budget: usize) -> Result<TrialOutcome> {
        let need = budget.saturating_sub(state.epochs_done());
        state.train_epochs(self.train, self.val, need)?;
        let run = state.run();
        Ok(TrialOutcome {
            objective: run.objective(),
            failed: run.failed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_max_values() {
        assert_eq!(s_max(81, 3), 4);
        assert_eq!(s_max(300, 3), 5);
        assert_eq!(s_max(1, 3), 0);
        assert_eq!(s_max(30, 3), 3);
        assert_eq!(s_max(243, 3), 5);
    }

    #[test]
    fn single_bracket_for_unit_resource() {
        let b = hyperband_schedule(1, 3).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].n, b[0].r), (1, 1));
        assert!(hyperband_schedule(0, 3).is_err());
        assert!(hyperband_schedule(9, 1).is_err());
    }

    #[test]
    fn trial_log_round_trip() {
        let rows = vec![
            TrialRecord {
                trial_id: 0,
                bracket: 2,
                rung: 0,
                budget: 3,
                hp_digest: "00ff".into(),
                objective: Some(0.5),
                status: TrialStatus::Completed,
            },
            TrialRecord {
                trial_id: 1,
                bracket: 2,
                rung: 0,
                budget: 3,
                hp_digest: "0a0b".into(),
                objective: None,
                status: TrialStatus::Failed,
            },
        ];
        assert_eq!(parse_trial_log(&trial_log_tsv(&rows)).unwrap(), rows);
    }
}
