//! Seeded synthetic event logs shaped like the Patients and BPIC12-O data.
//!
//! Patients-like: five imbalanced classes. Classes 0 and 1 follow the same
//! activity template and differ only in how long "Check Medical History"
//! takes (under five minutes vs. a quarter hour or more), so only models with
//! a duration channel can separate them. Classes 2-4 are marked by activities
//! and attribute values.
//!
//! BPIC-like: three balanced classes. Every case opens with a zero-duration
//! SELECTED/CREATED/SENT block and closes with a class-specific block; the
//! middle is class-independent filler.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_log::{log_stats, AttributeSpec, Case, Event, EventLog, Kind, Schema, Universality};

const EPOCH_2020: i64 = 1_577_836_800;
const MINUTE: i64 = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_cases: usize,
    pub priors: Vec<f64>,
    pub min_length: usize,
    pub max_length: usize,
    /// Lower median of the case lengths.
    pub median_length: usize,
    /// Chance that a filler event starts together with its predecessor.
    pub simultaneity_rate: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn patients_like(seed: u64) -> Self {
        Self {
            n_cases: 2140,
            priors: vec![0.4074, 0.22, 0.0112, 0.11, 0.2514],
            min_length: 4,
            max_length: 9,
            median_length: 7,
            simultaneity_rate: 0.0,
            seed,
        }
    }

    pub fn bpic_like(seed: u64) -> Self {
        Self {
            n_cases: 2406,
            priors: vec![1.0 / 3.0; 3],
            min_length: 4,
            max_length: 30,
            median_length: 5,
            simultaneity_rate: 0.15,
            seed,
        }
    }

    fn validate(&self, n_classes: usize, shortest_template: usize) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.priors.len() != n_classes {
            return bad(format!("expected {n_classes} class priors, got {}", self.priors.len()));
        }
        if self.priors.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return bad("class priors must be positive".into());
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return bad(format!("class priors sum to {total}, not 1"));
        }
        if !(self.min_length <= self.median_length && self.median_length <= self.max_length) {
            return bad("lengths must satisfy min <= median <= max".into());
        }
        if self.min_length < shortest_template {
            return bad(format!("minimum length {} is below the shortest template ({shortest_template})", self.min_length));
        }
        if !(0.0..=1.0).contains(&self.simultaneity_rate) {
            return bad("simultaneity rate must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` cases to classes.
pub fn class_counts(priors: &[f64], n: usize) -> Result<Vec<usize>> {
    let raw: Vec<f64> = priors.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..priors.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(CoreError::Config(format!(
            "class {c} rounds to zero cases; raise n_cases or its prior"
        )));
    }
    Ok(counts)
}

/// Case lengths within `[min, max]` whose minimum, maximum and lower median
/// hit the configured values exactly. `floors[i]` is the shortest length case
/// `i` can take.
fn fit_lengths(floors: &[usize], cfg: &GenConfig, draw: &mut dyn FnMut(&mut ChaCha8Rng) -> usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let n = floors.len();
    let (lo, hi, med) = (cfg.min_length, cfg.max_length, cfg.median_length);
    let mut len: Vec<usize> = floors.iter().map(|&f| draw(rng).clamp(f.max(lo), hi)).collect();
    if n == 0 {
        return Ok(len);
    }
    let pinned_min = floors
        .iter()
        .position(|&f| f <= lo)
        .ok_or_else(|| CoreError::Config(format!("no class template fits in {lo} events")))?;
    len[pinned_min] = lo;
    let pinned_max = if n > 1 { (0..n).find(|&i| i != pinned_min).expect("n > 1") } else { pinned_min };
    if n > 1 || lo == hi {
        len[pinned_max] = hi;
    }
    let m = (n - 1) / 2;
    let free = |i: usize| i != pinned_min && i != pinned_max;
    // too many short cases: lift some to the median
    let mut below: Vec<usize> = (0..n).filter(|&i| len[i] < med && free(i)).collect();
    let fixed_below = usize::from(lo < med) * usize::from(len[pinned_min] < med);
    while below.len() + fixed_below > m {
        let i = below.pop().expect("non-empty");
        len[i] = med;
    }
    // too few at or under the median: lower some long cases to it
    let at_most = (0..n).filter(|&i| len[i] <= med).count();
    if at_most < m + 1 {
        let mut need = m + 1 - at_most;
        for i in 0..n {
            if need == 0 {
                break;
            }
            if free(i) && len[i] > med && floors[i] <= med {
                len[i] = med;
                need -= 1;
            }
        }
        if need > 0 {
            return Err(CoreError::Config("median length is infeasible for the class templates".into()));
        }
    }
    Ok(len)
}

struct Builder {
    clock: i64,
    n_cat: usize,
    n_num: usize,
}

impl Builder {
    fn push(
        &mut self,
        events: &mut Vec<Event>,
        activity: &str,
        simultaneous: bool,
        duration: i64,
        gap: i64,
        categorical: Vec<Option<String>>,
        numeric: Vec<Option<f64>>,
    ) {
        debug_assert_eq!((categorical.len(), numeric.len()), (self.n_cat, self.n_num));
        let start = match events.last() {
            Some(prev) if simultaneous => prev.start,
            Some(_) => self.clock + gap,
            None => self.clock,
        };
        let end = start + duration;
        self.clock = self.clock.max(end);
        events.push(Event {
            activity: activity.to_string(),
            label: None,
            start,
            end,
            duration,
            categorical,
            numeric,
        });
    }
}

pub fn patients_schema() -> Schema {
    use Kind::*;
    use Universality::*;
    let mut schema = Schema::new(vec![
        AttributeSpec::event("department", Categorical, Universal),
        AttributeSpec::event("priority", Categorical, Specific),
        AttributeSpec::event("staff_on_duty", Numerical, Universal),
        AttributeSpec::event("severity", Numerical, Universal),
        AttributeSpec::event("cost", Numerical, Specific),
        AttributeSpec::sequence("age", Numerical),
        AttributeSpec::sequence("bmi", Numerical),
        AttributeSpec::sequence("income", Numerical),
        AttributeSpec::sequence("sex", Categorical),
    ])
    .expect("static schema is valid");
    schema.outcome_labels = (0..5).map(|c| c.to_string()).collect();
    schema
}

const PATIENT_FILLERS: [&str; 3] = ["Basic Check", "Check Insurance History", "Initiate Low Application Check"];

/// Core activities per class; fillers go between the second and the
/// second-to-last entries.
fn patient_template(class: usize) -> &'static [&'static str] {
    match class {
        0 | 1 => &["Registration", "Check Medical History", "Send Notification", "Archive"],
        2 => &["Registration", "Check Hospital Records", "Initiate High Application Check", "Archive"],
        3 => &["Registration", "Receive Questionnaire", "Check Medical History", "Archive"],
        _ => &["Registration", "Initiate High Application Check", "Send Notification", "Archive"],
    }
}

/// Patients-like log (see the module docs for the class rules).
pub fn generate_patients_like(cfg: &GenConfig) -> Result<EventLog> {
    cfg.validate(5, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let counts = class_counts(&cfg.priors, cfg.n_cases)?;
    let mut classes: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    classes.shuffle(&mut rng);
    let floors: Vec<usize> = classes.iter().map(|&c| patient_template(c).len()).collect();
    let spread = (cfg.max_length - cfg.min_length) as f64 / 2.0;
    let target = cfg.median_length as f64;
    // triangular around the median
    let mut draw = |r: &mut ChaCha8Rng| {
        let v: f64 = target + (r.gen::<f64>() + r.gen::<f64>() - 1.0) * spread;
        v.round().max(0.0) as usize
    };
    let lengths = fit_lengths(&floors, cfg, &mut draw, &mut rng)?;

    let schema = patients_schema();
    let departments = ["ward_a", "ward_b", "ward_c"];
    let priorities = ["low", "medium", "high"];
    let mut cases = Vec::with_capacity(cfg.n_cases);
    for (i, (&class, &len)) in classes.iter().zip(&lengths).enumerate() {
        let template = patient_template(class);
        let mut names: Vec<&str> = template[..2].to_vec();
        for _ in 0..len - template.len() {
            names.push(PATIENT_FILLERS[rng.gen_range(0..PATIENT_FILLERS.len())]);
        }
        names.extend_from_slice(&template[2..]);
        let mut b = Builder {
            clock: EPOCH_2020 + i as i64 * 4 * 3600 + rng.gen_range(0..3600),
            n_cat: 2,
            n_num: 3,
        };
        let mut events = Vec::with_capacity(len);
        for (k, &name) in names.iter().enumerate() {
            let is_check = name.contains("Check") || name.starts_with("Initiate");
            let duration = if name == "Check Medical History" && class <= 1 {
                if class == 0 {
                    rng.gen_range(1..=4) * MINUTE
                } else {
                    rng.gen_range(15..=60) * MINUTE
                }
            } else {
                rng.gen_range(1..=60) * MINUTE
            };
            let department = if class == 2 {
                "ward_c"
            } else {
                departments[rng.gen_range(0..2)]
            };
            let simultaneous = k > 0 && k + 1 < names.len() && rng.gen_bool(cfg.simultaneity_rate);
            b.push(
                &mut events,
                name,
                simultaneous,
                duration,
                rng.gen_range(0..=30) * MINUTE,
                vec![
                    Some(department.to_string()),
                    is_check.then(|| priorities[rng.gen_range(0..3)].to_string()),
                ],
                vec![
                    Some(rng.gen_range(1..=5) as f64),
                    Some((rng.gen::<f64>() * 10.0).round() / 10.0),
                    is_check.then(|| (rng.gen_range(50.0..500.0f64) * 100.0).round() / 100.0),
                ],
            );
        }
        cases.push(Case {
            case_id: format!("P{:05}", i + 1),
            events,
            sequence_categorical: vec![Some(["f", "m"][rng.gen_range(0..2)].to_string())],
            sequence_numeric: vec![
                Some(rng.gen_range(18..=90) as f64),
                Some((rng.gen_range(17.0..40.0f64) * 10.0).round() / 10.0),
                Some(rng.gen_range(10..=200) as f64 * 1000.0),
            ],
            outcome: class,
        });
    }
    finish(schema, cases, cfg)
}

pub fn bpic_schema() -> Schema {
    let mut schema = Schema::new(vec![
        AttributeSpec::event("org_group", Kind::Categorical, Universality::Universal),
        AttributeSpec::event("channel", Kind::Categorical, Universality::Universal),
        AttributeSpec::sequence("amount_requested", Kind::Numerical),
    ])
    .expect("static schema is valid");
    schema.outcome_labels = vec!["accept".into(), "decline".into(), "cancel".into()];
    schema
}

const BPIC_OPENING: [&str; 3] = ["SELECTED", "CREATED", "SENT"];
const BPIC_FILLERS: [&str; 8] = [
    "SUBMITTED",
    "PARTLYSUBMITTED",
    "PREACCEPTED",
    "COMPLETE",
    "QUOTE",
    "HANDLE",
    "FOLLOW",
    "REGISTERED",
];

fn bpic_closing(class: usize) -> &'static [&'static str] {
    match class {
        0 => &["SENT_BACK", "ACCEPTED"],
        1 => &["SENT_BACK", "ASSESS"],
        _ => &["CANCELLED"],
    }
}

/// BPIC-like log: class is a function of the closing block alone.
pub fn generate_bpic_like(cfg: &GenConfig) -> Result<EventLog> {
    cfg.validate(3, BPIC_OPENING.len() + 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let counts = class_counts(&cfg.priors, cfg.n_cases)?;
    let mut classes: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    classes.shuffle(&mut rng);
    let floors: Vec<usize> = classes.iter().map(|&c| BPIC_OPENING.len() + bpic_closing(c).len()).collect();
    let median = cfg.median_length;
    let mut draw = |r: &mut ChaCha8Rng| {
        // mostly at the median, with a geometric tail towards long cases
        let mut l = median;
        while r.gen_bool(0.45) {
            l += r.gen_range(1..=3);
        }
        if r.gen_bool(0.2) {
            l = l.saturating_sub(1);
        }
        l
    };
    let lengths = fit_lengths(&floors, cfg, &mut draw, &mut rng)?;

    let schema = bpic_schema();
    let groups = ["G1", "G2", "G3", "G4"];
    let channels = ["web", "phone", "branch"];
    let mut cases = Vec::with_capacity(cfg.n_cases);
    for (i, (&class, &len)) in classes.iter().zip(&lengths).enumerate() {
        let closing = bpic_closing(class);
        let n_fill = len - BPIC_OPENING.len() - closing.len();
        let mut b = Builder {
            clock: EPOCH_2020 + i as i64 * 6 * 3600 + rng.gen_range(0..3600),
            n_cat: 2,
            n_num: 0,
        };
        let mut events = Vec::with_capacity(len);
        let attrs = |r: &mut ChaCha8Rng| {
            vec![
                Some(groups[r.gen_range(0..groups.len())].to_string()),
                Some(channels[r.gen_range(0..channels.len())].to_string()),
            ]
        };
        for (k, name) in BPIC_OPENING.iter().enumerate() {
            let a = attrs(&mut rng);
            b.push(&mut events, name, k > 0, 0, 0, a, vec![]);
        }
        let mut prev_filler = false;
        for _ in 0..n_fill {
            let name = BPIC_FILLERS[rng.gen_range(0..BPIC_FILLERS.len())];
            let together = prev_filler && rng.gen_bool(cfg.simultaneity_rate);
            let duration = if together { 0 } else { rng.gen_range(1..=120) * MINUTE };
            let gap = rng.gen_range(1..=240) * MINUTE;
            let a = attrs(&mut rng);
            b.push(&mut events, name, together, duration, gap, a, vec![]);
            prev_filler = true;
        }
        let gap = rng.gen_range(1..=240) * MINUTE;
        for (k, name) in closing.iter().enumerate() {
            let a = attrs(&mut rng);
            b.push(&mut events, name, k > 0, 0, gap, a, vec![]);
        }
        cases.push(Case {
            case_id: format!("O{:05}", i + 1),
            events,
            sequence_categorical: vec![],
            sequence_numeric: vec![Some(rng.gen_range(10..=500) as f64 * 100.0)],
            outcome: class,
        });
    }
    finish(schema, cases, cfg)
}

fn finish(schema: Schema, cases: Vec<Case>, cfg: &GenConfig) -> Result<EventLog> {
    let log = EventLog {
        schema,
        cases,
        has_end_times: true,
    };
    log.validate()?;
    let stats = log_stats(&log);
    debug_assert_eq!(
        (stats.n_cases, stats.min_length, stats.max_length, stats.median_length),
        (cfg.n_cases, cfg.min_length, cfg.max_length, cfg.median_length)
    );
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    PatientsLike,
    BpicLike,
}

impl Profile {
    pub fn config(self, seed: u64) -> GenConfig {
        match self {
            Profile::PatientsLike => GenConfig::patients_like(seed),
            Profile::BpicLike => GenConfig::bpic_like(seed),
        }
    }

    pub fn generate(self, cfg: &GenConfig) -> Result<EventLog> {
        match self {
            Profile::PatientsLike => generate_patients_like(cfg),
            Profile::BpicLike => generate_bpic_like(cfg),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "patients-like" | "patients" => Ok(Profile::PatientsLike),
            "bpic-like" | "bpic" => Ok(Profile::BpicLike),
            _ => Err(CoreError::Config(format!("unknown profile {s:?} (patients-like, bpic-like)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::detect_simultaneous;

    #[test]
    fn apportionment() {
        assert_eq!(class_counts(&[0.4074, 0.22, 0.0112, 0.11, 0.2514], 2140).unwrap(), vec![872, 471, 24, 235, 538]);
        assert_eq!(class_counts(&[1.0 / 3.0; 3], 2406).unwrap(), vec![802, 802, 802]);
        assert!(class_counts(&[0.999, 0.001], 100).is_err());
    }

    #[test]
    fn patients_shape() {
        let log = generate_patients_like(&GenConfig::patients_like(1)).unwrap();
        let s = log_stats(&log);
        assert_eq!((s.n_cases, s.min_length, s.max_length, s.median_length), (2140, 4, 9, 7));
        assert_eq!(s.class_counts.len(), 5);
        let ratio = s.class_counts[0] as f64 / s.class_counts[2] as f64;
        assert!((ratio - 36.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn bpic_shape_and_blocks() {
        let log = generate_bpic_like(&GenConfig::bpic_like(7)).unwrap();
        let s = log_stats(&log);
        assert_eq!((s.n_cases, s.min_length, s.max_length, s.median_length), (2406, 4, 30, 5));
        assert_eq!(s.class_counts, vec![802, 802, 802]);
        for c in &log.cases {
            assert!(detect_simultaneous(c).iter().any(|g| g.len() > 1));
        }
    }

    #[test]
    fn seeded_generation_repeats() {
        let cfg = GenConfig {
            n_cases: 60,
            ..GenConfig::bpic_like(3)
        };
        assert_eq!(generate_bpic_like(&cfg).unwrap(), generate_bpic_like(&cfg).unwrap());
    }

    #[test]
    fn infeasible_configs_fail() {
        let cfg = GenConfig {
            n_cases: 20,
            ..GenConfig::patients_like(0)
        };
        assert!(generate_patients_like(&cfg).is_err());
        let cfg = GenConfig {
            min_length: 3,
            ..GenConfig::bpic_like(0)
        };
        assert!(generate_bpic_like(&cfg).is_err());
    }
}
