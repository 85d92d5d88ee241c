//! Seeded synthetic cohorts.
//!
//! Drafts are written in the rule oracle's line grammar and answered by
//! [`crate::mock`], so every generated table went through the same
//! parse/validate path as live traffic and error counts are controlled
//! exactly.
//!
//! Within a round the submitting students are split into four engagement
//! classes by largest-remainder apportionment of the mix (ties go to the
//! earlier class in the order never, single, multi, correcting):
//!
//! * never – submission only;
//! * single – one feedback request, then submission;
//! * multi – 2–4 requests with the same error count throughout;
//! * correcting – 2–4 requests whose error count ends strictly below the first.
//!
//! The resulting funnel is therefore exactly
//! `(submitted, single + multi + correcting, multi + correcting, correcting)`.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{parse_feedback, validate_draft_text, PromptVersion, ReportDraft};
use crate::mock::{mock_feedback, MOCK_PROVIDER_ID};
use crate::store::{valid_round_id, NewRecord};

const MIX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementMix {
    pub never: f64,
    pub single: f64,
    pub multi: f64,
    pub correcting: f64,
}

impl EngagementMix {
    fn parts(&self) -> [f64; 4] {
        [self.never, self.single, self.multi, self.correcting]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSpec {
    pub round_id: String,
    /// Students who submit a report this round.
    pub submitted: usize,
    pub prompt_version: PromptVersion,
    pub mix: EngagementMix,
    pub starts_at: DateTime<Utc>,
}

fn default_task_count_weights() -> Vec<(usize, f64)> {
    vec![(1, 0.04), (2, 0.06), (3, 0.14), (4, 0.30), (5, 0.28), (6, 0.10), (7, 0.03), (9, 0.05)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortSpec {
    pub n_students: usize,
    pub seed: u64,
    pub rounds: Vec<RoundSpec>,
    /// Relative weights of the number of tasks in a student's report.
    #[serde(default = "default_task_count_weights")]
    pub task_count_weights: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("round `{round}`: engagement fractions must be within [0, 1] and sum to 1 (sum = {sum})")]
    BadMix { round: String, sum: f64 },
    #[error("round `{round}`: {submitted} submissions but only {n_students} students")]
    TooManySubmissions {
        round: String,
        submitted: usize,
        n_students: usize,
    },
    #[error("invalid or duplicate round id `{0}`")]
    BadRoundId(String),
    #[error("task count weights must be positive, finite and cover counts between 1 and 12")]
    BadTaskWeights,
    #[error("generated draft failed validation: {0}")]
    Internal(String),
}

/// Students per engagement class in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub never: usize,
    pub single: usize,
    pub multi: usize,
    pub correcting: usize,
}

impl ClassCounts {
    /// Funnel stages this split produces: (submitted, used, interacted, corrected).
    pub fn expected_funnel(&self) -> [usize; 4] {
        let interacted = self.multi + self.correcting;
        let used = self.single + interacted;
        [self.never + used, used, interacted, self.correcting]
    }
}

/// Largest-remainder split of `total` students by the mix fractions.
pub fn apportion(mix: &EngagementMix, total: usize) -> ClassCounts {
    let parts = mix.parts();
    let quotas: Vec<f64> = parts.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..4).collect();
    // Stable sort keeps class order for equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    ClassCounts {
        never: counts[0],
        single: counts[1],
        multi: counts[2],
        correcting: counts[3],
    }
}

impl SyntheticCohortSpec {
    /// 76 students; 69 submit in round 1 (V1 prompt) and 49 in round 2 (V2).
    /// The engagement mixes are illustrative defaults.
    pub fn default_cohort() -> Self {
        SyntheticCohortSpec {
            n_students: 76,
            seed: 42,
            rounds: vec![
                RoundSpec {
                    round_id: "round1".into(),
                    submitted: 69,
                    prompt_version: PromptVersion::V1,
                    mix: EngagementMix {
                        never: 0.55,
                        single: 0.25,
                        multi: 0.08,
                        correcting: 0.12,
                    },
                    starts_at: Utc.with_ymd_and_hms(2025, 3, 10, 9, 0, 0).unwrap(),
                },
                RoundSpec {
                    round_id: "round2".into(),
                    submitted: 49,
                    prompt_version: PromptVersion::V2,
                    mix: EngagementMix {
                        never: 0.70,
                        single: 0.14,
                        multi: 0.06,
                        correcting: 0.10,
                    },
                    starts_at: Utc.with_ymd_and_hms(2025, 3, 24, 9, 0, 0).unwrap(),
                },
            ],
            task_count_weights: default_task_count_weights(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.rounds {
            if !valid_round_id(&r.round_id) || !seen.insert(r.round_id.as_str()) {
                return Err(SynthError::BadRoundId(r.round_id.clone()));
            }
            let parts = r.mix.parts();
            let sum: f64 = parts.iter().sum();
            if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > MIX_TOLERANCE {
                return Err(SynthError::BadMix {
                    round: r.round_id.clone(),
                    sum,
                });
            }
            if r.submitted > self.n_students {
                return Err(SynthError::TooManySubmissions {
                    round: r.round_id.clone(),
                    submitted: r.submitted,
                    n_students: self.n_students,
                });
            }
        }
        let weights_ok = !self.task_count_weights.is_empty()
            && self
                .task_count_weights
                .iter()
                .all(|&(n, w)| (1..=12).contains(&n) && w.is_finite() && w > 0.0);
        if !weights_ok {
            return Err(SynthError::BadTaskWeights);
        }
        Ok(())
    }

    pub fn student_ids(&self) -> Vec<String> {
        let width = self.n_students.to_string().len().max(3);
        (1..=self.n_students).map(|i| format!("s{i:0width$}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Category {
    Study,
    Implementation,
    Writing,
    Organization,
    Meeting,
}

const CATEGORIES: [Category; 5] = [
    Category::Study,
    Category::Implementation,
    Category::Writing,
    Category::Organization,
    Category::Meeting,
];

const TOPICS: [&str; 8] = [
    "motor driver",
    "battery pack",
    "sensor fusion",
    "user interface",
    "gripper arm",
    "vision pipeline",
    "power board",
    "telemetry link",
];

/// (description, evidence). Descriptions carry a category keyword and no
/// authorship markers; evidence always names produced material.
fn good_line(category: Category, topic: &str, n: usize, student: &str) -> (String, String) {
    let slug = topic.replace(' ', "-");
    match category {
        Category::Study => (
            format!("completed a research review of {topic} options"),
            format!("summary text {n} in the shared drive"),
        ),
        Category::Implementation => (
            format!("implemented the {topic} module"),
            format!("code at https://git.example.edu/{student}/{slug}"),
        ),
        Category::Writing => (
            format!("wrote section {n} of the project report about the {topic}"),
            format!("report draft revision {n} on the shared drive"),
        ),
        Category::Organization => (
            format!("scheduled the client visit for week {n}"),
            "calendar invite text sent to the client".to_string(),
        ),
        Category::Meeting => (
            format!("attended the advisor meeting on the {topic}"),
            format!("meeting minutes reference {n} in the team folder"),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flaw {
    NoEvidence,
    Unauthored,
    Vague,
}

#[derive(Debug, Clone)]
struct PlannedTask {
    description: String,
    evidence: String,
    flaw: Flaw,
    /// Under V2, render evidence-less lines as in progress (not an error).
    ongoing: bool,
}

impl PlannedTask {
    fn render(&self, broken: bool) -> String {
        if self.ongoing {
            return format!("- {} (in progress)", self.description);
        }
        if !broken {
            return format!("- {} (evidence: {})", self.description, self.evidence);
        }
        match self.flaw {
            Flaw::NoEvidence => format!("- {}", self.description),
            Flaw::Unauthored => format!("- we {} (evidence: {})", self.description, self.evidence),
            Flaw::Vague => "- worked hard".to_string(),
        }
    }
}

fn render_draft(tasks: &[PlannedTask], broken: &[bool], hours: u32) -> String {
    let mut out = String::from("Biweekly report\n");
    for (t, &b) in tasks.iter().zip(broken) {
        out.push_str(&t.render(b));
        out.push('\n');
    }
    out.push_str(&format!("Hours dedicated: {hours}\n"));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Never,
    Single,
    Multi,
    Correcting,
}

/// Error counts per attempt for one student.
fn trajectory(rng: &mut ChaCha8Rng, class: Class, fixable: usize) -> Vec<usize> {
    match class {
        Class::Never => vec![],
        Class::Single => vec![rng.gen_range(0..=fixable.min(2))],
        Class::Multi => {
            let attempts = rng.gen_range(2..=4);
            vec![rng.gen_range(0..=fixable.min(2)); attempts]
        }
        Class::Correcting => {
            let attempts = rng.gen_range(2..=4);
            let first = rng.gen_range(1..=fixable.clamp(1, 3));
            let last = rng.gen_range(0..first);
            let mut traj = vec![first];
            for i in 1..attempts - 1 {
                let prev = traj[i - 1];
                traj.push(rng.gen_range(last..=prev));
            }
            traj.push(last);
            traj
        }
    }
}

fn pick_task_count(rng: &mut ChaCha8Rng, weights: &[(usize, f64)]) -> usize {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen::<f64>() * total;
    for &(n, w) in weights {
        if x < w {
            return n;
        }
        x -= w;
    }
    weights.last().map(|&(n, _)| n).unwrap_or(4)
}

/// Generates the cohort's records in append order.
pub fn synthesize(spec: &SyntheticCohortSpec) -> Result<Vec<NewRecord>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let students = spec.student_ids();
    let mut records = Vec::new();

    for round in &spec.rounds {
        let version = round.prompt_version;
        let mut submitters: Vec<usize> =
            rand::seq::index::sample(&mut rng, spec.n_students, round.submitted).into_vec();
        submitters.sort_unstable();
        let mut shuffled = submitters.clone();
        shuffled.shuffle(&mut rng);

        let counts = apportion(&round.mix, round.submitted);
        let mut classes = vec![Class::Never; spec.n_students];
        let mut it = shuffled.into_iter();
        for (class, n) in [
            (Class::Never, counts.never),
            (Class::Single, counts.single),
            (Class::Multi, counts.multi),
            (Class::Correcting, counts.correcting),
        ] {
            for idx in it.by_ref().take(n) {
                classes[idx] = class;
            }
        }

        for (slot, &idx) in submitters.iter().enumerate() {
            let student = &students[idx];
            let n_tasks = pick_task_count(&mut rng, &spec.task_count_weights);
            let tasks: Vec<PlannedTask> = (0..n_tasks)
                .map(|i| {
                    let category = *CATEGORIES.choose(&mut rng).expect("non-empty");
                    let topic = TOPICS.choose(&mut rng).expect("non-empty");
                    let (description, evidence) = good_line(category, topic, i + 1, student);
                    let flaw = *[Flaw::NoEvidence, Flaw::Unauthored, Flaw::Vague]
                        .choose(&mut rng)
                        .expect("non-empty");
                    PlannedTask {
                        description,
                        evidence,
                        flaw,
                        ongoing: false,
                    }
                })
                .collect();
            let mut tasks = tasks;
            // Occasionally an ongoing task under V2: counts as a row, never as an error.
            if version.allows_in_progress() && n_tasks >= 3 && rng.gen_bool(0.3) {
                tasks[n_tasks - 1].ongoing = true;
            }
            let fixable = tasks.iter().filter(|t| !t.ongoing).count();
            let mut fix_order: Vec<usize> = (0..n_tasks).filter(|&i| !tasks[i].ongoing).collect();
            fix_order.shuffle(&mut rng);

            let hours = rng.gen_range(8..=30);
            let base = round.starts_at + Duration::minutes(37 * slot as i64);
            let traj = trajectory(&mut rng, classes[idx], fixable);

            let mut last_text = None;
            for (attempt, &errors) in traj.iter().enumerate() {
                let mut broken = vec![false; n_tasks];
                for &i in fix_order.iter().take(errors) {
                    broken[i] = true;
                }
                let text = render_draft(&tasks, &broken, hours);
                validate_draft_text(&text).map_err(|e| SynthError::Internal(e.to_string()))?;
                let draft = ReportDraft {
                    text: text.clone(),
                    student_id: student.clone(),
                    round_id: round.round_id.clone(),
                    created_at: base + Duration::minutes(7 * attempt as i64),
                };
                let raw = mock_feedback(&draft, version);
                let table = parse_feedback(&raw, version, MOCK_PROVIDER_ID)
                    .map_err(|e| SynthError::Internal(e.to_string()))?;
                if table.error_count() != errors {
                    return Err(SynthError::Internal(format!(
                        "planned {errors} errors, oracle found {}",
                        table.error_count()
                    )));
                }
                records.push(NewRecord::feedback(student, &round.round_id, &text, table).at(draft.created_at));
                last_text = Some(text);
            }

            let final_text = match last_text {
                Some(t) => t,
                None => {
                    let broken: Vec<bool> = (0..n_tasks).map(|_| rng.gen_bool(0.2)).collect();
                    render_draft(&tasks, &broken, hours)
                }
            };
            let submitted_at = base + Duration::minutes(7 * traj.len() as i64 + 5);
            records.push(NewRecord::submission(student, &round.round_id, &final_text).at(submitted_at));
        }
    }
    Ok(records)
}
