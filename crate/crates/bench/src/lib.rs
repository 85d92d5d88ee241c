//! Benchmark inputs shared by the bench targets.

use draftcheck_core::synth::{synthesize, SyntheticCohortSpec};
use draftcheck_core::{InteractionRecord, MemoryStore, ReportDraft};

/// A report with `n` task lines mixing every rule branch.
pub fn draft(n: usize) -> ReportDraft {
    let lines = [
        "- implemented the wheel encoder driver (evidence: code in the repository)",
        "- we integrated the sensor (evidence: http://x)",
        "- fixed stuff",
        "- studied PID tuning methods (evidence: report section 2)",
        "- calibrating the lidar (in progress)",
        "- scheduled the supplier call (evidence: email thread) (category: Organization)",
    ];
    let text: Vec<&str> = lines.iter().cycle().take(n).copied().collect();
    ReportDraft::new(text.join("\n"), "s001", "bench")
}

/// Records of a synthetic cohort scaled to `n_students`.
pub fn cohort(n_students: usize) -> Vec<InteractionRecord> {
    let mut spec = SyntheticCohortSpec::default_cohort();
    let scale = |k: usize| k * n_students / spec.n_students;
    for r in &mut spec.rounds {
        r.submitted = scale(r.submitted);
    }
    spec.n_students = n_students;
    let store = MemoryStore::with_records(synthesize(&spec).expect("valid spec")).expect("valid records");
    store.all()
}
