//! reloop-core: an iterative self-improvement training loop for a toy
//! reasoning policy.
//!
//! The pipeline alternates two stages over synthetic, mechanically
//! verifiable tasks:
//!
//! 1. **Distill + SFT** — a trace generator (a synthetic teacher at
//!    iteration 1, the previous iteration's RL model afterwards) proposes
//!    `k` candidate reasoning traces per task; the shortest verified-correct
//!    one is kept, reflections are truncated, over-long traces dropped, and
//!    the policy is fine-tuned on the result *from the base parameters*.
//! 2. **GRPO** — group-relative policy optimization with a binary
//!    answer-correctness reward, per-token clipped importance ratios, and an
//!    exact KL penalty against the SFT model as the frozen reference.
//!
//! Task difficulty shifts toward harder tiers across iterations. Everything
//! is deterministic under a seed, and the policy is small enough that
//! expectations over short trajectory spaces can be enumerated exactly,
//! which is what the test suites lean on.

pub mod curation;
pub mod error;
pub mod grader;
pub mod grpo;
mod hash;
pub mod orchestrator;
pub mod policy;
pub mod sft;
pub mod solver;
pub mod taskgen;
pub mod teacher;

pub use curation::{
    build_sft_dataset, filter_by_length, pass_at_k, select_shortest_correct,
    truncate_reflections, Candidate, CandidateSet, CuratedExample, CurationConfig, SelectionMode,
    TraceGenerator,
};
pub use error::{Error, ErrorClass, Result};
pub use grader::{grade_answer, normalize_answer, parse_trace, reward, ParsedTrace};
pub use grpo::{
    build_rollout_group, clipped_token_term, compute_advantages, grpo_objective, grpo_train,
    kl_penalty, GrpoConfig, GrpoStepStats, RolloutGroup,
};
pub use hash::fnv1a64;
pub use orchestrator::{
    evaluate, run_iteration, run_plan, EvalOutcome, FilterVariant, InferenceConfig,
    IterationPlan, IterationReport, IterationSpec, PolicyTraceGenerator,
};
pub use policy::{
    enumerate_trajectories, sample, FeatureSpec, PolicyParams, SampleConfig, Trajectory,
    Vocabulary,
};
pub use sft::{sft_loss, sft_train, LrScheduler, SftConfig, SftStepStat};
pub use solver::{solve_prompt, PromptSolution};
pub use taskgen::{
    generate_tasks, load_tasks, mix_dataset, save_tasks, Difficulty, DifficultySchedule,
    TaskRecord,
};
pub use teacher::{SyntheticTeacher, TeacherConfig, TraceStyle};

/// Configure the global worker pool used by the embarrassingly parallel
/// stages (rollout sampling, candidate generation, evaluation). Calling it
/// more than once is harmless; only the first call takes effect.
pub fn init_worker_threads(jobs: usize) {
    if jobs == 0 {
        return;
    }
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global();
}
