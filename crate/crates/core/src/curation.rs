//! Trace curation: k-candidate bookkeeping, shortest-correct selection,
//! reflection truncation, length filtering and pass@k.
//!
//! The curation pipeline per task is: generate k candidates, grade each,
//! keep the shortest correct one, truncate its reflections, then drop it if
//! the think block is still too long. Tasks with no surviving trace are
//! dropped entirely.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grader::{self, block_spans, THINK_CLOSE};
use crate::hash::fnv1a64;
use crate::taskgen::TaskRecord;

/// How to pick among correct candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Shortest think block wins; ties break toward the lower index.
    #[default]
    ShortestCorrect,
    /// First correct candidate wins.
    FirstCorrect,
}

/// Curation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    /// Reflection keywords, matched case-sensitively inside the think
    /// block. An empty list disables truncation.
    pub keywords: Vec<String>,
    /// Maximum think-block word count (inclusive). `None` disables the
    /// length filter.
    pub max_think_words: Option<usize>,
    pub selection: SelectionMode,
    /// Candidates generated per task.
    pub k: usize,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            keywords: vec![
                "Wait,".to_string(),
                "But wait,".to_string(),
                "But the question".to_string(),
            ],
            max_think_words: Some(500),
            selection: SelectionMode::ShortestCorrect,
            k: 4,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("curation k must be at least 1".into()));
        }
        if self.max_think_words == Some(0) {
            return Err(Error::Config("max_think_words must be positive".into()));
        }
        if self.keywords.iter().any(|k| k.is_empty()) {
            return Err(Error::Config("reflection keywords may not be empty".into()));
        }
        Ok(())
    }
}

/// One graded candidate trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub raw: String,
    pub reward: u8,
    pub think_words: usize,
}

impl Candidate {
    pub fn grade(raw: String, ground_truth: &str) -> Candidate {
        let reward = grader::reward(&raw, ground_truth);
        let think_words = grader::parse_trace(&raw).word_count;
        Candidate {
            raw,
            reward,
            think_words,
        }
    }
}

/// The k candidates generated for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub task_id: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    /// Grade raw candidate traces against a task's ground truth.
    pub fn from_raw(task: &TaskRecord, raws: Vec<String>) -> CandidateSet {
        CandidateSet {
            task_id: task.id.clone(),
            candidates: raws
                .into_iter()
                .map(|raw| Candidate::grade(raw, &task.ground_truth))
                .collect(),
        }
    }

    /// Per-candidate correctness, for pass@k bookkeeping.
    pub fn correctness(&self) -> Vec<bool> {
        self.candidates.iter().map(|c| c.reward == 1).collect()
    }
}

/// Among candidates with reward 1, the one with the fewest think words
/// (ties toward the lower index). `None` when nothing is correct.
pub fn select_shortest_correct(set: &CandidateSet) -> Option<&Candidate> {
    set.candidates
        .iter()
        .filter(|c| c.reward == 1)
        .min_by_key(|c| c.think_words)
}

/// First candidate with reward 1.
pub fn select_first_correct(set: &CandidateSet) -> Option<&Candidate> {
    set.candidates.iter().find(|c| c.reward == 1)
}

fn select(set: &CandidateSet, mode: SelectionMode) -> Option<&Candidate> {
    match mode {
        SelectionMode::ShortestCorrect => select_shortest_correct(set),
        SelectionMode::FirstCorrect => select_first_correct(set),
    }
}

/// Cut the think block at the earliest occurrence of any keyword,
/// discarding the keyword and everything after it inside the block, while
/// leaving everything from `</think>` onward (including the final answer
/// block) byte-for-byte unchanged. Traces without a complete think block or
/// without a keyword come back untouched. Idempotent.
pub fn truncate_reflections(raw: &str, config: &CurationConfig) -> String {
    if config.keywords.is_empty() {
        return raw.to_string();
    }
    let spans = block_spans(raw);
    let Some((start, end)) = spans.think else {
        return raw.to_string();
    };
    // Malformed traces can nest the answer block inside the think block;
    // leave those alone rather than risk touching answer bytes.
    if let Some((answer_start, _)) = spans.answer {
        if answer_start < end {
            return raw.to_string();
        }
    }
    let think = &raw[start..end];
    let cut = config
        .keywords
        .iter()
        .filter_map(|kw| think.find(kw.as_str()))
        .min();
    match cut {
        Some(pos) => {
            let mut out = String::with_capacity(raw.len());
            out.push_str(&raw[..start + pos]);
            // The close tag and the rest of the trace verbatim. `end` points
            // at "</think>" whenever the think span exists.
            debug_assert!(raw[end..].starts_with(THINK_CLOSE));
            out.push_str(&raw[end..]);
            out
        }
        None => raw.to_string(),
    }
}

/// Keep exactly the traces whose think block has at most
/// `max_think_words` words (inclusive boundary: a 500-word block survives a
/// 500-word limit).
pub fn filter_by_length(traces: Vec<String>, config: &CurationConfig) -> Vec<String> {
    match config.max_think_words {
        None => traces,
        Some(limit) => traces
            .into_iter()
            .filter(|t| grader::parse_trace(t).word_count <= limit)
            .collect(),
    }
}

fn within_length(raw: &str, config: &CurationConfig) -> bool {
    match config.max_think_words {
        None => true,
        Some(limit) => grader::parse_trace(raw).word_count <= limit,
    }
}

/// Fraction of tasks whose first `k` samples contain at least one success.
pub fn pass_at_k(per_task_correctness: &[Vec<bool>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("pass@k needs k >= 1".into()));
    }
    for v in per_task_correctness {
        if v.len() < k {
            return Err(Error::PassAtK { k, len: v.len() });
        }
    }
    if per_task_correctness.is_empty() {
        return Ok(0.0);
    }
    let hits = per_task_correctness
        .iter()
        .filter(|v| v[..k].iter().any(|&b| b))
        .count();
    Ok(hits as f64 / per_task_correctness.len() as f64)
}

/// Anything that can propose candidate traces for a task: the synthetic
/// teacher at iteration 1, a trained policy afterwards.
pub trait TraceGenerator: Sync {
    /// Produce `k` raw candidate traces. Implementations must be
    /// deterministic in `(task, k, seed)`.
    fn candidates(&self, task: &TaskRecord, k: usize, seed: u64) -> Vec<String>;
}

/// One curated training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuratedExample {
    pub id: String,
    pub prompt: String,
    pub ground_truth: String,
    pub trace: String,
    pub think_words: usize,
    /// Iteration of the generator that produced the trace: 0 for the
    /// synthetic teacher, i for the GRPO model of iteration i.
    pub source_iteration: u32,
}

/// Curation outcome for a task pool, including the pre-selection
/// correctness matrix for pass@k reporting.
#[derive(Debug, Clone)]
pub struct CurationOutcome {
    pub examples: Vec<CuratedExample>,
    pub correctness: Vec<(String, Vec<bool>)>,
}

/// Run the full pipeline over a task pool: k candidates per task, grade,
/// select, truncate, length-filter. Deterministic under `seed`; tasks are
/// processed independently and merged in task order.
pub fn build_sft_dataset(
    tasks: &[TaskRecord],
    generator: &dyn TraceGenerator,
    config: &CurationConfig,
    source_iteration: u32,
    seed: u64,
) -> Result<CurationOutcome> {
    config.validate()?;
    let processed: Vec<(Option<CuratedExample>, (String, Vec<bool>))> = tasks
        .par_iter()
        .map(|task| {
            let task_seed = fnv1a64(seed, task.id.as_bytes());
            let raws = generator.candidates(task, config.k, task_seed);
            let set = CandidateSet::from_raw(task, raws);
            let correctness = (task.id.clone(), set.correctness());
            let example = select(&set, config.selection).and_then(|cand| {
                let truncated = truncate_reflections(&cand.raw, config);
                if !within_length(&truncated, config) {
                    return None;
                }
                let think_words = grader::parse_trace(&truncated).word_count;
                Some(CuratedExample {
                    id: task.id.clone(),
                    prompt: task.prompt.clone(),
                    ground_truth: task.ground_truth.clone(),
                    trace: truncated,
                    think_words,
                    source_iteration,
                })
            });
            (example, correctness)
        })
        .collect();
    let mut examples = Vec::new();
    let mut correctness = Vec::new();
    for (example, corr) in processed {
        if let Some(e) = example {
            examples.push(e);
        }
        correctness.push(corr);
    }
    Ok(CurationOutcome {
        examples,
        correctness,
    })
}

/// Write curated examples as JSON Lines.
pub fn save_curated(examples: &[CuratedExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in examples {
        let line = serde_json::to_string(e).map_err(|err| Error::Json {
            path: path.to_path_buf(),
            source: err,
        })?;
        writeln!(w, "{line}").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read curated examples from JSON Lines.
pub fn load_curated(path: impl AsRef<Path>) -> Result<Vec<CuratedExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CuratedExample =
            serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id.clone()));
        }
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::Difficulty;
    use proptest::prelude::*;

    fn task(truth: &str) -> TaskRecord {
        TaskRecord {
            id: "t-0".into(),
            prompt: "Compute: 1 + 2".into(),
            ground_truth: truth.into(),
            difficulty: Difficulty::Tier1,
            source: "test".into(),
            iteration_introduced: 0,
        }
    }

    fn trace(think: &str, answer: &str) -> String {
        format!("<think> {think} </think> <answer> {answer} </answer> <eos>")
    }

    fn think_of(words: usize) -> String {
        vec!["so"; words].join(" ")
    }

    #[test]
    fn shortest_correct_prefers_minimal_words() {
        let t = task("3");
        let set = CandidateSet::from_raw(
            &t,
            vec![
                trace(&think_of(120), "3"),
                trace(&think_of(80), "3"),
                trace(&think_of(50), "4"),
            ],
        );
        let picked = select_shortest_correct(&set).unwrap();
        assert_eq!(picked.think_words, 80);
        assert_eq!(picked.reward, 1);
    }

    #[test]
    fn no_correct_candidate_yields_none() {
        let t = task("3");
        let set = CandidateSet::from_raw(&t, vec![trace("a", "4"), trace("b", "5")]);
        assert!(select_shortest_correct(&set).is_none());
    }

    #[test]
    fn ties_break_toward_lower_index() {
        let t = task("3");
        // Exhaustive check over every placement of two equal-length correct
        // candidates in a 4-candidate set.
        for first in 0..3usize {
            for second in (first + 1)..4usize {
                let mut raws = vec![trace(&think_of(9), "4"); 4];
                raws[first] = trace(&format!("first {}", think_of(4)), "3");
                raws[second] = trace(&format!("later {}", think_of(4)), "3");
                let set = CandidateSet::from_raw(&t, raws);
                let picked = select_shortest_correct(&set).unwrap();
                assert!(picked.raw.contains("first"), "first={first} second={second}");
            }
        }
    }

    #[test]
    fn first_correct_mode() {
        let t = task("3");
        let set = CandidateSet::from_raw(
            &t,
            vec![trace(&think_of(5), "9"), trace(&think_of(90), "3"), trace(&think_of(2), "3")],
        );
        assert_eq!(select_first_correct(&set).unwrap().think_words, 90);
    }

    #[test]
    fn truncation_cuts_at_first_keyword_and_keeps_answer() {
        let config = CurationConfig::default();
        let raw = "<think> 4 cm is close. But wait, the question asks to round. </think>\nmid text <answer> 4 </answer>";
        let cut = truncate_reflections(raw, &config);
        assert_eq!(
            cut,
            "<think> 4 cm is close. </think>\nmid text <answer> 4 </answer>"
        );
        // Earliest keyword wins when several occur.
        let raw2 = "<think> x But the question is y. Wait, z </think><answer>1</answer>";
        let cut2 = truncate_reflections(raw2, &config);
        assert_eq!(cut2, "<think> x </think><answer>1</answer>");
    }

    #[test]
    fn truncation_without_keyword_is_identity() {
        let config = CurationConfig::default();
        let raw = trace("no reflections here", "5");
        assert_eq!(truncate_reflections(&raw, &config), raw);
        // Keyword outside the think block is ignored.
        let raw2 = "<think> clean </think> But wait, <answer> 2 </answer>";
        assert_eq!(truncate_reflections(raw2, &config), raw2);
        // No think block at all.
        assert_eq!(truncate_reflections("Wait, what", &config), "Wait, what");
    }

    #[test]
    fn truncation_is_idempotent_and_never_grows() {
        let config = CurationConfig::default();
        let cases = [
            trace("a But wait, b But wait, c", "1"),
            trace("Wait, immediately", "2"),
            trace("clean", "3"),
            "<think>But the question</think><answer>9</answer>".to_string(),
        ];
        for raw in cases {
            let once = truncate_reflections(&raw, &config);
            let twice = truncate_reflections(&once, &config);
            assert_eq!(once, twice, "raw {raw:?}");
            let before = grader::parse_trace(&raw);
            let after = grader::parse_trace(&once);
            assert!(after.word_count <= before.word_count);
            assert_eq!(after.answer_text, before.answer_text);
        }
    }

    #[test]
    fn length_filter_boundary_is_inclusive() {
        let config = CurationConfig {
            max_think_words: Some(500),
            ..CurationConfig::default()
        };
        let at_limit = trace(&think_of(500), "1");
        let over = trace(&think_of(600), "1");
        let kept = filter_by_length(vec![at_limit.clone(), over], &config);
        assert_eq!(kept, vec![at_limit]);
        assert!(filter_by_length(vec![], &config).is_empty());
    }

    #[test]
    fn pass_at_k_hand_cases() {
        assert_eq!(pass_at_k(&[vec![false, false, true, false]], 4).unwrap(), 1.0);
        assert_eq!(
            pass_at_k(&[vec![false, false], vec![true, false]], 1).unwrap(),
            0.5
        );
        assert!(matches!(
            pass_at_k(&[vec![true]], 2),
            Err(Error::PassAtK { .. })
        ));
    }

    #[test]
    fn pass_at_k_monotone_nondecreasing() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        for _ in 0..100 {
            let matrix: Vec<Vec<bool>> = (0..20)
                .map(|_| (0..4).map(|_| rng.gen_bool(0.4)).collect())
                .collect();
            let mut prev = 0.0;
            for k in 1..=4 {
                let p = pass_at_k(&matrix, k).unwrap();
                assert!(p >= prev);
                assert!((0.0..=1.0).contains(&p));
                prev = p;
            }
        }
    }

    struct FixedGenerator(Vec<String>);

    impl TraceGenerator for FixedGenerator {
        fn candidates(&self, _task: &TaskRecord, k: usize, _seed: u64) -> Vec<String> {
            assert_eq!(k, self.0.len());
            self.0.clone()
        }
    }

    #[test]
    fn build_dataset_runs_the_whole_pipeline() {
        let t = task("3");
        let config = CurationConfig {
            max_think_words: Some(6),
            k: 3,
            ..CurationConfig::default()
        };
        // Candidate 0: wrong. Candidate 1: correct but its reflection-free
        // prefix is too long. Candidate 2: correct with a reflection that
        // truncation rescues.
        let generator = FixedGenerator(vec![
            trace(&think_of(2), "9"),
            trace(&think_of(10), "3"),
            trace("so so so But wait, more words here", "3"),
        ]);
        let outcome = build_sft_dataset(&[t.clone()], &generator, &config, 0, 1).unwrap();
        assert_eq!(outcome.examples.len(), 1);
        let e = &outcome.examples[0];
        assert_eq!(e.think_words, 3);
        assert!(!e.trace.contains("But wait,"));
        assert_eq!(outcome.correctness[0].1, vec![false, true, true]);
    }

    #[test]
    fn build_dataset_drops_unverified_tasks() {
        let t = task("3");
        let generator = FixedGenerator(vec![trace("x", "1"); 4]);
        let outcome =
            build_sft_dataset(&[t], &generator, &CurationConfig::default(), 0, 1).unwrap();
        assert!(outcome.examples.is_empty());
        assert_eq!(outcome.correctness[0].1, vec![false; 4]);
    }

    #[test]
    fn curated_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curated.jsonl");
        let examples = vec![CuratedExample {
            id: "a".into(),
            prompt: "p".into(),
            ground_truth: "1".into(),
            trace: trace("x", "1"),
            think_words: 1,
            source_iteration: 0,
        }];
        save_curated(&examples, &path).unwrap();
        assert_eq!(load_curated(&path).unwrap(), examples);
    }

    proptest! {
        #[test]
        fn truncation_idempotent_on_arbitrary_traces(raw in "\\PC{0,120}") {
            let config = CurationConfig::default();
            let once = truncate_reflections(&raw, &config);
            prop_assert_eq!(truncate_reflections(&once, &config), once.clone());
            // Answer bytes survive untouched.
            let before = grader::parse_trace(&raw).answer_text;
            let after = grader::parse_trace(&once).answer_text;
            prop_assert_eq!(before, after);
        }

        #[test]
        fn length_filter_idempotent(
            thinks in proptest::collection::vec(0usize..40, 0..10),
            limit in 1usize..30
        ) {
            let config = CurationConfig {
                max_think_words: Some(limit),
                ..CurationConfig::default()
            };
            let traces: Vec<String> = thinks
                .iter()
                .map(|w| format!("<think> {} </think> <answer> 1 </answer>", vec!["w"; *w].join(" ")))
                .collect();
            let once = filter_by_length(traces, &config);
            let twice = filter_by_length(once.clone(), &config);
            prop_assert_eq!(once, twice);
        }
    }
}
