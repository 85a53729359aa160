//! Synthetic verifiable tasks, difficulty tiers and dataset files.
//!
//! Tasks are text-only arithmetic, comparison and counting questions whose
//! ground truth is an exact integer, so a trace can always be graded
//! mechanically. Three tiers stand in for the easy-to-hard evolution of the
//! real data sources:
//!
//! * Tier1 — one operation on 1-digit operands.
//! * Tier2 — two operations on 2-digit operands.
//! * Tier3 — three operations with parentheses, or small comparison /
//!   counting word problems.
//!
//! Datasets are JSON Lines, one record per line.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grader::normalize_answer;
use crate::hash::derive_seed;

/// Task difficulty tier. Serialized as `"tier1" | "tier2" | "tier3"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Tier1,
    Tier2,
    Tier3,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Tier1, Difficulty::Tier2, Difficulty::Tier3];

    /// Zero-based tier index.
    pub fn index(self) -> usize {
        match self {
            Difficulty::Tier1 => 0,
            Difficulty::Tier2 => 1,
            Difficulty::Tier3 => 2,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Difficulty::Tier1 => "tier1",
            Difficulty::Tier2 => "tier2",
            Difficulty::Tier3 => "tier3",
        };
        f.write_str(s)
    }
}

/// One verifiable question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: String,
    pub prompt: String,
    /// Canonical answer string (see [`crate::grader::normalize_answer`]).
    pub ground_truth: String,
    pub difficulty: Difficulty,
    /// Free-form label of the generating template.
    pub source: String,
    /// Iteration at which the task entered the pool (0 for standalone sets).
    pub iteration_introduced: u32,
}

/// Per-iteration mixture weights over the three tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, transparent)]
pub struct DifficultySchedule {
    pub rows: Vec<[f64; 3]>,
}

impl DifficultySchedule {
    pub fn new(rows: Vec<[f64; 3]>) -> Result<Self> {
        let schedule = DifficultySchedule { rows };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Every weight non-negative, each row sums to 1 within 1e-9, and the
    /// weight on the hardest tier never decreases across iterations.
    pub fn validate(&self) -> Result<()> {
        let mut prev_hard = f64::NEG_INFINITY;
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                return Err(Error::Config(format!(
                    "schedule row {i} has a negative or non-finite weight"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "schedule row {i} sums to {sum}, expected 1"
                )));
            }
            if row[2] < prev_hard - 1e-12 {
                return Err(Error::Config(format!(
                    "hardest-tier weight decreases at row {i} ({} -> {})",
                    prev_hard, row[2]
                )));
            }
            prev_hard = row[2];
        }
        Ok(())
    }
}

fn apply(op: char, a: i64, b: i64) -> i64 {
    match op {
        '+' => a + b,
        '-' => a - b,
        '*' => a * b,
        _ => unreachable!("generator only emits + - *"),
    }
}

const OPS: [char; 3] = ['+', '-', '*'];

/// All step results (intermediate and final) stay in this range so the
/// teacher's derivations never need negative intermediates.
const VALUE_RANGE: std::ops::RangeInclusive<i64> = 0..=9999;

struct Draft {
    prompt: String,
    value: i64,
    source: &'static str,
}

fn draft_tier1(rng: &mut ChaCha8Rng) -> Option<Draft> {
    let op = OPS[rng.gen_range(0..3)];
    let mut a = rng.gen_range(0..=9i64);
    let mut b = rng.gen_range(0..=9i64);
    if op == '-' && a < b {
        std::mem::swap(&mut a, &mut b);
    }
    Some(Draft {
        prompt: format!("Compute: {a} {op} {b}"),
        value: apply(op, a, b),
        source: "arith-1op",
    })
}

fn draft_tier2(rng: &mut ChaCha8Rng) -> Option<Draft> {
    let a = rng.gen_range(10..=99i64);
    let b = rng.gen_range(10..=99i64);
    let c = rng.gen_range(10..=99i64);
    let op1 = OPS[rng.gen_range(0..3)];
    // At most one multiplication keeps every value within four digits.
    let op2 = if op1 == '*' {
        ['+', '-'][rng.gen_range(0..2)]
    } else {
        OPS[rng.gen_range(0..3)]
    };
    let (first, value) = if op2 == '*' {
        let inner = apply('*', b, c);
        (inner, apply(op1, a, inner))
    } else {
        let inner = apply(op1, a, b);
        (inner, apply(op2, inner, c))
    };
    if !VALUE_RANGE.contains(&first) || !VALUE_RANGE.contains(&value) {
        return None;
    }
    Some(Draft {
        prompt: format!("Compute: {a} {op1} {b} {op2} {c}"),
        value,
        source: "arith-2op",
    })
}

fn draft_tier3_paren(rng: &mut ChaCha8Rng) -> Option<Draft> {
    let a = rng.gen_range(1..=30i64);
    let b = rng.gen_range(1..=30i64);
    let c = rng.gen_range(1..=30i64);
    let d = rng.gen_range(1..=30i64);
    let mut ops = [
        OPS[rng.gen_range(0..3)],
        OPS[rng.gen_range(0..3)],
        OPS[rng.gen_range(0..3)],
    ];
    while ops.iter().filter(|o| **o == '*').count() > 1 {
        ops[rng.gen_range(0..3)] = ['+', '-'][rng.gen_range(0..2)];
    }
    let [op1, op2, op3] = ops;
    let (prompt, steps) = if rng.gen_bool(0.5) {
        // ( a op1 b ) op2 c op3 d
        let v1 = apply(op1, a, b);
        let (v2, v3);
        if op3 == '*' && op2 != '*' {
            v2 = apply('*', c, d);
            v3 = apply(op2, v1, v2);
        } else {
            v2 = apply(op2, v1, c);
            v3 = apply(op3, v2, d);
        }
        (
            format!("Compute: ( {a} {op1} {b} ) {op2} {c} {op3} {d}"),
            [v1, v2, v3],
        )
    } else {
        // a op1 ( b op2 c ) op3 d
        let v1 = apply(op2, b, c);
        let (v2, v3);
        if op1 == '*' {
            v2 = apply('*', a, v1);
            v3 = apply(op3, v2, d);
        } else if op3 == '*' {
            v2 = apply('*', v1, d);
            v3 = apply(op1, a, v2);
        } else {
            v2 = apply(op1, a, v1);
            v3 = apply(op3, v2, d);
        }
        (
            format!("Compute: {a} {op1} ( {b} {op2} {c} ) {op3} {d}"),
            [v1, v2, v3],
        )
    };
    if steps.iter().any(|v| !VALUE_RANGE.contains(v)) {
        return None;
    }
    Some(Draft {
        prompt,
        value: steps[2],
        source: "arith-paren",
    })
}

fn draft_tier3(rng: &mut ChaCha8Rng) -> Option<Draft> {
    match rng.gen_range(0..10u32) {
        0..=5 => draft_tier3_paren(rng),
        6 | 7 => {
            let x = rng.gen_range(10..=99i64);
            let mut y = rng.gen_range(10..=99i64);
            if y == x {
                y = if x == 99 { 10 } else { x + 1 };
            }
            Some(Draft {
                prompt: format!("Which is larger: {x} or {y}?"),
                value: x.max(y),
                source: "compare",
            })
        }
        _ => {
            let n = rng.gen_range(4..=7usize);
            let nums: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=99i64)).collect();
            let count = nums.iter().filter(|v| *v % 2 == 0).count() as i64;
            let list = nums
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            Some(Draft {
                prompt: format!("Count the even numbers in: {list}"),
                value: count,
                source: "count-even",
            })
        }
    }
}

/// Generate `count` tasks of one tier. Deterministic in `(tier, count, seed)`.
pub fn generate_tasks(tier: Difficulty, count: usize, seed: u64) -> Result<Vec<TaskRecord>> {
    generate_tasks_at_iteration(tier, count, seed, 0)
}

/// As [`generate_tasks`], stamping `iteration_introduced`.
pub fn generate_tasks_at_iteration(
    tier: Difficulty,
    count: usize,
    seed: u64,
    iteration: u32,
) -> Result<Vec<TaskRecord>> {
    if count == 0 {
        return Err(Error::Config("task count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("taskgen-{tier}")));
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let draft = loop {
            let attempt = match tier {
                Difficulty::Tier1 => draft_tier1(&mut rng),
                Difficulty::Tier2 => draft_tier2(&mut rng),
                Difficulty::Tier3 => draft_tier3(&mut rng),
            };
            if let Some(d) = attempt {
                break d;
            }
        };
        records.push(TaskRecord {
            id: format!("{tier}-s{seed:08x}-{i:05}"),
            prompt: draft.prompt,
            ground_truth: draft.value.to_string(),
            difficulty: tier,
            source: draft.source.to_string(),
            iteration_introduced: iteration,
        });
    }
    Ok(records)
}

/// Largest-remainder apportionment of `total` into three tier counts.
/// Ties on the fractional remainder break toward the lower tier index.
pub fn apportion(weights: &[f64; 3], total: usize) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut remainders = [0.0f64; 3];
    let mut assigned = 0;
    for t in 0..3 {
        let quota = weights[t] * total as f64;
        counts[t] = quota.floor() as usize;
        remainders[t] = quota - quota.floor();
        assigned += counts[t];
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| remainders[y].partial_cmp(&remainders[x]).unwrap());
    let mut left = total.saturating_sub(assigned);
    for t in order {
        if left == 0 {
            break;
        }
        counts[t] += 1;
        left -= 1;
    }
    counts
}

/// Draw `total` tasks mixed across tiers according to the schedule row for
/// `iteration` (zero-based).
pub fn mix_dataset(
    schedule: &DifficultySchedule,
    iteration: usize,
    total: usize,
    seed: u64,
) -> Result<Vec<TaskRecord>> {
    schedule.validate()?;
    if total == 0 {
        return Err(Error::Config("task count must be at least 1".into()));
    }
    let row = schedule.rows.get(iteration).ok_or(Error::ScheduleRange {
        iteration,
        len: schedule.len(),
    })?;
    let counts = apportion(row, total);
    let mut records = Vec::with_capacity(total);
    for tier in Difficulty::ALL {
        let n = counts[tier.index()];
        if n == 0 {
            continue;
        }
        let tier_seed = derive_seed(seed, &format!("mix-i{iteration}-{tier}"));
        records.extend(generate_tasks_at_iteration(
            tier,
            n,
            tier_seed,
            iteration as u32,
        )?);
    }
    Ok(records)
}

fn validate_records(records: &[TaskRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
        if r.ground_truth.is_empty() {
            return Err(Error::Config(format!("task `{}` has an empty ground truth", r.id)));
        }
        if normalize_answer(&r.ground_truth) != r.ground_truth {
            return Err(Error::Config(format!(
                "task `{}` ground truth `{}` is not in canonical form",
                r.id, r.ground_truth
            )));
        }
    }
    Ok(())
}

/// Write tasks as JSON Lines.
pub fn save_tasks(records: &[TaskRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    validate_records(records)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read tasks from JSON Lines. Blank lines are ignored; a malformed line
/// fails with its line number, and duplicate ids are rejected.
pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<TaskRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    validate_records(&records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier1_shape_and_determinism() {
        let once = generate_tasks(Difficulty::Tier1, 5, 7).unwrap();
        let twice = generate_tasks(Difficulty::Tier1, 5, 7).unwrap();
        assert_eq!(once, twice);
        for t in &once {
            assert!(t.prompt.starts_with("Compute: "));
            assert_eq!(t.difficulty, Difficulty::Tier1);
            let value: i64 = t.ground_truth.parse().unwrap();
            assert!((0..=81).contains(&value));
        }
        // Byte-identical after serialization.
        let to_bytes = |rs: &[TaskRecord]| {
            rs.iter()
                .map(|r| serde_json::to_string(r).unwrap())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(to_bytes(&once), to_bytes(&twice));
    }

    #[test]
    fn zero_count_rejected() {
        assert!(generate_tasks(Difficulty::Tier1, 0, 1).is_err());
    }

    #[test]
    fn tier_prompts_match_their_solver_answers() {
        // The featurizer and teacher rely on solve_prompt agreeing with the
        // generator's own arithmetic.
        for tier in Difficulty::ALL {
            for t in generate_tasks(tier, 100, 11).unwrap() {
                let sol = crate::solver::solve_prompt(&t.prompt)
                    .unwrap_or_else(|| panic!("unsolvable prompt {:?}", t.prompt));
                assert_eq!(sol.answer, t.ground_truth, "prompt {:?}", t.prompt);
            }
        }
    }

    #[test]
    fn apportionment_matches_hand_cases() {
        assert_eq!(apportion(&[0.5, 0.3, 0.2], 10), [5, 3, 2]);
        assert_eq!(apportion(&[1.0, 0.0, 0.0], 4), [4, 0, 0]);
        // quotas 3.33.. each; the single leftover goes to the lowest index.
        assert_eq!(apportion(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 10), [4, 3, 3]);
    }

    #[test]
    fn mixture_counts_follow_weights() {
        let schedule = DifficultySchedule::new(vec![[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]]).unwrap();
        let records = mix_dataset(&schedule, 0, 10, 3).unwrap();
        assert_eq!(records.len(), 10);
        let count = |d: Difficulty| records.iter().filter(|r| r.difficulty == d).count();
        assert_eq!(count(Difficulty::Tier1), 5);
        assert_eq!(count(Difficulty::Tier2), 3);
        assert_eq!(count(Difficulty::Tier3), 2);
        assert!(records.iter().all(|r| r.iteration_introduced == 0));

        let later = mix_dataset(&schedule, 1, 10, 3).unwrap();
        assert!(later.iter().all(|r| r.iteration_introduced == 1));

        assert!(matches!(
            mix_dataset(&schedule, 2, 10, 3),
            Err(Error::ScheduleRange { .. })
        ));
    }

    #[test]
    fn degenerate_mixture_is_all_tier1() {
        let schedule = DifficultySchedule::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let records = mix_dataset(&schedule, 0, 4, 1).unwrap();
        assert_eq!(records.len(), 4);
        assert!(records.iter().all(|r| r.difficulty == Difficulty::Tier1));
    }

    #[test]
    fn schedule_validation() {
        assert!(DifficultySchedule::new(vec![[0.4, 0.4, 0.2], [0.2, 0.4, 0.4]]).is_ok());
        // Row does not sum to one.
        assert!(DifficultySchedule::new(vec![[0.5, 0.3, 0.1]]).is_err());
        // Hardest tier shrinks.
        assert!(DifficultySchedule::new(vec![[0.3, 0.3, 0.4], [0.4, 0.4, 0.2]]).is_err());
        assert!(DifficultySchedule::new(vec![[0.5, 0.6, -0.1]]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let records = generate_tasks(Difficulty::Tier2, 3, 5).unwrap();
        save_tasks(&records, &path).unwrap();
        let loaded = load_tasks(&path).unwrap();
        assert_eq!(records, loaded);
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let mut records = generate_tasks(Difficulty::Tier1, 2, 5).unwrap();
        records[1].id = records[0].id.clone();
        let line = serde_json::to_string(&records[0]).unwrap();
        fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(load_tasks(&path), Err(Error::DuplicateId(_))));
        assert!(matches!(
            save_tasks(&records, dir.path().join("x.jsonl")),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let good = serde_json::to_string(&generate_tasks(Difficulty::Tier1, 1, 5).unwrap()[0])
            .unwrap();
        fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        match load_tasks(&path) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedLine, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_tasks(&path).unwrap().is_empty());
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        fs::write(
            &path,
            r#"{"id":"a","prompt":"p","ground_truth":"1","difficulty":"tier1","source":"s","iteration_introduced":0,"extra":true}"#,
        )
        .unwrap();
        assert!(load_tasks(&path).is_err());
    }
}
