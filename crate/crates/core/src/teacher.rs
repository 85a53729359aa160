//! Synthetic teacher: a configurable, imperfect trace generator.
//!
//! It plays the role of the iteration-1 distillation source. Information
//! loss is modeled as a per-tier correctness probability, and verbosity as a
//! per-task style: most tasks get either a single self-reflection that
//! recovers, or a run of repetitive reflections, mirroring the pathologies
//! the curation filters exist to remove. The style is a property of the
//! *task* (all k candidates share it), so shortest-correct selection alone
//! cannot launder a verbose task — only the filters can.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::TraceGenerator;
use crate::error::{Error, Result};
use crate::policy::REFLECT;
use crate::solver::{number_tokens, solve_prompt, PromptSolution};
use crate::taskgen::TaskRecord;

/// Verbosity regime of a task's candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStyle {
    /// Straight derivation, no reflections.
    Clean,
    /// One reflection that re-derives and recovers.
    Reflect,
    /// Repeated terse reflections; far over any sensible length budget.
    Loop,
}

/// Teacher behavior knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Per-tier probability that a candidate states the correct answer.
    pub correctness: [f64; 3],
    /// Per-task probabilities of the Clean / Reflect / Loop styles.
    pub style_weights: [f64; 3],
    /// Inclusive range of reflection repeats for Loop-style tasks.
    pub loop_repeats: (usize, usize),
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            correctness: [0.85, 0.55, 0.35],
            style_weights: [0.1, 0.55, 0.35],
            loop_repeats: (8, 12),
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        for p in self.correctness.iter().chain(self.style_weights.iter()) {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config("teacher probabilities must lie in [0, 1]".into()));
            }
        }
        let sum: f64 = self.style_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "teacher style weights sum to {sum}, expected 1"
            )));
        }
        if self.loop_repeats.0 == 0 || self.loop_repeats.0 > self.loop_repeats.1 {
            return Err(Error::Config("invalid loop repeat range".into()));
        }
        Ok(())
    }

    /// Same teacher with a flat correctness probability on every tier.
    pub fn with_flat_correctness(mut self, p: f64) -> TeacherConfig {
        self.correctness = [p, p, p];
        self
    }
}

/// The teacher itself. Stateless apart from its configuration; candidate
/// draws are fully determined by `(task, k, seed)`.
#[derive(Debug, Clone)]
pub struct SyntheticTeacher {
    config: TeacherConfig,
}

impl SyntheticTeacher {
    pub fn new(config: TeacherConfig) -> Result<SyntheticTeacher> {
        config.validate()?;
        Ok(SyntheticTeacher { config })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    fn draw_style(&self, rng: &mut ChaCha8Rng) -> TraceStyle {
        let u: f64 = rng.gen();
        let [clean, reflect, _] = self.config.style_weights;
        if u < clean {
            TraceStyle::Clean
        } else if u < clean + reflect {
            TraceStyle::Reflect
        } else {
            TraceStyle::Loop
        }
    }

    fn render_candidate(
        &self,
        solution: &PromptSolution,
        stated: &str,
        style: TraceStyle,
        repeats: usize,
    ) -> String {
        let stated_toks = number_tokens(stated);
        let mut think: Vec<String> = solution.deriv_tokens.clone();
        push_words(&mut think, &["so", "the", "answer", "is"]);
        think.extend(stated_toks.iter().cloned());
        match style {
            TraceStyle::Clean => {}
            TraceStyle::Reflect => {
                push_words(&mut think, &[REFLECT, "check", "again"]);
                think.extend(solution.deriv_tokens.iter().cloned());
                push_words(&mut think, &["so", "we", "get"]);
                think.extend(stated_toks.iter().cloned());
            }
            TraceStyle::Loop => {
                for _ in 0..repeats {
                    push_words(&mut think, &[REFLECT, "the", "answer", "is"]);
                    think.extend(stated_toks.iter().cloned());
                }
                push_words(&mut think, &["so", "we", "get"]);
                think.extend(stated_toks.iter().cloned());
            }
        }
        let mut tokens: Vec<String> = vec!["<think>".to_string()];
        tokens.extend(think);
        tokens.push("</think>".to_string());
        tokens.push("<answer>".to_string());
        tokens.extend(stated_toks);
        tokens.push("</answer>".to_string());
        tokens.push("<eos>".to_string());
        join_tokens(&tokens)
    }
}

fn push_words(tokens: &mut Vec<String>, words: &[&str]) {
    tokens.extend(words.iter().map(|w| w.to_string()));
}

/// Join token surfaces with single spaces, concatenating adjacent digit
/// tokens — the same rendering the policy vocabulary uses, so teacher
/// traces always tokenize back.
fn join_tokens(tokens: &[String]) -> String {
    let is_digit = |t: &str| t.len() == 1 && t.chars().next().unwrap().is_ascii_digit();
    let mut out = String::new();
    let mut prev_digit = false;
    for t in tokens {
        let digit = is_digit(t);
        if !out.is_empty() && !(prev_digit && digit) {
            out.push(' ');
        }
        out.push_str(t);
        prev_digit = digit;
    }
    out
}

fn perturb_answer(truth: &str, rng: &mut ChaCha8Rng) -> String {
    let value: i64 = truth.parse().unwrap_or(0);
    let mut wrong = value + [-3i64, -2, -1, 1, 2, 3][rng.gen_range(0..6)];
    if wrong < 0 {
        wrong = value + rng.gen_range(1..=3);
    }
    if wrong == value {
        wrong = value + 1;
    }
    wrong.to_string()
}

impl TraceGenerator for SyntheticTeacher {
    fn candidates(&self, task: &TaskRecord, k: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let style = self.draw_style(&mut rng);
        let solution = solve_prompt(&task.prompt).unwrap_or_else(|| PromptSolution {
            answer: task.ground_truth.clone(),
            deriv_tokens: vec!["so".to_string()],
        });
        let p_correct = self.config.correctness[task.difficulty.index()];
        (0..k)
            .map(|_| {
                let correct = rng.gen_bool(p_correct);
                let stated = if correct {
                    solution.answer.clone()
                } else {
                    perturb_answer(&solution.answer, &mut rng)
                };
                let repeats = rng.gen_range(self.config.loop_repeats.0..=self.config.loop_repeats.1);
                self.render_candidate(&solution, &stated, style, repeats)
            })
            .collect()
    }
}
