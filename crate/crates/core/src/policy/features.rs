//! Hashed sparse featurization of decoding states.
//!
//! A state is the pair (prompt, generated prefix). Features combine
//! n-grams of the last `window` tokens, coarse structural position (which
//! block the decoder is inside, positions within it, whether a reflection
//! token occurred), prompt-memorization crosses, and — standing in for the
//! latent competence of a pretrained backbone — "solution guide" features
//! that name the next token of the canonical derivation and of the final
//! answer. The policy still has to *learn* to follow the guide; nothing
//! forces it to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::solver::{solve_prompt, PromptSolution};

use super::vocab::Vocabulary;

/// Hashed featurizer settings. `hash()` fingerprints the triple so
/// checkpoints can detect featurizer drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    /// Number of hashed feature slots (the `F` dimension).
    pub features: usize,
    /// Token context window for n-gram features.
    pub window: usize,
    /// Seed folded into every feature hash.
    pub hash_seed: u64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            features: 4096,
            window: 3,
            hash_seed: 0,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.features < 8 {
            return Err(Error::Config("feature dimension must be at least 8".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("feature window must be at least 1".into()));
        }
        Ok(())
    }

    /// Stable fingerprint of the featurizer configuration.
    pub fn hash(&self) -> u64 {
        fnv1a64(
            self.hash_seed,
            format!("f={};w={}", self.features, self.window).as_bytes(),
        )
    }

    fn slot(&self, s: &str) -> u32 {
        (fnv1a64(self.hash_seed, s.as_bytes()) % self.features as u64) as u32
    }
}

/// Per-prompt context computed once and shared across all decoding states
/// of that prompt.
#[derive(Debug, Clone)]
pub struct PromptContext {
    prompt_hash: u64,
    /// Canonical think tokens (derivation plus closing phrase) when the
    /// prompt is solvable.
    guide_think: Option<Vec<String>>,
    /// Canonical answer tokens.
    guide_answer: Option<Vec<String>>,
}

impl PromptContext {
    pub fn new(prompt: &str) -> PromptContext {
        Self::with_solution(prompt, solve_prompt(prompt))
    }

    pub fn with_solution(prompt: &str, solution: Option<PromptSolution>) -> PromptContext {
        PromptContext {
            prompt_hash: fnv1a64(0x70726f, prompt.as_bytes()),
            guide_think: solution.as_ref().map(|s| s.canonical_think_tokens()),
            guide_answer: solution.as_ref().map(|s| s.answer_tokens()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Start,
    Think,
    Between,
    Answer,
    Done,
}

impl Mode {
    fn tag(self) -> u8 {
        match self {
            Mode::Start => 0,
            Mode::Think => 1,
            Mode::Between => 2,
            Mode::Answer => 3,
            Mode::Done => 4,
        }
    }
}

/// Incrementally tracked decoding state: block position plus the trailing
/// token window. Replaying the prefix through `advance` reproduces exactly
/// what sampling saw, so features are a pure function of (prompt, prefix).
#[derive(Debug, Clone)]
pub struct StateTracker {
    mode: Mode,
    pos_in_think: usize,
    pos_in_answer: usize,
    reflected: bool,
    /// Most recent tokens, newest last; capped at the feature window.
    window: Vec<u32>,
    window_cap: usize,
}

impl StateTracker {
    pub fn new(spec: &FeatureSpec) -> StateTracker {
        StateTracker {
            mode: Mode::Start,
            pos_in_think: 0,
            pos_in_answer: 0,
            reflected: false,
            window: Vec::with_capacity(spec.window),
            window_cap: spec.window.max(1),
        }
    }

    /// Build the state after an existing prefix.
    pub fn replay(spec: &FeatureSpec, vocab: &Vocabulary, prefix: &[u32]) -> StateTracker {
        let mut t = StateTracker::new(spec);
        for &tok in prefix {
            t.advance(vocab, tok);
        }
        t
    }

    pub fn advance(&mut self, vocab: &Vocabulary, tok: u32) {
        if Some(tok) == vocab.reflect() {
            self.reflected = true;
        }
        if Some(tok) == vocab.think_open() {
            self.mode = Mode::Think;
            self.pos_in_think = 0;
        } else if Some(tok) == vocab.think_close() {
            self.mode = Mode::Between;
        } else if Some(tok) == vocab.answer_open() {
            self.mode = Mode::Answer;
            self.pos_in_answer = 0;
        } else if Some(tok) == vocab.answer_close() {
            self.mode = Mode::Done;
        } else {
            match self.mode {
                Mode::Think => self.pos_in_think += 1,
                Mode::Answer => self.pos_in_answer += 1,
                _ => {}
            }
        }
        if self.window.len() == self.window_cap {
            self.window.remove(0);
        }
        self.window.push(tok);
    }
}

fn window_tag(window: &[u32], n: usize) -> String {
    let mut parts = Vec::with_capacity(n);
    for i in 0..n {
        // Position ^ marks before-start slots.
        let slot = window.len().checked_sub(n - i).map(|j| window[j]);
        parts.push(match slot {
            Some(id) => id.to_string(),
            None => "^".to_string(),
        });
    }
    parts.join(",")
}

/// Active feature slots of the state, sorted and deduplicated. At least one
/// feature (the bias) is active for any state.
pub fn featurize(spec: &FeatureSpec, ctx: &PromptContext, state: &StateTracker) -> Vec<u32> {
    let mut slots = Vec::with_capacity(16);
    let u = window_tag(&state.window, 1);
    let b = window_tag(&state.window, 2.min(state.window_cap));
    let t = window_tag(&state.window, 3.min(state.window_cap));
    let mode = state.mode.tag();
    let rc = state.reflected as u8;

    slots.push(spec.slot("b"));
    slots.push(spec.slot(&format!("u:{u}")));
    slots.push(spec.slot(&format!("g2:{b}")));
    slots.push(spec.slot(&format!("g3:{t}")));
    slots.push(spec.slot(&format!("m:{mode}")));
    slots.push(spec.slot(&format!("mu:{mode}|{u}")));
    slots.push(spec.slot(&format!("rc:{rc}")));
    slots.push(spec.slot(&format!("ru:{rc}|{u}")));
    slots.push(spec.slot(&format!("rb:{rc}|{b}")));
    match state.mode {
        Mode::Think => {
            let bucket = (state.pos_in_think / 8).min(7);
            slots.push(spec.slot(&format!("tp:{bucket}")));
            if let Some(guide) = &ctx.guide_think {
                if let Some(tok) = guide.get(state.pos_in_think) {
                    slots.push(spec.slot(&format!("sn:{tok}")));
                }
            }
        }
        Mode::Answer => {
            slots.push(spec.slot(&format!("ap:{}", state.pos_in_answer.min(15))));
            if let Some(guide) = &ctx.guide_answer {
                if state.pos_in_answer < guide.len() {
                    slots.push(spec.slot(&format!("sn:{}", guide[state.pos_in_answer])));
                } else if state.pos_in_answer == guide.len() {
                    slots.push(spec.slot("sn:</answer>"));
                }
            }
        }
        _ => {}
    }
    slots.push(spec.slot(&format!("pm:{:x}|{u}", ctx.prompt_hash)));
    slots.push(spec.slot(&format!("pm2:{:x}|{b}", ctx.prompt_hash)));

    slots.sort_unstable();
    slots.dedup();
    slots
}
