//! Trajectory sampling (temperature, top-k, top-p) and exact enumeration
//! of short trajectory spaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::{featurize, FeatureSpec, PromptContext, StateTracker};
use super::params::{softmax_from_logprobs, PolicyParams};
use super::vocab::Vocabulary;

/// Decoding settings. `top_k = 1` is greedy decoding regardless of seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            temperature: 1.0,
            top_k: usize::MAX,
            top_p: 1.0,
            max_len: 64,
            seed: 0,
        }
    }
}

impl SampleConfig {
    fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.top_k != usize::MAX && self.top_k > vocab_size {
            return Err(Error::Config(format!(
                "top_k {} exceeds vocabulary size {vocab_size}",
                self.top_k
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("top_p must lie in (0, 1]".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// One sampled response. `logprobs` are recorded under the *untruncated*
/// temperature-1 distribution of the generating parameters, which is what
/// the GRPO importance ratios need; the truncated distribution is used only
/// to draw tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub prompt: String,
    pub tokens: Vec<u32>,
    pub logprobs: Vec<f64>,
    pub temperature: f64,
    /// False when decoding hit `max_len` before emitting EOS.
    pub ended_with_eos: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Render back to text via the vocabulary.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        vocab.detokenize(&self.tokens)
    }
}

/// Candidate tokens sorted by descending sampling probability (ties broken
/// by token id), truncated by top-k then top-p, and renormalized.
fn truncated_distribution(
    logits: &[f64],
    temperature: f64,
    top_k: usize,
    top_p: f64,
) -> Vec<(u32, f64)> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut scaled: Vec<(u32, f64)> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| (i as u32, ((l - max) / temperature).exp()))
        .collect();
    scaled.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scaled.truncate(top_k.min(scaled.len()));
    let kept_mass: f64 = scaled.iter().map(|(_, p)| p).sum();
    // Nucleus cut: smallest prefix reaching top_p of the kept mass. The
    // first candidate always survives.
    let mut cum = 0.0;
    let mut cut = scaled.len();
    for (i, (_, p)) in scaled.iter().enumerate() {
        cum += p / kept_mass;
        if cum >= top_p - 1e-12 {
            cut = i + 1;
            break;
        }
    }
    scaled.truncate(cut);
    let total: f64 = scaled.iter().map(|(_, p)| p).sum();
    for (_, p) in &mut scaled {
        *p /= total;
    }
    scaled
}

/// Sample one trajectory. Deterministic for a fixed seed.
pub fn sample(
    params: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    prompt: &str,
    cfg: &SampleConfig,
) -> Result<Trajectory> {
    params.check_compat(vocab, spec)?;
    cfg.validate(vocab.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctx = PromptContext::new(prompt);
    let mut state = StateTracker::new(spec);
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut ended_with_eos = false;
    while tokens.len() < cfg.max_len {
        let active = featurize(spec, &ctx, &state);
        let raw_logprobs = params.state_logprobs(&active)?;
        let dist = truncated_distribution(
            &params.logits(&active),
            cfg.temperature,
            cfg.top_k,
            cfg.top_p,
        );
        let chosen = if dist.len() == 1 {
            dist[0].0
        } else {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = dist[dist.len() - 1].0;
            for &(id, p) in &dist {
                acc += p;
                if u < acc {
                    pick = id;
                    break;
                }
            }
            pick
        };
        tokens.push(chosen);
        logprobs.push(raw_logprobs[chosen as usize]);
        state.advance(vocab, chosen);
        if chosen == vocab.eos() {
            ended_with_eos = true;
            break;
        }
    }
    Ok(Trajectory {
        prompt: prompt.to_string(),
        tokens,
        logprobs,
        temperature: cfg.temperature,
        ended_with_eos,
    })
}

/// Exhaustively enumerate every trajectory of length at most `max_len`
/// (ending at EOS or truncated there), with its exact probability under the
/// temperature-1 policy. Guarded to at most 1e6 leaves.
pub fn enumerate_trajectories(
    params: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    prompt: &str,
    max_len: usize,
) -> Result<Vec<(Trajectory, f64)>> {
    params.check_compat(vocab, spec)?;
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let combos = (vocab.len() as f64).powi(max_len as i32);
    if combos > 1e6 {
        return Err(Error::EnumerationTooLarge { combos });
    }
    let ctx = PromptContext::new(prompt);
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    walk(
        params,
        vocab,
        spec,
        &ctx,
        prompt,
        &StateTracker::new(spec),
        &mut tokens,
        &mut logprobs,
        max_len,
        &mut out,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    params: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    ctx: &PromptContext,
    prompt: &str,
    state: &StateTracker,
    tokens: &mut Vec<u32>,
    logprobs: &mut Vec<f64>,
    max_len: usize,
    out: &mut Vec<(Trajectory, f64)>,
) -> Result<()> {
    let active = featurize(spec, ctx, state);
    let raw_logprobs = params.state_logprobs(&active)?;
    for tok in 0..vocab.len() as u32 {
        tokens.push(tok);
        logprobs.push(raw_logprobs[tok as usize]);
        let is_eos = tok == vocab.eos();
        if is_eos || tokens.len() == max_len {
            let total_logprob: f64 = logprobs.iter().sum();
            out.push((
                Trajectory {
                    prompt: prompt.to_string(),
                    tokens: tokens.clone(),
                    logprobs: logprobs.clone(),
                    temperature: 1.0,
                    ended_with_eos: is_eos,
                },
                total_logprob.exp(),
            ));
        } else {
            let mut next = state.clone();
            next.advance(vocab, tok);
            walk(
                params, vocab, spec, ctx, prompt, &next, tokens, logprobs, max_len, out,
            )?;
        }
        tokens.pop();
        logprobs.pop();
    }
    Ok(())
}
