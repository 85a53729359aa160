//! Policy parameters: a dense `F x V` matrix over hashed features and
//! vocabulary tokens, with exact log-probabilities, the analytic gradient of
//! trajectory log-likelihood, and full-precision JSON checkpoints.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

use super::features::{featurize, FeatureSpec, PromptContext, StateTracker};
use super::vocab::Vocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Log-linear policy weights. Instances are plain values: training steps
/// produce new instances and never mutate parameters visible to samplers.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    theta: Vec<f64>,
    features: usize,
    vocab_size: usize,
    version: u32,
    vocab_hash: u64,
    feature_hash: u64,
}

impl PolicyParams {
    /// Fresh all-zero parameters (the "base model": a uniform policy).
    pub fn zeros(vocab: &Vocabulary, spec: &FeatureSpec) -> PolicyParams {
        PolicyParams {
            theta: vec![0.0; spec.features * vocab.len()],
            features: spec.features,
            vocab_size: vocab.len(),
            version: CHECKPOINT_VERSION,
            vocab_hash: vocab.hash(),
            feature_hash: spec.hash(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.features, self.vocab_size)
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    pub fn feature_hash(&self) -> u64 {
        self.feature_hash
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Verify that these parameters belong to the given vocabulary and
    /// featurizer.
    pub fn check_compat(&self, vocab: &Vocabulary, spec: &FeatureSpec) -> Result<()> {
        if self.vocab_hash != vocab.hash() {
            return Err(Error::HashMismatch {
                expected: vocab.hash(),
                found: self.vocab_hash,
            });
        }
        if self.feature_hash != spec.hash() {
            return Err(Error::HashMismatch {
                expected: spec.hash(),
                found: self.feature_hash,
            });
        }
        Ok(())
    }

    /// All entries finite.
    pub fn validate_finite(&self) -> Result<()> {
        if self.theta.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what: "policy parameters",
                step: 0,
            })
        }
    }

    /// Euclidean distance to another parameter matrix of the same shape.
    pub fn l2_distance(&self, other: &PolicyParams) -> f64 {
        assert_eq!(self.theta.len(), other.theta.len());
        self.theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Raw logits for a state given its active feature slots.
    pub fn logits(&self, active: &[u32]) -> Vec<f64> {
        let v = self.vocab_size;
        let mut out = vec![0.0; v];
        for &slot in active {
            let row = &self.theta[slot as usize * v..(slot as usize + 1) * v];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
        out
    }

    /// Log-probabilities for a state given its active feature slots.
    pub fn state_logprobs(&self, active: &[u32]) -> Result<Vec<f64>> {
        let logits = self.logits(active);
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "policy logits",
                step: 0,
            });
        }
        Ok(log_softmax(&logits))
    }

    /// Next-token log-probabilities after `prefix`, i.e. the log-softmax of
    /// `theta^T phi(prompt, prefix)`.
    pub fn token_logprobs(
        &self,
        vocab: &Vocabulary,
        spec: &FeatureSpec,
        prompt: &str,
        prefix: &[u32],
    ) -> Result<Vec<f64>> {
        self.check_compat(vocab, spec)?;
        let ctx = PromptContext::new(prompt);
        let state = StateTracker::replay(spec, vocab, prefix);
        self.state_logprobs(&featurize(spec, &ctx, &state))
    }

    /// Gradient of `sum_t log p(tokens[t] | prompt, tokens[..t])` with
    /// respect to theta, as a dense `F x V` matrix. The empty continuation
    /// yields the zero matrix.
    pub fn logprob_grad(
        &self,
        vocab: &Vocabulary,
        spec: &FeatureSpec,
        prompt: &str,
        tokens: &[u32],
    ) -> Result<Vec<f64>> {
        self.check_compat(vocab, spec)?;
        let mut grad = GradBuffer::zeros(self.features, self.vocab_size);
        let ctx = PromptContext::new(prompt);
        let mut state = StateTracker::new(spec);
        for &tok in tokens {
            if tok as usize >= self.vocab_size {
                return Err(Error::Config(format!(
                    "token id {tok} outside vocabulary of size {}",
                    self.vocab_size
                )));
            }
            let active = featurize(spec, &ctx, &state);
            let probs = softmax_from_logprobs(&self.state_logprobs(&active)?);
            grad.add_state(&active, &probs, tok, 1.0);
            state.advance(vocab, tok);
        }
        Ok(grad.into_inner())
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|x| x - log_z).collect()
}

pub fn softmax_from_logprobs(logprobs: &[f64]) -> Vec<f64> {
    logprobs.iter().map(|lp| lp.exp()).collect()
}

/// Dense gradient accumulator for the log-linear policy. One call per
/// visited state adds `scale * phi (x) (onehot(chosen) - p)`.
pub struct GradBuffer {
    data: Vec<f64>,
    vocab_size: usize,
}

impl GradBuffer {
    pub fn zeros(features: usize, vocab_size: usize) -> GradBuffer {
        GradBuffer {
            data: vec![0.0; features * vocab_size],
            vocab_size,
        }
    }

    pub fn add_state(&mut self, active: &[u32], probs: &[f64], chosen: u32, scale: f64) {
        for &slot in active {
            let row = &mut self.data[slot as usize * self.vocab_size..][..self.vocab_size];
            for (v, (r, p)) in row.iter_mut().zip(probs).enumerate() {
                let indicator = (v as u32 == chosen) as u8 as f64;
                *r += scale * (indicator - p);
            }
        }
    }

    /// Add an arbitrary per-token vector (used by the KL gradient).
    pub fn add_state_vector(&mut self, active: &[u32], values: &[f64], scale: f64) {
        for &slot in active {
            let row = &mut self.data[slot as usize * self.vocab_size..][..self.vocab_size];
            for (r, val) in row.iter_mut().zip(values) {
                *r += scale * val;
            }
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Deserialize)]
struct CheckpointFile {
    version: u32,
    vocab: Vec<String>,
    feature_spec: FeatureSpecFile,
    theta: Vec<f64>,
}

#[derive(Deserialize)]
struct FeatureSpecFile {
    f: usize,
    w: usize,
    hash_seed: u64,
}

/// Write a checkpoint. Floats are rendered with 17 significant digits so
/// that loading recovers bit-identical parameters.
pub fn save_checkpoint(
    params: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    params.check_compat(vocab, spec)?;
    params.validate_finite()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);
    write!(w, "{{\"version\":{},\"vocab\":[", params.version).map_err(io_err)?;
    for (i, tok) in vocab.tokens().iter().enumerate() {
        if i > 0 {
            w.write_all(b",").map_err(io_err)?;
        }
        let quoted = serde_json::to_string(tok).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        w.write_all(quoted.as_bytes()).map_err(io_err)?;
    }
    write!(
        w,
        "],\"feature_spec\":{{\"f\":{},\"w\":{},\"hash_seed\":{}}},\"theta\":[",
        spec.features, spec.window, spec.hash_seed
    )
    .map_err(io_err)?;
    for (i, x) in params.theta.iter().enumerate() {
        if i > 0 {
            w.write_all(b",").map_err(io_err)?;
        }
        write!(w, "{x:.16e}").map_err(io_err)?;
    }
    w.write_all(b"]}").map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Load a checkpoint, reconstructing the vocabulary and featurizer it was
/// written with.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PolicyParams, Vocabulary, FeatureSpec)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let vocab = Vocabulary::custom(&file.vocab)?;
    let spec = FeatureSpec {
        features: file.feature_spec.f,
        window: file.feature_spec.w,
        hash_seed: file.feature_spec.hash_seed,
    };
    spec.validate()?;
    if file.theta.len() != spec.features * vocab.len() {
        return Err(Error::Config(format!(
            "checkpoint theta has {} entries, expected {}",
            file.theta.len(),
            spec.features * vocab.len()
        )));
    }
    let params = PolicyParams {
        theta: file.theta,
        features: spec.features,
        vocab_size: vocab.len(),
        version: file.version,
        vocab_hash: vocab.hash(),
        feature_hash: spec.hash(),
    };
    params.validate_finite()?;
    Ok((params, vocab, spec))
}
