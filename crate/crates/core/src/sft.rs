//! Supervised fine-tuning: maximize trace likelihood under the policy.
//!
//! The loss is the dataset mean of per-sequence mean negative
//! log-likelihood (per-token averaging keeps the scale independent of trace
//! length). Optimization is plain gradient descent with linear warmup and an
//! optional cosine decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::CuratedExample;
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::policy::{
    featurize, FeatureSpec, GradBuffer, PolicyParams, PromptContext, StateTracker, Vocabulary,
};

/// Learning-rate schedule shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduler {
    Constant,
    #[default]
    Cosine,
}

/// SFT hyperparameters. The reference learning rate for the full-scale
/// setup is 5e-7; the toy policy uses it scaled by 1000.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scheduler: LrScheduler,
    pub warmup_ratio: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            learning_rate: 5e-4,
            batch_size: 32,
            epochs: 1,
            scheduler: LrScheduler::Cosine,
            warmup_ratio: 0.1,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("sft learning rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("sft batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("sft epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("warmup ratio must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One logged optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SftStepStat {
    pub step: usize,
    pub lr: f64,
    /// Mini-batch loss before the update.
    pub loss: f64,
}

/// Effective learning rate at `step` of `total` steps: linear warmup to the
/// base rate, then constant or cosine decay.
pub fn lr_at(config: &SftConfig, step: usize, total: usize) -> f64 {
    let warmup = ((total as f64) * config.warmup_ratio).floor() as usize;
    if step < warmup {
        return config.learning_rate * step as f64 / warmup as f64;
    }
    match config.scheduler {
        LrScheduler::Constant => config.learning_rate,
        LrScheduler::Cosine => {
            let span = (total.saturating_sub(warmup)).max(1) as f64;
            let progress = (step - warmup) as f64 / span;
            config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// A tokenized example with its per-state feature sets, computed once.
struct Prepared {
    tokens: Vec<u32>,
    states: Vec<Vec<u32>>,
}

fn prepare(
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    dataset: &[CuratedExample],
) -> Result<Vec<Prepared>> {
    dataset
        .iter()
        .map(|example| {
            let tokens = vocab
                .tokenize(&example.trace)
                .map_err(|e| Error::Untokenizable {
                    id: example.id.clone(),
                    piece: e.piece,
                })?;
            if tokens.is_empty() {
                return Err(Error::Untokenizable {
                    id: example.id.clone(),
                    piece: "<empty trace>".into(),
                });
            }
            let ctx = PromptContext::new(&example.prompt);
            let mut state = StateTracker::new(spec);
            let mut states = Vec::with_capacity(tokens.len());
            for &tok in &tokens {
                states.push(featurize(spec, &ctx, &state));
                state.advance(vocab, tok);
            }
            Ok(Prepared { tokens, states })
        })
        .collect()
}

fn batch_loss_grad(
    params: &PolicyParams,
    prepared: &[&Prepared],
    grad: Option<&mut GradBuffer>,
) -> Result<f64> {
    let mut loss = 0.0;
    let batch = prepared.len() as f64;
    let mut grad = grad;
    for ex in prepared {
        let per_token = 1.0 / ex.tokens.len() as f64;
        for (tok, active) in ex.tokens.iter().zip(&ex.states) {
            let logprobs = params.state_logprobs(active)?;
            loss -= per_token * logprobs[*tok as usize];
            if let Some(g) = grad.as_deref_mut() {
                let probs: Vec<f64> = logprobs.iter().map(|lp| lp.exp()).collect();
                // d(mean NLL)/dtheta = -phi (x) (onehot - p), averaged.
                g.add_state(active, &probs, *tok, -per_token / batch);
            }
        }
    }
    Ok(loss / batch)
}

/// Mean per-sequence negative log-likelihood of the dataset. Zero iff the
/// policy assigns probability 1 to every trace.
pub fn sft_loss(
    params: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    dataset: &[CuratedExample],
) -> Result<f64> {
    params.check_compat(vocab, spec)?;
    if dataset.is_empty() {
        return Err(Error::Config("sft dataset is empty".into()));
    }
    let prepared = prepare(vocab, spec, dataset)?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    batch_loss_grad(params, &refs, None)
}

/// Loss plus its analytic gradient over the full dataset (used by the
/// gradient-fidelity checks).
pub fn sft_loss_grad(
    params: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    dataset: &[CuratedExample],
) -> Result<(f64, Vec<f64>)> {
    params.check_compat(vocab, spec)?;
    if dataset.is_empty() {
        return Err(Error::Config("sft dataset is empty".into()));
    }
    let prepared = prepare(vocab, spec, dataset)?;
    let refs: Vec<&Prepared> = prepared.iter().collect();
    let (f, v) = params.dims();
    let mut grad = GradBuffer::zeros(f, v);
    let loss = batch_loss_grad(params, &refs, Some(&mut grad))?;
    Ok((loss, grad.into_inner()))
}

/// Gradient descent on [`sft_loss`]. Returns new parameters and the
/// per-step loss series; the base parameters are never modified.
pub fn sft_train(
    base: &PolicyParams,
    vocab: &Vocabulary,
    spec: &FeatureSpec,
    dataset: &[CuratedExample],
    config: &SftConfig,
) -> Result<(PolicyParams, Vec<SftStepStat>)> {
    config.validate()?;
    base.check_compat(vocab, spec)?;
    if dataset.is_empty() {
        return Err(Error::Config("sft dataset is empty".into()));
    }
    let prepared = prepare(vocab, spec, dataset)?;
    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let (fdim, vdim) = base.dims();
    let mut params = base.clone();
    let mut stats = Vec::with_capacity(total_steps);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("sft-epoch-{epoch}")));
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let mut grad = GradBuffer::zeros(fdim, vdim);
            let loss = batch_loss_grad(&params, &batch, Some(&mut grad)).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite { what, step },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "sft loss",
                    step,
                });
            }
            let lr = lr_at(config, step, total_steps);
            stats.push(SftStepStat { step, lr, loss });
            let theta = params.theta_mut();
            for (t, g) in theta.iter_mut().zip(grad.as_slice()) {
                *t -= lr * g;
            }
            step += 1;
        }
    }
    Ok((params, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::CuratedExample;
    use crate::policy::{sample, SampleConfig};

    fn example(id: &str, prompt: &str, trace: &str) -> CuratedExample {
        CuratedExample {
            id: id.into(),
            prompt: prompt.into(),
            ground_truth: "7".into(),
            trace: trace.into(),
            think_words: 0,
            source_iteration: 0,
        }
    }

    fn setup() -> (Vocabulary, FeatureSpec) {
        (
            Vocabulary::standard(),
            FeatureSpec {
                features: 512,
                ..FeatureSpec::default()
            },
        )
    }

    #[test]
    fn uniform_single_token_loss_is_ln_v() {
        let vocab = Vocabulary::custom(&["a", crate::policy::EOS]).unwrap();
        let spec = FeatureSpec {
            features: 16,
            window: 2,
            hash_seed: 0,
        };
        let params = PolicyParams::zeros(&vocab, &spec);
        let data = vec![example("e", "p", "a")];
        let loss = sft_loss(&params, &vocab, &spec, &data).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicating_the_dataset_keeps_the_loss() {
        let (vocab, spec) = setup();
        let params = PolicyParams::zeros(&vocab, &spec);
        let data = vec![
            example("a", "Compute: 3 + 4", "<think> 3 + 4 = 7 </think> <answer> 7 </answer> <eos>"),
            example("b", "Compute: 2 + 2", "<think> 2 + 2 = 4 </think> <answer> 4 </answer> <eos>"),
        ];
        let doubled: Vec<CuratedExample> = data.iter().chain(data.iter()).cloned().collect();
        let l1 = sft_loss(&params, &vocab, &spec, &data).unwrap();
        let l2 = sft_loss(&params, &vocab, &spec, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(l1 >= 0.0);
    }

    #[test]
    fn untokenizable_trace_names_the_record() {
        let (vocab, spec) = setup();
        let params = PolicyParams::zeros(&vocab, &spec);
        let data = vec![example("bad-rec", "p", "<think> unknownword </think>")];
        match sft_loss(&params, &vocab, &spec, &data) {
            Err(Error::Untokenizable { id, piece }) => {
                assert_eq!(id, "bad-rec");
                assert_eq!(piece, "unknownword");
            }
            other => panic!("expected Untokenizable, got {other:?}"),
        }
    }

    #[test]
    fn zero_learning_rate_returns_base() {
        let (vocab, spec) = setup();
        let base = PolicyParams::zeros(&vocab, &spec);
        let data = vec![example(
            "a",
            "Compute: 3 + 4",
            "<think> 3 + 4 = 7 </think> <answer> 7 </answer> <eos>",
        )];
        let config = SftConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..SftConfig::default()
        };
        let (trained, stats) = sft_train(&base, &vocab, &spec, &data, &config).unwrap();
        assert_eq!(trained.theta(), base.theta());
        assert_eq!(stats.len(), 3);
    }

    #[test]
    fn warmup_starts_at_zero_and_cosine_decays() {
        let config = SftConfig {
            warmup_ratio: 0.1,
            ..SftConfig::default()
        };
        let total = 100;
        assert_eq!(lr_at(&config, 0, total), 0.0);
        let warmup = 10;
        // Non-decreasing during warmup, non-increasing afterwards.
        for s in 1..warmup {
            assert!(lr_at(&config, s, total) >= lr_at(&config, s - 1, total));
        }
        for s in (warmup + 1)..total {
            assert!(lr_at(&config, s, total) <= lr_at(&config, s - 1, total) + 1e-15);
        }
        assert!((lr_at(&config, warmup, total) - config.learning_rate).abs() < 1e-15);
    }

    #[test]
    fn loss_descends_during_training() {
        let (vocab, spec) = setup();
        let base = PolicyParams::zeros(&vocab, &spec);
        let tasks = crate::taskgen::generate_tasks(crate::taskgen::Difficulty::Tier1, 50, 3).unwrap();
        let data: Vec<CuratedExample> = tasks
            .iter()
            .map(|t| {
                let sol = crate::solver::solve_prompt(&t.prompt).unwrap();
                let think = sol.canonical_think_tokens().join(" ");
                example(
                    &t.id,
                    &t.prompt,
                    &format!("<think> {think} </think> <answer> {} </answer> <eos>", sol.answer),
                )
            })
            .collect();
        let config = SftConfig {
            learning_rate: 0.5,
            batch_size: 10,
            epochs: 40, // 200 steps
            scheduler: LrScheduler::Constant,
            warmup_ratio: 0.0,
            seed: 1,
        };
        let initial = sft_loss(&base, &vocab, &spec, &data).unwrap();
        let (trained, stats) = sft_train(&base, &vocab, &spec, &data, &config).unwrap();
        assert_eq!(stats.len(), 200);
        let final_loss = sft_loss(&trained, &vocab, &spec, &data).unwrap();
        assert!(
            final_loss < initial,
            "loss did not descend: {initial} -> {final_loss}"
        );
        // Base parameters are untouched.
        assert!(base.theta().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn memorizes_trained_traces_at_desk_scale() {
        let (vocab, spec) = setup();
        let base = PolicyParams::zeros(&vocab, &spec);
        let tasks = crate::taskgen::generate_tasks(crate::taskgen::Difficulty::Tier1, 20, 9).unwrap();
        let data: Vec<CuratedExample> = tasks
            .iter()
            .map(|t| {
                let sol = crate::solver::solve_prompt(&t.prompt).unwrap();
                let think = sol.canonical_think_tokens().join(" ");
                example(
                    &t.id,
                    &t.prompt,
                    &format!("<think> {think} </think> <answer> {} </answer> <eos>", sol.answer),
                )
            })
            .collect();
        let config = SftConfig {
            learning_rate: 0.8,
            batch_size: 20,
            epochs: 120,
            scheduler: LrScheduler::Cosine,
            warmup_ratio: 0.1,
            seed: 2,
        };
        let (trained, _) = sft_train(&base, &vocab, &spec, &data, &config).unwrap();
        let greedy = SampleConfig {
            temperature: 0.01,
            top_k: 1,
            top_p: 0.001,
            max_len: 64,
            seed: 0,
        };
        let mut hits = 0;
        for (task, ex) in tasks.iter().zip(&data) {
            let traj = sample(&trained, &vocab, &spec, &task.prompt, &greedy).unwrap();
            if traj.render(&vocab) == ex.trace {
                hits += 1;
            }
        }
        assert!(
            hits * 100 >= data.len() * 80,
            "memorized only {hits}/{} traces",
            data.len()
        );
    }

    #[test]
    fn divergence_reports_the_step() {
        let (vocab, spec) = setup();
        let base = PolicyParams::zeros(&vocab, &spec);
        let data = vec![example(
            "a",
            "Compute: 3 + 4",
            "<think> 3 + 4 = 7 </think> <answer> 7 </answer> <eos>",
        )];
        let config = SftConfig {
            learning_rate: 1e307,
            epochs: 10,
            scheduler: LrScheduler::Constant,
            warmup_ratio: 0.0,
            ..SftConfig::default()
        };
        match sft_train(&base, &vocab, &spec, &data, &config) {
            Err(Error::NonFinite { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
