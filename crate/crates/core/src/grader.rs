//! Answer extraction, normalization and the binary correctness reward.
//!
//! A well-formed trace looks like
//! `<think> ... </think> <answer> ... </answer>`; the grader extracts the
//! first think block and the last answer block, normalizes both sides and
//! compares. The reward is strictly 0/1 on final-answer correctness — no
//! format or template shaping of any kind.

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Unit words stripped from the end of an answer before comparison.
const UNIT_WORDS: [&str; 4] = ["cm", "m", "kg", "degrees"];

/// Structured view of a raw trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTrace {
    /// Contents of the first think block ("" when absent).
    pub think_text: String,
    /// Contents of the last answer block ("" when absent).
    pub answer_text: String,
    /// Both blocks present, in think-before-answer order.
    pub well_formed: bool,
    /// Whether a complete answer block was found at all.
    pub has_answer: bool,
    /// Whitespace-delimited word count of `think_text`.
    pub word_count: usize,
}

/// Byte offsets of the blocks inside a raw trace, when present.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct BlockSpans {
    /// (content_start, content_end) of the first think block.
    pub think: Option<(usize, usize)>,
    /// (content_start, content_end) of the last answer block.
    pub answer: Option<(usize, usize)>,
}

pub(crate) fn block_spans(raw: &str) -> BlockSpans {
    let mut spans = BlockSpans::default();
    if let Some(open) = raw.find(THINK_OPEN) {
        let start = open + THINK_OPEN.len();
        if let Some(close) = raw[start..].find(THINK_CLOSE) {
            spans.think = Some((start, start + close));
        }
    }
    if let Some(open) = raw.rfind(ANSWER_OPEN) {
        let start = open + ANSWER_OPEN.len();
        if let Some(close) = raw[start..].find(ANSWER_CLOSE) {
            spans.answer = Some((start, start + close));
        }
    }
    spans
}

/// Extract the first think block and the last answer block. Missing blocks
/// come back as empty strings with `well_formed == false`; this never fails,
/// whatever the input bytes.
pub fn parse_trace(raw: &str) -> ParsedTrace {
    let spans = block_spans(raw);
    let think_text = spans
        .think
        .map(|(s, e)| raw[s..e].trim().to_string())
        .unwrap_or_default();
    let answer_text = spans
        .answer
        .map(|(s, e)| raw[s..e].trim().to_string())
        .unwrap_or_default();
    let well_formed = match (spans.think, spans.answer) {
        // First think block must close before the last answer block opens.
        (Some((_, think_end)), Some((ans_start, _))) => think_end <= ans_start,
        _ => false,
    };
    let word_count = think_text.split_whitespace().count();
    ParsedTrace {
        think_text,
        answer_text,
        well_formed,
        has_answer: spans.answer.is_some(),
        word_count,
    }
}

/// Canonicalize an answer string for comparison: trim, lowercase, strip
/// trailing punctuation and a trailing unit word, re-render numbers
/// canonically ("4.0" -> "4", "04" -> "4"), and restore single
/// multiple-choice letters to upper case. Unparseable content falls back to
/// the cleaned string unchanged. Idempotent.
pub fn normalize_answer(raw: &str) -> String {
    let mut s = raw.trim().to_lowercase();
    // Strip trailing punctuation and unit words to a fixpoint so the result
    // is stable under re-normalization.
    loop {
        let before = s.len();
        while let Some(last) = s.chars().last() {
            if matches!(last, '.' | ',' | ';' | ':' | '!' | '?') {
                s.pop();
                while s.ends_with(char::is_whitespace) {
                    s.pop();
                }
            } else {
                break;
            }
        }
        if let Some((head, last_word)) = s.rsplit_once(char::is_whitespace) {
            if UNIT_WORDS.contains(&last_word) {
                s = head.trim_end().to_string();
            }
        } else if UNIT_WORDS.contains(&s.as_str()) {
            s.clear();
        }
        if s.len() == before {
            break;
        }
    }
    if let Some(canonical) = canonical_number(&s) {
        return canonical;
    }
    let mut chars = s.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_ascii_alphabetic() {
            return c.to_ascii_uppercase().to_string();
        }
    }
    s
}

/// Re-render a numeric string in canonical form: integers without leading
/// zeros, fractions in shortest round-trip form. `None` when `s` is not a
/// plain finite number.
fn canonical_number(s: &str) -> Option<String> {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.')) {
        return None;
    }
    let value: f64 = s.parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    if value == value.trunc() && value.abs() < 1e15 {
        // Normalizes "-0" to "0" as well.
        Some(format!("{}", value as i64))
    } else {
        Some(format!("{value}"))
    }
}

/// True when two answers normalize to the same canonical string, or when
/// both parse as finite numbers within a relative tolerance of 1e-6.
pub fn grade_answer(predicted: &str, ground_truth: &str) -> bool {
    let a = normalize_answer(predicted);
    let b = normalize_answer(ground_truth);
    if a == b {
        return true;
    }
    if let (Ok(x), Ok(y)) = (a.parse::<f64>(), b.parse::<f64>()) {
        if x.is_finite() && y.is_finite() {
            return (x - y).abs() <= 1e-6 * x.abs().max(y.abs());
        }
    }
    false
}

/// Binary correctness reward: 1 iff the trace contains an answer block whose
/// contents grade correct against the ground truth. Think-block malformation
/// is irrelevant; there is no format bonus.
pub fn reward(trace_raw: &str, ground_truth: &str) -> u8 {
    let parsed = parse_trace(trace_raw);
    if parsed.has_answer && grade_answer(&parsed.answer_text, ground_truth) {
        1
    } else {
        0
    }
}
