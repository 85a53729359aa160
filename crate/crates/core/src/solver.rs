//! Canonical solutions for the synthetic task prompts.
//!
//! Given a prompt string, `solve_prompt` computes the final answer and a
//! canonical step-by-step derivation rendered as policy tokens. The
//! featurizer uses it as the stand-in for a pretrained backbone's latent
//! competence (a real base model already "knows" the arithmetic; training
//! only has to teach the policy to surface it in the right format), and the
//! synthetic teacher uses it to phrase its reasoning traces.
//!
//! Unparseable prompts simply yield `None`; nothing in the pipeline assumes
//! every prompt is solvable.

/// Canonical solution of a task prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSolution {
    /// Final answer in canonical form (base-10 integer string).
    pub answer: String,
    /// Derivation steps as token surfaces, e.g. `["3", "+", "4", "=", "7"]`.
    pub deriv_tokens: Vec<String>,
}

impl PromptSolution {
    /// Digit-level tokens of the final answer (`"-"` first when negative).
    pub fn answer_tokens(&self) -> Vec<String> {
        number_tokens(&self.answer)
    }

    /// The full canonical think block: derivation followed by the closing
    /// `so the answer is <result>` phrase.
    pub fn canonical_think_tokens(&self) -> Vec<String> {
        let mut toks = self.deriv_tokens.clone();
        for w in ["so", "the", "answer", "is"] {
            toks.push(w.to_string());
        }
        toks.extend(self.answer_tokens());
        toks
    }
}

/// Split a rendered integer into single-character tokens (digits and an
/// optional leading minus), matching the policy vocabulary.
pub fn number_tokens(s: &str) -> Vec<String> {
    s.chars().map(|c| c.to_string()).collect()
}

/// Solve one of the synthetic prompt forms. Returns `None` when the prompt
/// does not match any known form.
pub fn solve_prompt(prompt: &str) -> Option<PromptSolution> {
    if let Some(expr) = prompt.strip_prefix("Compute: ") {
        return solve_expression(expr.trim());
    }
    if let Some(rest) = prompt.strip_prefix("Which is larger: ") {
        return solve_comparison(rest.trim().strip_suffix('?')?);
    }
    if let Some(list) = prompt.strip_prefix("Count the even numbers in: ") {
        return solve_even_count(list.trim());
    }
    None
}

fn solve_comparison(rest: &str) -> Option<PromptSolution> {
    let (a, b) = rest.split_once(" or ")?;
    let x: i64 = a.trim().parse().ok()?;
    let y: i64 = b.trim().parse().ok()?;
    let mut deriv = vec!["we".to_string(), "have".to_string()];
    deriv.extend(number_tokens(&x.to_string()));
    deriv.push("or".to_string());
    deriv.extend(number_tokens(&y.to_string()));
    Some(PromptSolution {
        answer: x.max(y).to_string(),
        deriv_tokens: deriv,
    })
}

fn solve_even_count(list: &str) -> Option<PromptSolution> {
    let mut nums = Vec::new();
    for piece in list.split_whitespace() {
        nums.push(piece.parse::<i64>().ok()?);
    }
    if nums.is_empty() {
        return None;
    }
    let count = nums.iter().filter(|n| *n % 2 == 0).count();
    let mut deriv = vec!["we".to_string(), "check".to_string()];
    for n in &nums {
        deriv.extend(number_tokens(&n.to_string()));
    }
    Some(PromptSolution {
        answer: count.to_string(),
        deriv_tokens: deriv,
    })
}

fn solve_expression(expr: &str) -> Option<PromptSolution> {
    let mut parser = ExprParser {
        tokens: lex(expr)?,
        pos: 0,
        steps: Vec::new(),
    };
    let value = parser.parse_expr()?;
    if parser.pos != parser.tokens.len() {
        return None;
    }
    // A bare number has no reduction step; restate it as the derivation.
    let deriv_tokens = if parser.steps.is_empty() {
        number_tokens(&value.to_string())
    } else {
        let mut toks = Vec::new();
        for (i, step) in parser.steps.iter().enumerate() {
            if i > 0 {
                toks.push("so".to_string());
            }
            toks.extend(number_tokens(&step.lhs.to_string()));
            toks.push(step.op.to_string());
            toks.extend(number_tokens(&step.rhs.to_string()));
            toks.push("=".to_string());
            toks.extend(number_tokens(&step.result.to_string()));
        }
        toks
    };
    Some(PromptSolution {
        answer: value.to_string(),
        deriv_tokens,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(i64),
    Op(char),
    Open,
    Close,
}

fn lex(expr: &str) -> Option<Vec<Tok>> {
    let mut toks = Vec::new();
    let mut chars = expr.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ' ' => {
                chars.next();
            }
            '0'..='9' => {
                let mut n: i64 = 0;
                while let Some(d) = chars.peek().and_then(|c| c.to_digit(10)) {
                    n = n.checked_mul(10)?.checked_add(d as i64)?;
                    chars.next();
                }
                toks.push(Tok::Num(n));
            }
            '+' | '-' | '*' => {
                toks.push(Tok::Op(c));
                chars.next();
            }
            '(' => {
                toks.push(Tok::Open);
                chars.next();
            }
            ')' => {
                toks.push(Tok::Close);
                chars.next();
            }
            _ => return None,
        }
    }
    Some(toks)
}

struct Step {
    lhs: i64,
    op: char,
    rhs: i64,
    result: i64,
}

/// Recursive-descent evaluator. Reductions are recorded in evaluation
/// order (operands before their operator, `*` before `+`/`-`,
/// left-to-right within a precedence level), which is the order a person
/// would write the steps out.
struct ExprParser {
    tokens: Vec<Tok>,
    pos: usize,
    steps: Vec<Step>,
}

impl ExprParser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn reduce(&mut self, lhs: i64, op: char, rhs: i64) -> Option<i64> {
        let result = match op {
            '+' => lhs.checked_add(rhs)?,
            '-' => lhs.checked_sub(rhs)?,
            '*' => lhs.checked_mul(rhs)?,
            _ => return None,
        };
        self.steps.push(Step {
            lhs,
            op,
            rhs,
            result,
        });
        Some(result)
    }

    fn parse_expr(&mut self) -> Option<i64> {
        let mut value = self.parse_term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.parse_term()?;
            value = self.reduce(value, op, rhs)?;
        }
        Some(value)
    }

    fn parse_term(&mut self) -> Option<i64> {
        let mut value = self.parse_factor()?;
        while let Some(Tok::Op('*')) = self.peek() {
            self.pos += 1;
            let rhs = self.parse_factor()?;
            value = self.reduce(value, '*', rhs)?;
        }
        Some(value)
    }

    fn parse_factor(&mut self) -> Option<i64> {
        match self.peek().cloned()? {
            Tok::Num(n) => {
                self.pos += 1;
                Some(n)
            }
            Tok::Open => {
                self.pos += 1;
                let value = self.parse_expr()?;
                match self.peek() {
                    Some(Tok::Close) => {
                        self.pos += 1;
                        Some(value)
                    }
                    _ => None,
                }
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joined_deriv(prompt: &str) -> String {
        solve_prompt(prompt).unwrap().deriv_tokens.join(" ")
    }

    #[test]
    fn single_operation() {
        let sol = solve_prompt("Compute: 3 + 4").unwrap();
        assert_eq!(sol.answer, "7");
        assert_eq!(sol.deriv_tokens.join(" "), "3 + 4 = 7");
    }

    #[test]
    fn precedence_before_addition() {
        let sol = solve_prompt("Compute: 12 + 34 * 2").unwrap();
        assert_eq!(sol.answer, "80");
        assert_eq!(sol.deriv_tokens.join(" "), "3 4 * 2 = 6 8 so 1 2 + 6 8 = 8 0");
    }

    #[test]
    fn parentheses_first() {
        let sol = solve_prompt("Compute: ( 5 - 2 ) * 4 + 1").unwrap();
        assert_eq!(sol.answer, "13");
        assert_eq!(joined_deriv("Compute: ( 5 - 2 ) * 4 + 1"), "5 - 2 = 3 so 3 * 4 = 1 2 so 1 2 + 1 = 1 3");
        assert_eq!(sol.answer_tokens(), vec!["1", "3"]);
    }

    #[test]
    fn comparison_and_counting() {
        let sol = solve_prompt("Which is larger: 23 or 71?").unwrap();
        assert_eq!(sol.answer, "71");
        assert_eq!(sol.deriv_tokens.join(" "), "we have 2 3 or 7 1");

        let sol = solve_prompt("Count the even numbers in: 3 8 5 10 7").unwrap();
        assert_eq!(sol.answer, "2");
        assert_eq!(sol.deriv_tokens[..2].join(" "), "we check");
    }

    #[test]
    fn canonical_think_ends_with_answer() {
        let sol = solve_prompt("Compute: 9 * 9").unwrap();
        let think = sol.canonical_think_tokens().join(" ");
        assert_eq!(think, "9 * 9 = 8 1 so the answer is 8 1");
    }

    #[test]
    fn garbage_prompts_are_none() {
        assert!(solve_prompt("what is love").is_none());
        assert!(solve_prompt("Compute: 3 / 4").is_none());
        assert!(solve_prompt("Compute: (3 + ").is_none());
        assert!(solve_prompt("Which is larger: a or b?").is_none());
        assert!(solve_prompt("Count the even numbers in: ").is_none());
    }
}
