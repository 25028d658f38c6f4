//! Token counting, per-sample ledgers and run budgets.

use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

/// Counts tokens in a piece of text.
pub trait Tokenizer {
    fn count(&self, text: &str) -> u64;
}

/// `ceil(bytes / 4)`, used whenever the backend does not report usage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeuristicTokenizer;

impl Tokenizer for HeuristicTokenizer {
    fn count(&self, text: &str) -> u64 {
        (text.len() as u64).div_ceil(4)
    }
}

/// One token per whitespace-separated word. The mock backend uses it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// True when the counts come from the byte heuristic rather than the
    /// backend.
    #[serde(default)]
    pub estimated: bool,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestUsage {
    pub request_id: String,
    pub input: u64,
    pub output: u64,
}

/// Token totals for one sample. Totals always equal the per-request sums.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    input_tokens: u64,
    output_tokens: u64,
    per_request: Vec<RequestUsage>,
    #[serde(default)]
    estimated: bool,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, request_id: impl Into<String>, usage: Usage) {
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
        self.estimated |= usage.estimated;
        self.per_request.push(RequestUsage {
            request_id: request_id.into(),
            input: usage.input_tokens,
            output: usage.output_tokens,
        });
    }

    pub fn input_tokens(&self) -> u64 {
        self.input_tokens
    }

    pub fn output_tokens(&self) -> u64 {
        self.output_tokens
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    pub fn per_request(&self) -> &[RequestUsage] {
        &self.per_request
    }

    pub fn is_estimated(&self) -> bool {
        self.estimated
    }

    /// Recomputes totals from the per-request list; used when loading a
    /// ledger from disk.
    pub fn is_consistent(&self) -> bool {
        let (i, o) = self.per_request.iter().fold((0u64, 0u64), |(i, o), r| (i + r.input, o + r.output));
        i == self.input_tokens && o == self.output_tokens
    }
}

/// Token and wall-clock allowance for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_total_tokens: Option<u64>,
    pub max_wall_clock: Option<Duration>,
    pub consumed_tokens: u64,
    pub elapsed: Duration,
}

impl Budget {
    pub fn new(max_total_tokens: Option<u64>, max_wall_clock: Option<Duration>) -> Self {
        Budget { max_total_tokens, max_wall_clock, consumed_tokens: 0, elapsed: Duration::ZERO }
    }

    pub fn unlimited() -> Self {
        Self::new(None, None)
    }

    pub fn tokens_exhausted(&self) -> bool {
        self.max_total_tokens.is_some_and(|m| self.consumed_tokens >= m)
    }

    pub fn time_exhausted(&self) -> bool {
        self.max_wall_clock.is_some_and(|m| self.elapsed >= m)
    }

    pub fn is_exhausted(&self) -> bool {
        self.tokens_exhausted() || self.time_exhausted()
    }
}

/// Adds `usage` to the budget. Crossing the limit only flips the exhausted
/// state; the usage is always recorded.
pub fn charge_budget(budget: Budget, usage: Usage) -> Budget {
    Budget { consumed_tokens: budget.consumed_tokens.saturating_add(usage.total()), ..budget }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(i: u64, o: u64) -> Usage {
        Usage { input_tokens: i, output_tokens: o, estimated: false }
    }

    #[test]
    fn heuristic_counts() {
        assert_eq!(HeuristicTokenizer.count(""), 0);
        assert_eq!(HeuristicTokenizer.count(&"x".repeat(400)), 100);
        assert_eq!(HeuristicTokenizer.count("abcde"), 2);
    }

    #[test]
    fn whitespace_counts() {
        assert_eq!(WhitespaceTokenizer.count("a b c"), 3);
        assert_eq!(WhitespaceTokenizer.count("  a\n\tb  "), 2);
        assert_eq!(WhitespaceTokenizer.count(""), 0);
    }

    #[test]
    fn charge_simple() {
        let b = charge_budget(Budget::new(Some(1000), None), u(300, 200));
        assert_eq!(b.consumed_tokens, 500);
        assert!(!b.is_exhausted());
    }

    #[test]
    fn charge_crosses_limit() {
        let mut b = Budget::new(Some(1000), None);
        b.consumed_tokens = 900;
        let b = charge_budget(b, u(80, 40));
        assert_eq!(b.consumed_tokens, 1020);
        assert!(b.is_exhausted());
    }

    #[test]
    fn charge_sequence_matches_fold() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let charges: Vec<Usage> = (0..10).map(|_| u(rng.random_range(0..500), rng.random_range(0..500))).collect();
        let expected: u64 = charges.iter().map(|c| c.input_tokens + c.output_tokens).sum();
        let b = charges.iter().fold(Budget::unlimited(), |b, c| charge_budget(b, *c));
        assert_eq!(b.consumed_tokens, expected);
    }

    #[test]
    fn ledger_totals_track_requests() {
        let mut l = TokenLedger::new();
        l.record("r0", u(10, 5));
        l.record("r1", Usage { estimated: true, ..u(1, 2) });
        assert_eq!(l.total(), 18);
        assert_eq!(l.per_request().len(), 2);
        assert!(l.is_consistent());
        assert!(l.is_estimated());
    }

    #[test]
    fn wall_clock_exhaustion() {
        let mut b = Budget::new(None, Some(Duration::from_secs(5)));
        assert!(!b.is_exhausted());
        b.elapsed = Duration::from_secs(5);
        assert!(b.time_exhausted());
    }
}
