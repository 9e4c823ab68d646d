//! Token counting and note-body truncation against the context budget.
//!
//! The default counter is the approximate ceil(chars / 4) rule; an exact
//! tokenizer can be plugged in behind the same trait. Truncation cuts only
//! the note body, preferring sentence boundaries, then whitespace, then a
//! raw character cut as a last resort.

use crate::corpus::sentences::segment_sentences;

use super::GatewayError;

pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;

    /// Identifier recorded in run metadata.
    fn name(&self) -> &'static str {
        "unnamed"
    }
}

/// ceil(characters / 4), characters as Unicode scalars.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxCounter;

impl TokenCounter for ApproxCounter {
    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }

    fn name(&self) -> &'static str {
        "approx-chars-div-4"
    }
}

/// Deterministic token estimate for a text under the given counter.
pub fn count_tokens(text: &str, counter: &dyn TokenCounter) -> usize {
    counter.count(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationOutcome {
    pub text: String,
    pub truncated: bool,
}

fn prefix_at(chars: &[char], end: usize) -> String {
    chars[..end].iter().collect()
}

/// Largest candidate cut whose prefix still fits `available` tokens, found by
/// binary search (valid because counts are monotone in prefix length).
fn best_cut(
    chars: &[char],
    cuts: &[usize],
    available: usize,
    counter: &dyn TokenCounter,
) -> Option<usize> {
    let fits = |end: usize| counter.count(&prefix_at(chars, end)) <= available;
    if cuts.is_empty() || !fits(cuts[0]) {
        return None;
    }
    let mut lo = 0;
    let mut hi = cuts.len() - 1;
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(cuts[mid]) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(cuts[lo])
}

/// Return the longest prefix of `note_text` such that the whole request —
/// fixed prompt parts, the prefix, and the reserved response tokens — fits
/// the budget. The fixed parts are never cut; if they alone exceed the
/// budget, that is an error.
pub fn truncate_to_budget(
    note_text: &str,
    fixed_prompt_parts: &[&str],
    max_response_tokens: usize,
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<TruncationOutcome, GatewayError> {
    let fixed_tokens: usize = fixed_prompt_parts.iter().map(|p| counter.count(p)).sum();
    if fixed_tokens + max_response_tokens >= budget {
        return Err(GatewayError::BudgetExceeded {
            fixed_tokens,
            reserved: max_response_tokens,
            budget,
        });
    }
    let available = budget - fixed_tokens - max_response_tokens;
    if counter.count(note_text) <= available {
        return Ok(TruncationOutcome {
            text: note_text.to_string(),
            truncated: false,
        });
    }

    let chars: Vec<char> = note_text.chars().collect();

    let sentence_cuts: Vec<usize> = segment_sentences(note_text).iter().map(|s| s.end).collect();
    if let Some(end) = best_cut(&chars, &sentence_cuts, available, counter) {
        return Ok(TruncationOutcome {
            text: prefix_at(&chars, end),
            truncated: true,
        });
    }

    let whitespace_cuts: Vec<usize> = chars
        .iter()
        .enumerate()
        .filter(|(i, c)| c.is_whitespace() && *i > 0 && !chars[i - 1].is_whitespace())
        .map(|(i, _)| i)
        .collect();
    if let Some(end) = best_cut(&chars, &whitespace_cuts, available, counter) {
        return Ok(TruncationOutcome {
            text: prefix_at(&chars, end),
            truncated: true,
        });
    }

    // No usable boundary; cut at the raw character level so the budget bound
    // still holds.
    let char_cuts: Vec<usize> = (0..=chars.len()).collect();
    let end = best_cut(&chars, &char_cuts, available, counter).unwrap_or(0);
    Ok(TruncationOutcome {
        text: prefix_at(&chars, end),
        truncated: true,
    })
}
