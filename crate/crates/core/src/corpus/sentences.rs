//! Rule-based sentence segmentation over clinical note text.
//!
//! A boundary falls after `.`, `!`, `?`, or a newline run, when what follows
//! is whitespace and then an uppercase letter or digit (or the end of the
//! text). A small abbreviation list suppresses false splits. Offsets are in
//! characters (Unicode scalar values), not bytes.

use serde::{Deserialize, Serialize};

/// Abbreviations whose trailing period never ends a sentence.
pub const ABBREVIATIONS: &[&str] = &["Dr.", "Mr.", "Mrs.", "vs.", "e.g.", "i.e."];

/// One sentence span: `text` equals the characters at `[start, end)` of the
/// source, with surrounding whitespace excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Sentence {
    /// Char-offset containment of a position.
    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }

    /// True when `[start, end)` overlaps this sentence's span.
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

fn is_break_start(c: char) -> bool {
    c.is_ascii_uppercase() || c.is_ascii_digit()
}

/// After a terminator at `pos - 1`, does the remainder allow a split?
/// Requires at least one whitespace char (or end of text), then the first
/// non-whitespace char must start a new sentence.
fn followed_by_break(chars: &[char], pos: usize, whitespace_required: bool) -> bool {
    if pos >= chars.len() {
        return true;
    }
    if whitespace_required && !chars[pos].is_whitespace() {
        return false;
    }
    match chars[pos..].iter().find(|c| !c.is_whitespace()) {
        Some(&c) => is_break_start(c),
        None => true,
    }
}

fn ends_with_abbreviation(chars: &[char], period_idx: usize) -> bool {
    for abbr in ABBREVIATIONS {
        let abbr_chars: Vec<char> = abbr.chars().collect();
        let len = abbr_chars.len();
        if period_idx + 1 < len {
            continue;
        }
        let start = period_idx + 1 - len;
        if chars[start..=period_idx] != abbr_chars[..] {
            continue;
        }
        if start == 0 || !chars[start - 1].is_alphanumeric() {
            return true;
        }
    }
    false
}

/// Split text into ordered, non-overlapping sentences whose spans cover every
/// non-whitespace character exactly once. Deterministic for identical input.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut cuts: Vec<usize> = Vec::new();

    let mut i = 0;
    while i < n {
        match chars[i] {
            '.' | '!' | '?' => {
                let protected = chars[i] == '.' && ends_with_abbreviation(&chars, i);
                if !protected && followed_by_break(&chars, i + 1, true) {
                    cuts.push(i + 1);
                }
                i += 1;
            }
            '\n' => {
                let mut j = i + 1;
                while j < n && (chars[j] == '\n' || chars[j] == '\r') {
                    j += 1;
                }
                if followed_by_break(&chars, j, false) {
                    cuts.push(j);
                }
                i = j;
            }
            _ => i += 1,
        }
    }

    let mut sentences = Vec::new();
    let mut seg_start = 0;
    for cut in cuts.into_iter().chain(std::iter::once(n)) {
        if cut <= seg_start {
            continue;
        }
        let mut s = seg_start;
        let mut e = cut;
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            sentences.push(Sentence {
                text: chars[s..e].iter().collect(),
                start: s,
                end: e,
            });
        }
        seg_start = cut;
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;

    // Oracle values below were computed by applying the splitter rule by
    // hand: boundary after ".: 24" (next char is " C"), then end of text.
    #[test]
    fn two_sentence_example() {
        let text = "Patient has hypertension. Continue losartan.";
        let sents = segment_sentences(text);
        assert_eq!(sents.len(), 2);
        assert_eq!((sents[0].start, sents[0].end), (0, 25));
        assert_eq!(sents[0].text, "Patient has hypertension.");
        assert_eq!((sents[1].start, sents[1].end), (26, 44));
        assert_eq!(sents[1].text, "Continue losartan.");
    }

    #[test]
    fn empty_string() {
        assert!(segment_sentences("").is_empty());
    }

    #[test]
    fn single_token_without_terminator() {
        let sents = segment_sentences("Hypertension");
        assert_eq!(sents.len(), 1);
        assert_eq!((sents[0].start, sents[0].end), (0, 12));
    }

    #[test]
    fn abbreviations_do_not_split() {
        let sents = segment_sentences("Seen by Dr. Smith today. Follow up with Mrs. Jones.");
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[0].text, "Seen by Dr. Smith today.");
        assert_eq!(sents[1].text, "Follow up with Mrs. Jones.");
    }

    #[test]
    fn decimal_codes_do_not_split() {
        let sents = segment_sentences("Assigned 401.9 for hypertension. Continue meds.");
        assert_eq!(sents.len(), 2);
        assert!(sents[0].text.contains("401.9"));
    }

    #[test]
    fn lowercase_continuation_suppresses_split() {
        let sents = segment_sentences("Transferred to I.C.U. for monitoring. Stable now.");
        // "I.C.U." periods are followed by non-whitespace or lowercase.
        assert_eq!(sents.len(), 2);
    }

    #[test]
    fn newline_runs_split_headings() {
        let text = "Discharge Diagnosis: Peptic ulcer\nMedications on discharge held\n\nFollow up in clinic";
        let sents = segment_sentences(text);
        assert_eq!(sents.len(), 3);
        assert_eq!(sents[0].text, "Discharge Diagnosis: Peptic ulcer");
        assert_eq!(sents[1].text, "Medications on discharge held");
        assert_eq!(sents[2].text, "Follow up in clinic");
    }

    #[test]
    fn newline_before_lowercase_continues() {
        let sents = segment_sentences("Patient was started\non lisinopril. Tolerated well.");
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[0].text, "Patient was started\non lisinopril.");
    }

    #[test]
    fn spans_cover_nonwhitespace_exactly_once() {
        let texts = [
            "Patient has hypertension. Continue losartan.",
            "A\n\nB\n c. D! E? f.",
            "  leading spaces. Trailing too.  ",
            "no terminator at all",
            "Dr. Who vs. Mr. Hyde e.g. i.e. done. Next",
        ];
        for text in texts {
            let chars: Vec<char> = text.chars().collect();
            let sents = segment_sentences(text);
            let mut covered = vec![false; chars.len()];
            let mut prev_end = 0;
            for s in &sents {
                assert!(s.start >= prev_end, "overlap/order violated in {text:?}");
                assert!(s.end <= chars.len());
                let span_text: String = chars[s.start..s.end].iter().collect();
                assert_eq!(span_text, s.text);
                for flag in covered.iter_mut().take(s.end).skip(s.start) {
                    *flag = true;
                }
                prev_end = s.end;
            }
            for (idx, c) in chars.iter().enumerate() {
                if !c.is_whitespace() {
                    assert!(covered[idx], "char {idx} ({c:?}) uncovered in {text:?}");
                } else {
                    // Whitespace may only be covered inside a sentence.
                }
            }
        }
    }

    #[test]
    fn deterministic_for_identical_input() {
        let text = "One. Two! Three? Four\n\nFive";
        assert_eq!(segment_sentences(text), segment_sentences(text));
    }

    #[test]
    fn char_offsets_for_non_ascii() {
        // 'é' is one char but two bytes; offsets must count chars.
        let text = "Résumé noted. Patient stable.";
        let sents = segment_sentences(text);
        assert_eq!(sents.len(), 2);
        assert_eq!((sents[0].start, sents[0].end), (0, 13));
        assert_eq!(sents[1].text, "Patient stable.");
    }
}
