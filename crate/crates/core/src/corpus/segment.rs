//! Sentence segmentation.
//!
//! A sentence ends after a run of `.`, `!` or `?` (optionally followed by
//! closing quotes or brackets) when the next character is whitespace or the
//! text ends. The whitespace run after the terminator belongs to the
//! sentence it closes, so segments always concatenate back to the input.
//! A period that closes a word on the abbreviation list does not end a
//! sentence.

const TERMINATORS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 6] = ['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

/// Words (with their final period) that never end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "e.g.", "i.e.", "cf.",
    "fig.", "approx.", "dept.", "est.",
];

fn is_abbreviation(text: &str, period_at: usize) -> bool {
    let head = &text[..=period_at];
    let word_start = head
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map_or(0, |(i, c)| i + c.len_utf8());
    let word = head[word_start..].trim_start_matches(['(', '[', '"', '\'', '\u{201c}', '\u{2018}']);
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Splits `text` into sentences. The concatenation of the result equals
/// `text`. Empty input yields no segments.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut segments = Vec::new();
    let mut seg_start = 0usize;
    let mut i = 0usize;

    while i < chars.len() {
        let (pos, c) = chars[i];
        if !TERMINATORS.contains(&c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < chars.len() && TERMINATORS.contains(&chars[j + 1].1) {
            j += 1;
        }
        while j + 1 < chars.len() && CLOSERS.contains(&chars[j + 1].1) {
            j += 1;
        }
        let at_end = j + 1 == chars.len();
        let before_space = !at_end && chars[j + 1].1.is_whitespace();
        let single_period = j == i && c == '.';
        if (at_end || before_space) && !(single_period && is_abbreviation(text, pos)) {
            let mut k = j + 1;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let end = chars.get(k).map_or(text.len(), |&(b, _)| b);
            segments.push(text[seg_start..end].to_string());
            seg_start = end;
            i = k;
        } else {
            i = j + 1;
        }
    }
    if seg_start < text.len() {
        segments.push(text[seg_start..].to_string());
    }
    segments
}

/// True when `segment` closes with terminal punctuation (ignoring trailing
/// whitespace and closing quotes).
pub fn ends_with_terminator(segment: &str) -> bool {
    segment
        .trim_end()
        .trim_end_matches(CLOSERS)
        .ends_with(TERMINATORS)
}
