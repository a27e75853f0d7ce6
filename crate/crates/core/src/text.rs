//! Shared text handling: the lexical analyzer, whitespace normalisation and
//! the sentence splitter used for both answers and abstracts.

/// Abbreviations that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "al.", "vs.", "cf.", "fig.", "figs.", "approx.", "dr.", "mr.", "mrs.", "ms.",
    "vol.", "ca.", "resp.", "eq.", "ref.", "refs.",
];

/// Lowercases and splits on every character that is not alphanumeric.
///
/// This is the analysis chain of the lexical index and of the reference
/// embedder; no stemming or stop-word removal happens here.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Collapses runs of whitespace to a single space and trims both ends.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A citation run: one or more `[n]` groups separated by optional blanks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct CitationRun {
    pub start: usize,
    pub end: usize,
    pub indices: Vec<u32>,
}

/// Parses a single `[digits]` group at `pos`, returning its end offset and
/// the number. Groups with more than nine digits are treated as prose.
fn citation_group_at(text: &str, pos: usize) -> Option<(usize, u32)> {
    let rest = text.get(pos..)?;
    let inner = rest.strip_prefix('[')?;
    let digits = inner.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 9 || inner.as_bytes().get(digits) != Some(&b']') {
        return None;
    }
    let n = inner[..digits].parse().ok()?;
    Some((pos + digits + 2, n))
}

/// Scans a citation run starting exactly at `pos`.
pub(crate) fn citation_run_at(text: &str, pos: usize) -> Option<CitationRun> {
    let (mut end, first) = citation_group_at(text, pos)?;
    let mut indices = vec![first];
    loop {
        let gap = text[end..]
            .bytes()
            .take_while(|b| *b == b' ' || *b == b'\t')
            .count();
        match citation_group_at(text, end + gap) {
            Some((next_end, n)) => {
                indices.push(n);
                end = next_end;
            }
            None => break,
        }
    }
    Some(CitationRun {
        start: pos,
        end,
        indices,
    })
}

fn is_abbreviation(sentence_so_far: &str) -> bool {
    let word = sentence_so_far
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(['(', '[', '"', '\''])
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

fn skip_ws(text: &str, mut pos: usize) -> usize {
    while let Some(c) = text[pos..].chars().next() {
        if !c.is_whitespace() {
            break;
        }
        pos += c.len_utf8();
    }
    pos
}

/// Splits text into sentence byte spans.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus closing quotes or
/// parentheses) that is followed by whitespace or the end of the text,
/// unless the word carrying the period is a known abbreviation. Citation
/// runs directly after the terminator belong to the sentence they follow.
/// Spans exclude surrounding whitespace.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = skip_ws(text, 0);
    let mut pos = start;
    while pos < text.len() {
        let c = text[pos..].chars().next().expect("in bounds");
        if !matches!(c, '.' | '!' | '?') {
            pos += c.len_utf8();
            continue;
        }
        let mut term_end = pos;
        while let Some(t) = text[term_end..].chars().next() {
            if matches!(t, '.' | '!' | '?' | '"' | '\'' | ')' | '”' | '’') {
                term_end += t.len_utf8();
            } else {
                break;
            }
        }
        let boundary = text[term_end..]
            .chars()
            .next()
            .is_none_or(char::is_whitespace);
        if !boundary || (c == '.' && is_abbreviation(&text[start..pos + 1])) {
            pos = term_end;
            continue;
        }
        let mut end = term_end;
        let after = skip_ws(text, end);
        if let Some(run) = citation_run_at(text, after) {
            end = run.end;
        }
        spans.push((start, end));
        start = skip_ws(text, end);
        pos = start;
    }
    if start < text.len() {
        let tail_end = start + text[start..].trim_end().len();
        if tail_end > start {
            spans.push((start, tail_end));
        }
    }
    spans
}

/// Sentence strings of `text`, in order.
pub fn sentences(text: &str) -> Vec<&str> {
    sentence_spans(text)
        .into_iter()
        .map(|(s, e)| &text[s..e])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analyze_lowercases_and_splits_punctuation() {
        assert_eq!(
            analyze("IL-6 levels, (p<0.05)."),
            vec!["il", "6", "levels", "p", "0", "05"]
        );
        assert!(analyze("?! --").is_empty());
    }

    #[test]
    fn splits_on_terminators_followed_by_space() {
        assert_eq!(
            sentences("One. Two! Three? Four"),
            vec!["One.", "Two!", "Three?", "Four"]
        );
    }

    #[test]
    fn decimals_and_abbreviations_do_not_split() {
        assert_eq!(
            sentences("Dose was 2.5 mg, e.g. daily. Smith et al. agree."),
            vec!["Dose was 2.5 mg, e.g. daily.", "Smith et al. agree."]
        );
    }

    #[test]
    fn trailing_citation_run_stays_with_sentence() {
        let t = "Fever drops. [1][2] Dosage varies [3].";
        assert_eq!(sentences(t), vec!["Fever drops. [1][2]", "Dosage varies [3]."]);
    }

    #[test]
    fn citation_runs_allow_blanks_between_groups() {
        let run = citation_run_at("[1] [22][3] x", 0).unwrap();
        assert_eq!(run.indices, vec![1, 22, 3]);
        assert_eq!(run.end, 11);
        assert!(citation_run_at("[a]", 0).is_none());
        assert!(citation_run_at("[1234567890]", 0).is_none());
        assert!(citation_run_at("[1, 2]", 0).is_none());
    }

    #[test]
    fn empty_and_blank_text_has_no_sentences() {
        assert!(sentences("").is_empty());
        assert!(sentences("   \n").is_empty());
    }
}
