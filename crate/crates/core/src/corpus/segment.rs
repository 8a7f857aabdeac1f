use std::collections::HashSet;
use std::sync::OnceLock;

use super::Sentence;

/// Abbreviation guard list shipped with the crate.
pub const ABBREVIATIONS: &str = include_str!("../../data/abbreviations.txt");

fn guard() -> &'static HashSet<&'static str> {
    static GUARD: OnceLock<HashSet<&'static str>> = OnceLock::new();
    GUARD.get_or_init(|| {
        ABBREVIATIONS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Splits turn text into sentences.
///
/// A boundary is a run of terminal marks (`.`, `!`, `?`), optionally followed
/// by closing quotes or brackets, and then whitespace. A boundary is ignored
/// when the whitespace-delimited token that ends there is a guarded
/// abbreviation such as `b.i.d.`.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut pieces: Vec<&str> = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < chars.len() && is_terminal(chars[j + 1].1) {
            j += 1;
        }
        while j + 1 < chars.len() && is_closer(chars[j + 1].1) {
            j += 1;
        }
        let end = chars[j].0 + chars[j].1.len_utf8();
        let followed_by_space = j + 1 < chars.len() && chars[j + 1].1.is_whitespace();
        if followed_by_space && !ends_with_abbreviation(&text[start..end]) {
            pieces.push(&text[start..end]);
            start = end;
        }
        i = j + 1;
    }
    pieces.push(&text[start..]);

    pieces
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .enumerate()
        .map(|(index, p)| Sentence {
            index,
            text: p.to_string(),
        })
        .collect()
}

fn ends_with_abbreviation(piece: &str) -> bool {
    let token = piece
        .split_whitespace()
        .next_back()
        .unwrap_or("")
        .trim_start_matches(['(', '"', '\'', '['])
        .to_lowercase();
    guard().contains(token.as_str())
}
