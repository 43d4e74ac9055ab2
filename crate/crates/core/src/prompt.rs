//! Prompt tokenisation and subject-noun extraction.
//!
//! Nouns are found with a small embedded heuristic: a lowercase word token is
//! a candidate if it is alphabetic (internal hyphens and apostrophes allowed)
//! and is neither a stopword nor on the generic-noun exclusion list. Callers
//! that need exact control pass explicit nouns instead.

use std::path::Path;

use crate::error::{Error, Result};

/// Generic nouns whose attention covers the whole canvas rather than the subject.
///
/// An approximation: the upstream list is not published in full.
pub const DEFAULT_EXCLUSIONS: &[&str] = &[
    "image",
    "photo",
    "picture",
    "illustration",
    "photograph",
    "background",
    "view",
    "scene",
    "closeup",
    "close-up",
    "portrait",
    "shot",
];

const STOPWORDS: &[&str] = &[
    // articles, determiners, quantifiers
    "a",
    "an",
    "the",
    "this",
    "that",
    "these",
    "those",
    "some",
    "any",
    "each",
    "every",
    "all",
    "both",
    "few",
    "many",
    "much",
    "more",
    "most",
    "other",
    "another",
    "such",
    "no",
    "one",
    "two",
    "three",
    "several",
    // prepositions and conjunctions
    "of",
    "in",
    "on",
    "at",
    "by",
    "for",
    "with",
    "without",
    "from",
    "to",
    "into",
    "onto",
    "over",
    "under",
    "above",
    "below",
    "behind",
    "beside",
    "between",
    "near",
    "through",
    "across",
    "around",
    "against",
    "along",
    "among",
    "within",
    "upon",
    "off",
    "out",
    "up",
    "down",
    "about",
    "as",
    "like",
    "and",
    "or",
    "but",
    "nor",
    "so",
    "yet",
    "while",
    "than",
    "then",
    // pronouns
    "i",
    "me",
    "my",
    "we",
    "us",
    "our",
    "you",
    "your",
    "he",
    "him",
    "his",
    "she",
    "her",
    "it",
    "its",
    "they",
    "them",
    "their",
    "who",
    "whom",
    "whose",
    "which",
    "what",
    "there",
    "here",
    // auxiliaries and common verbs
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "being",
    "am",
    "has",
    "have",
    "had",
    "having",
    "do",
    "does",
    "did",
    "can",
    "could",
    "will",
    "would",
    "shall",
    "should",
    "may",
    "might",
    "must",
    "wearing",
    "holding",
    "standing",
    "sitting",
    "featuring",
    "showing",
    "depicting",
    // colours
    "red",
    "green",
    "blue",
    "yellow",
    "orange",
    "purple",
    "pink",
    "brown",
    "black",
    "white",
    "gray",
    "grey",
    "golden",
    "silver",
    "colorful",
    "colourful",
    "dark",
    "light",
    "bright",
    // size and other frequent adjectives
    "big",
    "small",
    "large",
    "tiny",
    "huge",
    "little",
    "tall",
    "short",
    "long",
    "giant",
    "old",
    "new",
    "young",
    "cute",
    "beautiful",
    "very",
    "detailed",
    "realistic",
    "high",
    "quality",
    "single",
];

/// Lowercase word tokens; punctuation characters become tokens of their own.
///
/// A word is a maximal run of alphanumerics, possibly joined by internal `-`
/// or `'` (so `close-up` stays whole).
pub fn tokenize(prompt: &str) -> Vec<String> {
    let chars: Vec<char> = prompt.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            i += 1;
            while i < chars.len() {
                let joiner = (chars[i] == '-' || chars[i] == '\'')
                    && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
                if chars[i].is_alphanumeric() || joiner {
                    i += 1;
                } else {
                    break;
                }
            }
            tokens.push(chars[start..i].iter().collect::<String>().to_lowercase());
        } else {
            tokens.push(c.to_lowercase().collect());
            i += 1;
        }
    }
    tokens
}

/// Subject spans over [`tokenize`] output; `end` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounSpans {
    pub spans: Vec<NounSpan>,
    pub source_prompt: String,
}

impl NounSpans {
    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.spans.iter().map(|s| s.surface.as_str()).collect()
    }

    /// Maps each span to the attention token columns that spell it.
    ///
    /// `token_strings` may come from any tokenizer: word pieces are matched
    /// after stripping word-boundary markers (`▁`, `Ġ`, `</w>`, `##`) and
    /// lowercasing, and a span matches the first contiguous run of pieces
    /// whose concatenation equals its surface with spaces removed.
    pub fn resolve_columns(&self, token_strings: &[String]) -> Result<Vec<Vec<usize>>> {
        let pieces: Vec<String> = token_strings.iter().map(|t| normalize_piece(t)).collect();
        self.spans
            .iter()
            .map(|span| {
                let target: String = span
                    .surface
                    .chars()
                    .filter(|c| !c.is_whitespace())
                    .collect();
                find_run(&pieces, &target).ok_or_else(|| Error::UnmappedNoun(span.surface.clone()))
            })
            .collect()
    }
}

fn normalize_piece(piece: &str) -> String {
    piece
        .trim_start_matches('▁')
        .trim_start_matches('Ġ')
        .trim_start_matches("##")
        .trim_end_matches("</w>")
        .to_lowercase()
}

fn find_run(pieces: &[String], target: &str) -> Option<Vec<usize>> {
    if target.is_empty() {
        return None;
    }
    for start in 0..pieces.len() {
        let mut acc = String::new();
        for (end, piece) in pieces.iter().enumerate().skip(start) {
            if piece.is_empty() && acc.is_empty() {
                break;
            }
            acc.push_str(piece);
            if acc == target {
                return Some((start..=end).collect());
            }
            if !target.starts_with(&acc) {
                break;
            }
        }
    }
    None
}

fn is_wordlike(token: &str) -> bool {
    token.chars().next().is_some_and(char::is_alphabetic)
        && token
            .chars()
            .all(|c| c.is_alphabetic() || c == '-' || c == '\'')
}

/// Subject nouns of `prompt`.
///
/// With `override_nouns`, returns exactly those (each may span several
/// words), located in the prompt; otherwise applies the heuristic.
pub fn extract_nouns(
    prompt: &str,
    exclusion: &[String],
    override_nouns: Option<&[String]>,
) -> Result<NounSpans> {
    let tokens = tokenize(prompt);
    let spans = match override_nouns {
        Some(nouns) => nouns
            .iter()
            .map(|noun| {
                locate(&tokens, noun).ok_or_else(|| Error::MissingOverrideToken(noun.clone()))
            })
            .collect::<Result<Vec<_>>>()?,
        None => tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                is_wordlike(t)
                    && !STOPWORDS.contains(&t.as_str())
                    && !exclusion.iter().any(|e| e == *t)
            })
            .map(|(i, t)| NounSpan {
                start: i,
                end: i + 1,
                surface: t.clone(),
            })
            .collect(),
    };
    if spans.is_empty() {
        log::warn!("no subject nouns found in prompt {prompt:?}");
    }
    Ok(NounSpans {
        spans,
        source_prompt: prompt.to_string(),
    })
}

fn locate(tokens: &[String], noun: &str) -> Option<NounSpan> {
    let needle = tokenize(noun);
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - needle.len())
        .find(|&i| tokens[i..i + needle.len()] == needle[..])
        .map(|i| NounSpan {
            start: i,
            end: i + needle.len(),
            surface: needle.join(" "),
        })
}

pub fn default_exclusions() -> Vec<String> {
    DEFAULT_EXCLUSIONS.iter().map(|s| s.to_string()).collect()
}

/// Reads an exclusion list: one word per line, blank lines and `#` comments ignored.
pub fn load_exclusions(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

/// Parses the comma-separated `--nouns` override.
pub fn parse_noun_list(list: &str) -> Vec<String> {
    list.split(',')
        .map(|s| s.trim().to_lowercase())
        .filter(|s| !s.is_empty())
        .collect()
}
