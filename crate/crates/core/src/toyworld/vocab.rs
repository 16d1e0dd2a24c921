//! Closed toy vocabulary with fixed integer ids. No external tokenizer: the
//! text encoder is a lookup table over these ids.

pub const PAD: usize = 0;

/// Fixed id table. Order is load-bearing: ids are persisted in artifacts.
pub const WORDS: [&str; 16] = [
    "<pad>", "moving", "red", "green", "blue", "yellow", "magenta", "cyan", "square", "circle",
    "triangle", "right", "left", "up", "down", "circular",
];

pub fn size() -> usize {
    WORDS.len()
}

pub fn id_of(word: &str) -> Option<usize> {
    WORDS.iter().position(|w| *w == word)
}

pub fn word_of(id: usize) -> Option<&'static str> {
    WORDS.get(id).copied()
}

/// Encode a word sequence, failing on out-of-vocabulary words.
pub fn encode(words: &[String]) -> Option<Vec<usize>> {
    words.iter().map(|w| id_of(w)).collect()
}
