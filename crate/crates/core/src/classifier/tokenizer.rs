use unicode_normalization::UnicodeNormalization;

/// Bumped whenever tokenization rules change; stored in model files.
pub const TOKENIZER_VERSION: u32 = 1;

/// NFC-normalizes, lowercases, and splits on every run of non-alphanumeric
/// characters. Empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}
