//! Token normalization shared by metric resolution and keyword matching.

use std::collections::BTreeSet;

/// Lowercases and strips everything that is not alphanumeric.
pub fn normalize_token(token: &str) -> String {
    token
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Splits free text on non-alphanumeric characters into normalized keywords.
pub fn keywords(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(normalize_token)
        .collect()
}
