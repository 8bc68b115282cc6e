/// Words whose trailing period does not end a sentence.
const ABBREVIATIONS: [&str; 8] = ["dr", "mr", "mrs", "ms", "st", "vs", "e.g", "i.e"];

fn ends_with_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(|c: char| !c.is_alphanumeric());
    let word = word.to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// The first sentence of `text`, up to and including the first `.`, `!` or
/// `?` that is followed by whitespace or the end of the text. A period
/// after a known abbreviation (`Dr.`, `e.g.`, ...) is not a boundary.
/// Returns the whole trimmed text when no boundary exists.
pub fn first_sentence(text: &str) -> String {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let at_break = chars.peek().is_none_or(|(_, next)| next.is_whitespace());
        if !at_break {
            continue;
        }
        if c == '.' && ends_with_abbreviation(&text[..i]) {
            continue;
        }
        return text[..i + c.len_utf8()].to_string();
    }
    text.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(first_sentence("I need help. I also use a bench."), "I need help.");
        assert_eq!(first_sentence("no punctuation here"), "no punctuation here");
        assert_eq!(first_sentence("Dr. Smith helps me. Daily."), "Dr. Smith helps me.");
    }

    #[test]
    fn other_terminators_and_edges() {
        assert_eq!(first_sentence("  Yes! Sure.  "), "Yes!");
        assert_eq!(first_sentence("Really? No."), "Really?");
        assert_eq!(first_sentence("It costs 3.50 dollars. Ok."), "It costs 3.50 dollars.");
        assert_eq!(first_sentence("I use aids, e.g. a bench. Fine."), "I use aids, e.g. a bench.");
        assert_eq!(first_sentence("OK. More."), "OK.");
        assert_eq!(first_sentence(""), "");
    }
}
