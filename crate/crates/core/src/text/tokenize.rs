use unicode_segmentation::UnicodeSegmentation;

/// Splits text into tokens. Implementations must be deterministic and never
/// yield empty tokens.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lowercases and segments on Unicode word boundaries. Punctuation and
/// whitespace segments are discarded, as are apostrophes and other
/// non-alphanumeric characters inside a word.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnicodeTokenizer;

impl Tokenizer for UnicodeTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.unicode_words()
            .map(|w| {
                w.chars()
                    .filter(|c| c.is_alphanumeric())
                    .flat_map(char::to_lowercase)
                    .collect::<String>()
            })
            .filter(|w| !w.is_empty())
            .collect()
    }
}

/// Tokenizes with the default [`UnicodeTokenizer`].
pub fn tokenize(text: &str) -> Vec<String> {
    UnicodeTokenizer.tokenize(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases() {
        assert_eq!(tokenize("I like You"), ["i", "like", "you"]);
    }

    #[test]
    fn empty() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ?! ... ").is_empty());
    }

    #[test]
    fn strips_punctuation() {
        assert_eq!(tokenize("hello!! world"), ["hello", "world"]);
        assert_eq!(tokenize("don't, stop."), ["dont", "stop"]);
    }

    #[test]
    fn non_latin_scripts() {
        assert_eq!(tokenize("연애 상담 좀 해주세요!"), ["연애", "상담", "좀", "해주세요"]);
        assert_eq!(tokenize("Ça VA"), ["ça", "va"]);
    }
}
