//! Text normalization and character classes.

/// Result of [`normalize_text`]: the cleaned string plus how many undecodable
/// byte sequences were dropped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Normalized {
    pub text: String,
    pub dropped_bytes: usize,
}

/// Decode, lowercase Latin letters, collapse whitespace runs to a single space,
/// strip control characters and trim both ends.
///
/// Invalid UTF-8 sequences are removed; their byte count is reported in
/// [`Normalized::dropped_bytes`].
pub fn normalize_text(raw: &[u8]) -> Normalized {
    let mut dropped = 0usize;
    let mut decoded = String::with_capacity(raw.len());
    for chunk in raw.utf8_chunks() {
        decoded.push_str(chunk.valid());
        dropped += chunk.invalid().len();
    }
    if dropped > 0 {
        log::debug!("normalize_text: dropped {dropped} undecodable bytes");
    }

    let mut out = String::with_capacity(decoded.len());
    let mut pending_space = false;
    for c in decoded.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if c.is_control() {
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        if c.is_ascii_uppercase() || is_latin_letter(c) {
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
    Normalized {
        text: out,
        dropped_bytes: dropped,
    }
}

/// Convenience wrapper for already-decoded text.
pub fn normalize_str(raw: &str) -> String {
    normalize_text(raw.as_bytes()).text
}

fn is_latin_letter(c: char) -> bool {
    c.is_alphabetic()
        && matches!(c as u32,
            0x00C0..=0x024F   // Latin-1 supplement, extended A/B
            | 0x1E00..=0x1EFF // Latin extended additional
            | 0xFF21..=0xFF3A // fullwidth A-Z
        )
}

/// CJK ideographs, including the extension blocks and compatibility ideographs.
pub fn is_chinese(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x2F800..=0x2FA1F
        | 0x30000..=0x323AF
    )
}

/// Letters and digits outside the Chinese ideograph blocks. Maximal runs of
/// these are tokenized as word-pieces rather than matched as lattice words.
pub fn is_non_chinese_word_char(c: char) -> bool {
    c.is_alphanumeric() && !is_chinese(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_latin() {
        assert_eq!(normalize_str("AbC"), "abc");
        assert_eq!(normalize_str("ÉCOLE"), "école");
    }

    #[test]
    fn empty_stays_empty() {
        assert_eq!(normalize_text(b""), Normalized::default());
    }

    #[test]
    fn collapses_whitespace() {
        assert_eq!(normalize_str("a\tb"), "a b");
        assert_eq!(normalize_str("  a \r\n\t b  "), "a b");
    }

    #[test]
    fn strips_controls() {
        assert_eq!(normalize_str("a\u{0007}b\u{0000}"), "ab");
    }

    #[test]
    fn drops_invalid_bytes_and_counts_them() {
        let mut raw = "研究".as_bytes().to_vec();
        raw.push(0xFF);
        raw.extend_from_slice(&[0xE7, 0x94]); // truncated 3-byte sequence
        raw.extend_from_slice("生".as_bytes());
        let n = normalize_text(&raw);
        assert_eq!(n.text, "研究生");
        assert_eq!(n.dropped_bytes, 3);
    }

    #[test]
    fn chinese_classes() {
        assert!(is_chinese('研'));
        assert!(!is_chinese('a'));
        assert!(!is_chinese('。'));
        assert!(is_non_chinese_word_char('a'));
        assert!(is_non_chinese_word_char('7'));
        assert!(!is_non_chinese_word_char('研'));
        assert!(!is_non_chinese_word_char('，'));
    }
}
