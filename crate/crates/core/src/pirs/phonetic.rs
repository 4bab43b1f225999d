//! American Soundex and the combined spelling/sound similarity used to
//! match misrecognized words against vocabulary terms.

use thiserror::Error;

use crate::edit::normalized_similarity;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot encode {0:?}: no letters")]
pub struct SoundexError(pub String);

fn soundex_digit(c: char) -> Option<u8> {
    match c {
        'B' | 'F' | 'P' | 'V' => Some(b'1'),
        'C' | 'G' | 'J' | 'K' | 'Q' | 'S' | 'X' | 'Z' => Some(b'2'),
        'D' | 'T' => Some(b'3'),
        'L' => Some(b'4'),
        'M' | 'N' => Some(b'5'),
        'R' => Some(b'6'),
        _ => None,
    }
}

/// Four-character American Soundex code, e.g. "Robert" → "R163".
///
/// H and W do not separate letters with equal codes; vowels do.
/// Non-ASCII-letters are ignored.
pub fn soundex(word: &str) -> Result<String, SoundexError> {
    let mut letters = word
        .chars()
        .filter(char::is_ascii_alphabetic)
        .map(|c| c.to_ascii_uppercase());
    let first = letters
        .next()
        .ok_or_else(|| SoundexError(word.to_string()))?;
    let mut code = vec![first as u8];
    let mut prev = soundex_digit(first);
    for c in letters {
        if code.len() == 4 {
            break;
        }
        if matches!(c, 'H' | 'W') {
            continue;
        }
        let digit = soundex_digit(c);
        if let Some(d) = digit {
            if Some(d) != prev {
                code.push(d);
            }
        }
        prev = digit;
    }
    code.resize(4, b'0');
    Ok(String::from_utf8(code).expect("ascii"))
}

/// True if both words have letters and share a Soundex code.
pub fn sounds_alike(a: &str, b: &str) -> bool {
    matches!((soundex(a), soundex(b)), (Ok(x), Ok(y)) if x == y)
}

/// `max(normalized Levenshtein similarity, 1 if Soundex codes match else 0)`,
/// compared case-insensitively.
pub fn word_similarity(a: &str, b: &str) -> f64 {
    if sounds_alike(a, b) {
        return 1.0;
    }
    normalized_similarity(&a.to_lowercase(), &b.to_lowercase())
}
