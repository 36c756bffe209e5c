//! Lenient parsing of model output: JSON extraction from prose or code
//! fences, yes/no answers, and numeric answers.

/// Pull the first JSON value out of a response that may wrap it in prose
/// or a code fence. Returns the JSON source text.
pub fn extract_json_block(text: &str) -> Option<&str> {
    if let Some(fenced) = extract_fenced(text) {
        if let Some(inner) = extract_balanced(fenced) {
            return Some(inner);
        }
    }
    extract_balanced(text)
}

fn extract_fenced(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // Skip an optional language tag on the fence line.
    let body_at = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_at..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// First balanced `{...}` or `[...]` region, string- and escape-aware.
fn extract_balanced(text: &str) -> Option<&str> {
    let open_at = text.find(['{', '['])?;
    let bytes = text.as_bytes();
    let open = bytes[open_at];
    let close = if open == b'{' { b'}' } else { b']' };
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open_at) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            _ if b == open => depth += 1,
            _ if b == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[open_at..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Leading yes/no, case-insensitive, tolerant of punctuation and prose
/// after the answer word.
pub fn parse_leading_yes_no(text: &str) -> Option<bool> {
    let trimmed = text.trim_start();
    let word: String = trimmed
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    match word.to_ascii_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// First integer token in the text.
pub fn first_integer(text: &str) -> Option<u64> {
    let mut digits = String::new();
    for c in text.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if !digits.is_empty() {
            break;
        }
    }
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_json_passes_through() {
        assert_eq!(extract_json_block(r#"{"a": 1}"#), Some(r#"{"a": 1}"#));
    }

    #[test]
    fn fenced_json_is_unwrapped() {
        let text = "Here you go:\n```json\n{\"a\": [1, 2]}\n```\nDone.";
        assert_eq!(extract_json_block(text), Some("{\"a\": [1, 2]}"));
    }

    #[test]
    fn json_inside_prose() {
        let text = "The result is {\"x\": \"a } brace in a string\"} as requested";
        assert_eq!(
            extract_json_block(text),
            Some("{\"x\": \"a } brace in a string\"}")
        );
    }

    #[test]
    fn no_json_returns_none() {
        assert_eq!(extract_json_block("I cannot see the video."), None);
    }

    #[test]
    fn yes_no_parsing() {
        assert_eq!(parse_leading_yes_no("Yes, it is."), Some(true));
        assert_eq!(parse_leading_yes_no("  no"), Some(false));
        assert_eq!(parse_leading_yes_no("NO, the clip shows a desk."), Some(false));
        assert_eq!(parse_leading_yes_no("maybe"), None);
        assert_eq!(parse_leading_yes_no("yesterday"), None);
    }

    #[test]
    fn first_integer_parsing() {
        assert_eq!(first_integer("I count 3 occurrences"), Some(3));
        assert_eq!(first_integer("12 then 7"), Some(12));
        assert_eq!(first_integer("none"), None);
    }
}
