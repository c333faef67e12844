use crate::error::LlmError;

/// Leading `B`, `B.`, `(B)`, `B)` or `B:` on the first line, optionally after
/// an `Answer:` prefix.
fn leading_letter(raw: &str, n_choices: usize) -> Option<usize> {
    let first = raw.lines().find(|l| !l.trim().is_empty())?.trim();
    let first = first
        .strip_prefix("Answer:")
        .or_else(|| first.strip_prefix("answer:"))
        .map(str::trim_start)
        .unwrap_or(first);
    let (inner, parenthesized) = match first.strip_prefix('(') {
        Some(rest) => (rest, true),
        None => (first, false),
    };
    let mut chars = inner.chars();
    let letter = chars.next()?;
    if !letter.is_ascii_uppercase() {
        return None;
    }
    let rest = chars.as_str();
    let rest = if parenthesized {
        rest.strip_prefix(')')?
    } else {
        rest.strip_prefix(['.', ')', ':']).unwrap_or(rest)
    };
    if !(rest.is_empty() || rest.starts_with(char::is_whitespace)) {
        return None;
    }
    let idx = (letter as u8 - b'A') as usize;
    (idx < n_choices).then_some(idx)
}

/// Earliest case-insensitive occurrence of a choice text; at equal positions
/// the longer choice wins.
fn choice_text(raw: &str, choices: &[String]) -> Option<usize> {
    let hay = raw.to_lowercase();
    choices
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.trim().is_empty())
        .filter_map(|(i, c)| {
            let needle = c.trim().to_lowercase();
            hay.find(&needle).map(|pos| (pos, std::cmp::Reverse(needle.len()), i))
        })
        .min()
        .map(|(_, _, i)| i)
}

/// Maps model output to a choice index: a leading answer letter first, then
/// any literal choice text.
pub fn parse_answer(raw: &str, choices: &[String]) -> Result<usize, LlmError> {
    leading_letter(raw, choices.len())
        .or_else(|| choice_text(raw, choices))
        .ok_or_else(|| LlmError::Unparseable { raw: raw.to_owned() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompt::choice_letter;

    fn choices(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn letter_forms() {
        let c = choices(&["w", "x", "y", "z"]);
        assert_eq!(parse_answer("B. Because water expands", &c).unwrap(), 1);
        assert_eq!(parse_answer("C", &c).unwrap(), 2);
        assert_eq!(parse_answer(" (D) since", &c).unwrap(), 3);
        assert_eq!(parse_answer("Answer: A", &c).unwrap(), 0);
        assert_eq!(parse_answer("\nB)\n", &c).unwrap(), 1);
    }

    #[test]
    fn letter_beyond_choices_falls_through() {
        let c = choices(&["yes", "no"]);
        assert!(parse_answer("E.", &c).is_err());
        assert_eq!(parse_answer("E. I'd say no", &c).unwrap(), 1);
    }

    #[test]
    fn choice_text_match() {
        let c = choices(&["positive", "neutral", "negative"]);
        assert_eq!(parse_answer("the answer is positive", &c).unwrap(), 0);
        assert_eq!(parse_answer("Clearly NEGATIVE.", &c).unwrap(), 2);
        let dup = choices(&["duplicate", "not duplicate"]);
        assert_eq!(parse_answer("these are not duplicate", &dup).unwrap(), 1);
    }

    #[test]
    fn unparseable_keeps_raw() {
        match parse_answer("I am not sure.", &choices(&["a1", "b2"])) {
            Err(LlmError::Unparseable { raw }) => assert_eq!(raw, "I am not sure."),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_rendered_letter_round_trips() {
        for n in 1..=26 {
            let c: Vec<String> = (0..n).map(|i| format!("option number {i}")).collect();
            for i in 0..n {
                assert_eq!(parse_answer(&choice_letter(i).to_string(), &c).unwrap(), i);
            }
        }
    }
}
