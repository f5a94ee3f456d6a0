use serde_json::Value;

/// Pull a JSON value out of a model reply.
///
/// Accepts bare JSON, JSON inside a Markdown code fence, JSON surrounded by
/// prose, and Python-style dicts that use single quotes throughout.
pub fn extract_json(text: &str) -> Option<Value> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    if let Ok(v) = serde_json::from_str(text) {
        return Some(v);
    }
    if let Some(inner) = fenced_block(text) {
        if let Some(v) = extract_json(inner) {
            return Some(v);
        }
    }
    let candidate = outermost_span(text)?;
    if let Ok(v) = serde_json::from_str(candidate) {
        return Some(v);
    }
    let cleaned = strip_trailing_commas(candidate);
    if let Ok(v) = serde_json::from_str(&cleaned) {
        return Some(v);
    }
    if !cleaned.contains('"') {
        if let Ok(v) = serde_json::from_str(&cleaned.replace('\'', "\"")) {
            return Some(v);
        }
    }
    None
}

fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map_or(0, |i| i + 1);
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// From the first `{` or `[` to the last matching closer.
fn outermost_span(text: &str) -> Option<&str> {
    let start = text.find(['{', '['])?;
    let closer = if text[start..].starts_with('{') { '}' } else { ']' };
    let end = text.rfind(closer)?;
    (end > start).then(|| &text[start..=end])
}

fn strip_trailing_commas(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let chars: Vec<char> = s.chars().collect();
    let mut in_str = false;
    let mut quote = '"';
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_str {
            out.push(c);
            if c == '\\' && i + 1 < chars.len() {
                out.push(chars[i + 1]);
                i += 2;
                continue;
            }
            if c == quote {
                in_str = false;
            }
        } else if c == '"' || c == '\'' {
            in_str = true;
            quote = c;
            out.push(c);
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if !matches!(next, Some('}') | Some(']')) {
                out.push(c);
            }
        } else {
            out.push(c);
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn plain_and_fenced() {
        assert_eq!(extract_json(r#"{"answer": "a"}"#), Some(json!({"answer": "a"})));
        let fenced = "Sure!\n```json\n{\"answer\": \"b\"}\n```\nDone.";
        assert_eq!(extract_json(fenced), Some(json!({"answer": "b"})));
    }

    #[test]
    fn prose_wrapped_and_trailing_commas() {
        let t = "Here you go: {\"results\": [\"0\", \"1\",],} thanks";
        assert_eq!(extract_json(t), Some(json!({"results": ["0", "1"]})));
    }

    #[test]
    fn python_dict_quotes() {
        let t = "{'answer_detailed' : 'deeper', 'answer':'c'}";
        assert_eq!(
            extract_json(t),
            Some(json!({"answer_detailed": "deeper", "answer": "c"}))
        );
    }

    #[test]
    fn prose_only_is_none() {
        assert_eq!(extract_json("I think video one shows it more."), None);
        assert_eq!(extract_json(""), None);
    }
}
