//! `THOUGHT:` / `ACTION:` output grammar.
//!
//! ```text
//! output  := (THOUGHT: text)* ACTION: kind payload
//! kind    := sql | os | os_command | shell | answer      (case-insensitive)
//! ```
//!
//! Everything before the first `ACTION:` is reasoning; each `THOUGHT:`
//! marker starts a new thought segment. The payload is the remainder of the
//! output with surrounding whitespace and code fences removed.

use crate::trajectory::{Action, ActionKind, ThoughtTrace};

pub const THOUGHT_MARKER: &str = "THOUGHT:";
pub const ACTION_MARKER: &str = "ACTION:";

fn parse_kind(word: &str) -> Option<ActionKind> {
    match word.to_ascii_lowercase().as_str() {
        "sql" => Some(ActionKind::Sql),
        "os" | "os_command" | "shell" => Some(ActionKind::OsCommand),
        "answer" => Some(ActionKind::Answer),
        _ => None,
    }
}

fn strip_fences(s: &str) -> &str {
    let s = s.trim();
    let Some(inner) = s.strip_prefix("```") else {
        return s.trim_matches('`').trim();
    };
    let inner = inner.strip_suffix("```").unwrap_or(inner);
    // drop a language tag on the opening fence
    match inner.split_once('\n') {
        Some((tag, body)) if !tag.trim().contains(' ') => body.trim(),
        _ => inner.trim(),
    }
}

fn parse_thoughts(text: &str) -> ThoughtTrace {
    let steps = text
        .split(THOUGHT_MARKER)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    ThoughtTrace { steps }
}

/// Splits backend output into reasoning and an action. Extraction failure
/// yields a `noop` action that keeps `raw`. Thoughts are kept only when
/// `cot_enabled`.
pub fn parse_assistant_output(raw: &str, cot_enabled: bool) -> (ThoughtTrace, Action) {
    let Some(at) = raw.find(ACTION_MARKER) else {
        return (ThoughtTrace::default(), Action::noop(raw));
    };
    let thought = if cot_enabled {
        parse_thoughts(&raw[..at])
    } else {
        ThoughtTrace::default()
    };
    let rest = raw[at + ACTION_MARKER.len()..].trim_start();
    let (kind_word, payload) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
    let action = match parse_kind(kind_word.trim_matches('`')) {
        Some(kind) => {
            let payload = strip_fences(payload);
            if payload.is_empty() {
                Action::noop(raw)
            } else {
                Action::new(kind, payload, raw)
            }
        }
        None => Action::noop(raw),
    };
    (thought, action)
}

pub fn render_assistant_output(thought: &ThoughtTrace, action: &Action) -> String {
    let mut out = String::new();
    for step in &thought.steps {
        out.push_str(THOUGHT_MARKER);
        out.push(' ');
        out.push_str(step);
        out.push(' ');
    }
    out.push_str(ACTION_MARKER);
    out.push(' ');
    out.push_str(&action.command_line());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thought_then_action() {
        let raw = "THOUGHT: need row count ACTION: sql SELECT COUNT(*) FROM t";
        let (t, a) = parse_assistant_output(raw, true);
        assert_eq!(t.steps, ["need row count"]);
        assert_eq!(a, Action::new(ActionKind::Sql, "SELECT COUNT(*) FROM t", raw));
    }

    #[test]
    fn cot_disabled_keeps_no_thoughts() {
        let (t, a) = parse_assistant_output("ACTION: sql SELECT 1", false);
        assert!(t.is_empty());
        assert_eq!(a.payload, "SELECT 1");
        let (t, _) = parse_assistant_output("THOUGHT: x ACTION: sql SELECT 1", false);
        assert!(t.is_empty());
    }

    #[test]
    fn missing_marker_is_noop() {
        let raw = "OK, I will do that.";
        let (_, a) = parse_assistant_output(raw, true);
        assert_eq!(a.kind, ActionKind::Noop);
        assert_eq!(a.raw, raw);
        for raw in ["ACTION: sql", "ACTION: dance now", "ACTION:"] {
            assert_eq!(parse_assistant_output(raw, true).1.kind, ActionKind::Noop, "{raw}");
        }
    }

    #[test]
    fn interleaved_thoughts_and_fences() {
        let raw = "THOUGHT: look at schema\nTHOUGHT: table is t\nACTION: sql\n```sql\nSELECT id FROM t\n```";
        let (t, a) = parse_assistant_output(raw, true);
        assert_eq!(t.steps, ["look at schema", "table is t"]);
        assert_eq!(a.payload, "SELECT id FROM t");
        let (_, a) = parse_assistant_output("ACTION: os `ls /`", true);
        assert_eq!(a, Action::new(ActionKind::OsCommand, "ls /", "ACTION: os `ls /`"));
    }

    proptest! {
        #[test]
        fn render_then_parse(
            thoughts in prop::collection::vec("[a-z][a-z ]{0,20}[a-z]", 0..3),
            payload in "[A-Za-z][A-Za-z0-9 *=,']{0,30}[A-Za-z0-9]",
            kind in prop_oneof![Just(ActionKind::Sql), Just(ActionKind::OsCommand), Just(ActionKind::Answer)],
        ) {
            let thought = ThoughtTrace { steps: thoughts };
            let action = Action::new(kind, payload.clone(), "");
            let raw = render_assistant_output(&thought, &action);
            let (t, a) = parse_assistant_output(&raw, true);
            prop_assert_eq!(t, thought);
            prop_assert_eq!(a.kind, kind);
            prop_assert_eq!(a.payload, payload);
        }
    }
}
