//! Agent system-prompt templates with `{placeholder}` substitution.
//!
//! Only the named placeholders are replaced; the templates also contain
//! literal JSON braces, which pass through untouched.

pub const INTERPRETER: &str = include_str!("../assets/prompts/interpreter.txt");
pub const DECOMPOSER: &str = include_str!("../assets/prompts/decomposer.txt");
pub const PROFILER: &str = include_str!("../assets/prompts/profiler.txt");
pub const GENERATOR: &str = include_str!("../assets/prompts/generator.txt");
pub const DEBUGGER: &str = include_str!("../assets/prompts/debugger.txt");
pub const SUMMARIZER: &str = include_str!("../assets/prompts/summarizer.txt");

/// Replaces each `{name}` with its value. Substituted text is never rescanned,
/// so values containing brace sequences are inserted verbatim.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in values {
            let key_len = name.len() + 2;
            if tail.len() >= key_len
                && tail.as_bytes()[key_len - 1] == b'}'
                && &tail[1..key_len - 1] == *name
            {
                out.push_str(value);
                rest = &tail[key_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

/// Placeholder names a template expects, in order of first appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let tail = &rest[open + 1..];
        let end = tail
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(tail.len());
        if end > 0 && tail[end..].starts_with('}') && !names.contains(&&tail[..end]) {
            names.push(&tail[..end]);
        }
        rest = tail;
    }
    names
}
