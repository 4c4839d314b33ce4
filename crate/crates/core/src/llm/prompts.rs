//! Prompt templates shipped under `prompts/`. Placeholders are `{name}` and
//! are substituted in a single pass, so substituted text is never expanded
//! again.

pub const WRITER_SYSTEM: &str = include_str!("../../prompts/writer_system.txt");
pub const WRITER_USER: &str = include_str!("../../prompts/writer_user.txt");
pub const WRITER_FEEDBACK: &str = include_str!("../../prompts/writer_feedback.txt");
pub const JUDGE_SYSTEM: &str = include_str!("../../prompts/judge_system.txt");
pub const JUDGE_USER: &str = include_str!("../../prompts/judge_user.txt");
pub const REWRITER_SYSTEM: &str = include_str!("../../prompts/rewriter_system.txt");
pub const REWRITER_USER: &str = include_str!("../../prompts/rewriter_user.txt");
pub const EXISTENCE_SYSTEM: &str = include_str!("../../prompts/existence_system.txt");
pub const QA_SYSTEM: &str = include_str!("../../prompts/qa_system.txt");
pub const QA_USER: &str = include_str!("../../prompts/qa_user.txt");
pub const OPEN_JUDGE_SYSTEM: &str = include_str!("../../prompts/open_judge_system.txt");
pub const OPEN_JUDGE_USER: &str = include_str!("../../prompts/open_judge_user.txt");
pub const EXISTENCE_USER: &str = include_str!("../../prompts/existence_user.txt");

/// Replaces `{key}` with its value. Unknown placeholders are left as is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
