//! Prompt templates and placeholder substitution.
//!
//! Templates ship in `prompts/` and are embedded at build time; [`PromptSet::load`]
//! reads an alternative directory with the same file names.

use std::path::Path;
use std::sync::OnceLock;

use super::IntentError;

pub const TASK_STRING: &str = "<TASK_STRING>";
pub const DEFAULT_TRAJ_BLOCK: &str = "<DEFAULT_TRAJ_BLOCK(v)>";
pub const PREFERRED_TRAJ_BLOCK: &str = "<PREFERRED_TRAJ_BLOCK(v)>";
pub const MOTIVATION_DICT_JSON: &str = "<MOTIVATION_DICT_JSON>";
pub const BACKGROUND_CALL: &str = "<BACKGROUND_CALL>";
pub const SEEN_OBJECT_LIST: &str = "<SEEN_OBJECT_LIST>";
pub const UNSEEN_OBJECT_LIST: &str = "<UNSEEN_OBJECT_LIST>";

/// Marker lines delimiting the two conditional branches of the Call 3 user
/// template.
pub const GIFT_BRANCH_MARKER: &str = "[If we are testing GIFT:]";
pub const BLIND_BRANCH_MARKER: &str = "[Else (We are testing LM No Intent):]";

/// Text introducing the object lists in the Call 3 user template.
pub const SEEN_LIST_INTRO: &str = "The previously seen state contains the following objects:";
pub const UNSEEN_LIST_INTRO: &str = "The new unseen state contains the following objects:";

macro_rules! builtin {
    ($name:literal) => {
        include_str!(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../prompts/",
            $name
        ))
    };
}

pub const FILE_NAMES: [&str; 6] = [
    "call1_system.txt",
    "call1_user.txt",
    "call2_system.txt",
    "call2_user.txt",
    "call3_system.txt",
    "call3_user.txt",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub call1_system: String,
    pub call1_user: String,
    pub call2_system: String,
    pub call2_user: String,
    pub call3_system: String,
    pub call3_user: String,
}

/// Which branch of the Call 3 user template to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Call3Branch {
    Gift,
    Blind,
}

impl PromptSet {
    pub fn builtin() -> &'static PromptSet {
        static SET: OnceLock<PromptSet> = OnceLock::new();
        SET.get_or_init(|| PromptSet {
            call1_system: builtin!("call1_system.txt").to_owned(),
            call1_user: builtin!("call1_user.txt").to_owned(),
            call2_system: builtin!("call2_system.txt").to_owned(),
            call2_user: builtin!("call2_user.txt").to_owned(),
            call3_system: builtin!("call3_system.txt").to_owned(),
            call3_user: builtin!("call3_user.txt").to_owned(),
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<PromptSet, IntentError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path)
                .map_err(|e| IntentError::Template(format!("cannot read {}: {e}", path.display())))
        };
        let set = PromptSet {
            call1_system: read(FILE_NAMES[0])?,
            call1_user: read(FILE_NAMES[1])?,
            call2_system: read(FILE_NAMES[2])?,
            call2_user: read(FILE_NAMES[3])?,
            call3_system: read(FILE_NAMES[4])?,
            call3_user: read(FILE_NAMES[5])?,
        };
        set.call3_branches()?;
        Ok(set)
    }

    /// Splits the Call 3 user template into `(gift_branch, blind_branch, rest)`.
    ///
    /// The GIFT branch is every line strictly between the two marker lines;
    /// the blind branch runs from the line after its marker through the
    /// first blank line following non-blank content; the rest is shared.
    pub fn call3_branches(&self) -> Result<(String, String, String), IntentError> {
        let lines: Vec<&str> = self.call3_user.split('\n').collect();
        let find = |marker: &str| {
            lines
                .iter()
                .position(|l| l.trim() == marker)
                .ok_or_else(|| IntentError::Template(format!("missing marker line {marker:?}")))
        };
        let g = find(GIFT_BRANCH_MARKER)?;
        let b = find(BLIND_BRANCH_MARKER)?;
        if b <= g {
            return Err(IntentError::Template("branch markers out of order".into()));
        }
        let gift = lines[g + 1..b].join("\n");
        let mut end = b + 1;
        let mut seen_content = false;
        while end < lines.len() {
            let blank = lines[end].trim().is_empty();
            end += 1;
            if blank && seen_content {
                break;
            }
            seen_content |= !blank;
        }
        let blind = lines[b + 1..end].join("\n");
        let rest = lines[end..].join("\n");
        let mut prefix = lines[..g].join("\n");
        if !prefix.is_empty() {
            prefix.push('\n');
        }
        Ok((format!("{prefix}{gift}"), format!("{prefix}{blind}"), rest))
    }

    pub fn render_call1_user(
        &self,
        task_string: &str,
        default_block: &str,
        preferred_block: &str,
    ) -> Result<String, IntentError> {
        let out = self
            .call1_user
            .replace(TASK_STRING, task_string)
            .replace(DEFAULT_TRAJ_BLOCK, default_block)
            .replace(PREFERRED_TRAJ_BLOCK, preferred_block);
        ensure_no_placeholders(&out)?;
        Ok(out)
    }

    pub fn render_call2_user(&self, motivation_json: &str) -> Result<String, IntentError> {
        let out = self
            .call2_user
            .replace(MOTIVATION_DICT_JSON, motivation_json);
        ensure_no_placeholders(&out)?;
        Ok(out)
    }

    pub fn render_call3_user(
        &self,
        branch: Call3Branch,
        background: Option<&str>,
        seen_list: &str,
        unseen_list: &str,
    ) -> Result<String, IntentError> {
        let (gift, blind, rest) = self.call3_branches()?;
        let head = match branch {
            Call3Branch::Gift => {
                let bg = background.ok_or_else(|| {
                    IntentError::Template("GIFT branch needs background text".into())
                })?;
                format!("{}\n", gift.replace(BACKGROUND_CALL, bg))
            }
            Call3Branch::Blind => format!("{blind}\n"),
        };
        let out = format!("{head}{rest}")
            .replace(SEEN_OBJECT_LIST, seen_list)
            .replace(UNSEEN_OBJECT_LIST, unseen_list);
        ensure_no_placeholders(&out)?;
        Ok(out)
    }
}

/// Finds tokens shaped like `<NAME>` or `<NAME(v)>` with NAME in
/// `[A-Z][A-Z_]*`.
pub fn find_placeholders(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' && bytes.get(i + 1).is_some_and(u8::is_ascii_uppercase) {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_uppercase() || bytes[j] == b'_') {
                j += 1;
            }
            let tail = &bytes[j..];
            let close = if tail.starts_with(b">") {
                Some(j + 1)
            } else if tail.starts_with(b"(v)>") {
                Some(j + 4)
            } else {
                None
            };
            if let Some(end) = close {
                out.push(text[i..end].to_owned());
                i = end;
                continue;
            }
        }
        i += 1;
    }
    out
}

pub fn ensure_no_placeholders(text: &str) -> Result<(), IntentError> {
    match find_placeholders(text).into_iter().next() {
        Some(p) => Err(IntentError::UnresolvedPlaceholder(p)),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_have_expected_placeholders() {
        let p = PromptSet::builtin();
        assert_eq!(find_placeholders(&p.call1_system), Vec::<String>::new());
        assert_eq!(
            find_placeholders(&p.call1_user),
            vec![TASK_STRING, DEFAULT_TRAJ_BLOCK, PREFERRED_TRAJ_BLOCK]
        );
        assert_eq!(find_placeholders(&p.call2_user), vec![MOTIVATION_DICT_JSON]);
        assert_eq!(
            find_placeholders(&p.call3_user),
            vec![
                BACKGROUND_CALL,
                SEEN_OBJECT_LIST,
                UNSEEN_OBJECT_LIST,
                SEEN_OBJECT_LIST
            ]
        );
    }

    #[test]
    fn call3_branches_partition_the_template() {
        let p = PromptSet::builtin();
        let (gift, blind, rest) = p.call3_branches().unwrap();
        assert!(gift.contains(BACKGROUND_CALL));
        assert!(!gift.contains("Ignore future references"));
        assert!(blind.contains("Ignore future references"));
        assert!(!blind.contains(BACKGROUND_CALL));
        assert!(rest.starts_with(SEEN_LIST_INTRO));
    }

    #[test]
    fn leftover_placeholder_is_reported() {
        let err = ensure_no_placeholders("a <FOO_BAR> b").unwrap_err();
        assert!(matches!(err, IntentError::UnresolvedPlaceholder(p) if p == "<FOO_BAR>"));
        assert!(ensure_no_placeholders("x < y and <lower>").is_ok());
    }
}
