use thiserror::Error;

use super::{validate_draft_text, PromptVersion, ReportDraft};

const PROMPT_V1: &str = include_str!("../../prompts/v1.txt");
const PROMPT_V2: &str = include_str!("../../prompts/v2.txt");

const REPORT_BEGIN: &str = "----- BEGIN STUDENT REPORT -----";
const REPORT_END: &str = "----- END STUDENT REPORT -----";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DraftError {
    #[error("draft is empty")]
    EmptyDraft,
    #[error("draft has {0} characters, the limit is {limit}", limit = super::MAX_DRAFT_CHARS)]
    DraftTooLong(usize),
}

/// The system prompt text for a version, without any draft.
pub fn system_prompt(version: PromptVersion) -> &'static str {
    match version {
        PromptVersion::V1 => PROMPT_V1,
        PromptVersion::V2 => PROMPT_V2,
    }
}

/// System prompt followed by the draft in a delimited report section.
///
/// The draft is embedded unmodified, so the output is byte-stable for
/// identical inputs.
pub fn build_prompt(version: PromptVersion, draft: &ReportDraft) -> Result<String, DraftError> {
    validate_draft_text(&draft.text)?;
    let system = system_prompt(version);
    let mut out = String::with_capacity(system.len() + draft.text.len() + 80);
    out.push_str(system.trim_end());
    out.push_str("\n\n");
    out.push_str(REPORT_BEGIN);
    out.push('\n');
    out.push_str(&draft.text);
    if !draft.text.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(REPORT_END);
    out.push('\n');
    Ok(out)
}
