//! Instruction templates and chat message assembly.

use thiserror::Error;

use super::backend::ChatMessage;
use super::AnnotationItem;
use crate::taxonomy::PromptKind;

/// The distortion list as it appears inside both instructions.
pub const DISTORTION_LIST: &str = "[Emotional Reasoning, Overgeneralization, Mental Filter, Should Statements, All or Nothing Thinking, Mind Reading, Fortune Telling, Magnification (Catastrophizing), Personalization, Labeling]";

const RLP_INSTRUCTION: &str = "As a specialized annotator in psychology with expertise in cognitive distortions, analyze the user input to identify any underlying cognitive distortion(s) from the specified list called Cognitive Distortions List. Your task is to determine the most dominant cognitive distortion present. If there is a secondary distortion, note it as well. In cases where multiple distortions are present, select the most dominant one as the primary label, and if necessary, include one secondary label. The response must include at most two labels. If no distortions are found, label the user input as No Distortion.\n\nCognitive Distortions List: [Emotional Reasoning, Overgeneralization, Mental Filter, Should Statements, All or Nothing Thinking, Mind Reading, Fortune Telling, Magnification (Catastrophizing), Personalization, Labeling]\n\nOutput Format: If cognitive distortions are identified, provide them as a comma-separated list, with the most dominant distortion listed first, followed by a secondary distortion if applicable. At most two distortions should be listed. If no distortions are found, return No Distortion.";

const MLP_INSTRUCTION: &str = "As a specialized annotator in psychology with expertise in cognitive distortions, analyze the user input to identify any underlying cognitive distortion(s) from the specified list called Cognitive Distortions List and provide results as per the Output Format only.\n\nCognitive Distortions List: [Emotional Reasoning, Overgeneralization, Mental Filter, Should Statements, All or Nothing Thinking, Mind Reading, Fortune Telling, Magnification (Catastrophizing), Personalization, Labeling]\n\nOutput Format: If any cognitive distortion(s) are identified, list them as a comma-separated list. If no distortion(s) are found, return No Distortion.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("item {item_id} has an empty user input")]
    EmptyInput { item_id: String },
}

pub fn instruction_text(kind: PromptKind) -> &'static str {
    match kind {
        PromptKind::Rlp => RLP_INSTRUCTION,
        PromptKind::Mlp => MLP_INSTRUCTION,
    }
}

/// Single-string view of the full prompt, for logs and tests.
pub fn render_prompt(item: &AnnotationItem, kind: PromptKind) -> Result<String, PromptError> {
    let messages = chat_messages(item, kind)?;
    Ok(format!("{}\n\n{}", messages[0].content, messages[1].content))
}

/// System message carries the instruction, user message carries the text.
pub fn chat_messages(
    item: &AnnotationItem,
    kind: PromptKind,
) -> Result<[ChatMessage; 2], PromptError> {
    if item.user_input.trim().is_empty() {
        return Err(PromptError::EmptyInput {
            item_id: item.item_id.clone(),
        });
    }
    Ok([
        ChatMessage::system(instruction_text(kind)),
        ChatMessage::user(format!("User Input: {}", item.user_input)),
    ])
}
