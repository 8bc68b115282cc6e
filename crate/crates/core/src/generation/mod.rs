//! Prompt construction, the LLM client contract, and instruction-tuning
//! dataset export.

mod finetune;
mod llm;
mod prompt;
mod sentence;

pub use finetune::{
    export_finetune, finetune_records, read_finetune, ExportIssue, ExportReport, FinetuneRecord,
    ReadFinetuneError,
};
pub use llm::{
    generate, HttpLlmClient, LlmClient, LlmError, LlmRequest, MockLlm, RetryPolicy,
};
pub use prompt::{
    age_slot, fallback_functioning_phrase, join_history, render_prompt, PromptError, PromptKind,
};
pub use sentence::first_sentence;
