//! Synthetic benchmark tooling: a deterministic template generator, the
//! generation prompt, a chat-completion client and the record validator.

pub mod llm;
mod prompt;
mod template;
mod validate;

pub use prompt::{render_prompt, render_prompt_n, DEFAULT_SAMPLES_PER_PROMPT};
pub use template::{default_templates, generate_template_corpus, spec_classes, ClassTemplate, GenSpec, MIN_HEADERS};
pub use validate::{
    count_headers, find_duplicates, to_records, validate_sample, write_records, SynthSample, Violation,
    CATEGORY_FIELD, PAYLOAD_FIELD,
};
