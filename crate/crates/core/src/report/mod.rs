//! Output artefacts: HTML heatmaps and the few-shot prompt harness.

pub mod heatmap;
pub mod prompts;

pub use heatmap::{render_heatmap_document, render_heatmap_html};
pub use prompts::{
    accuracy_report, build_fewshot_prompts, build_rounds, score_fewshot_runs, score_round, AccuracyReport, Prompt,
    PromptItem, PromptSpec,
};
