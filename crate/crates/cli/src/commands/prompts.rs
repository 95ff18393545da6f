//! Prompt and registry export.

use std::io::Write;

use maxvqa_core::dimensions::export_registry;
use maxvqa_core::prompts::{AbstractForm, PromptSet};

use crate::error::CliResult;

pub fn run<W: Write>(form: AbstractForm, registry: bool, out: W) -> CliResult<()> {
    if registry {
        export_registry(out)?;
    } else {
        PromptSet::with_form(form).export(out)?;
    }
    Ok(())
}
