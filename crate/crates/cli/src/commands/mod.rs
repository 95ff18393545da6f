pub mod analyze;
pub mod evaluate;
pub mod extract;
pub mod predict;
pub mod prompts;
pub mod train;

use std::fs;
use std::path::Path;

use crate::error::{CliResult, Kind, Tag};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).tag(Kind::Data, || format!("creating {}", dir.display()))
}
