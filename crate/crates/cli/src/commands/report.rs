use std::fs;
use std::path::{Path, PathBuf};

use burnscar::metrics::{read_tsv, render_table, write_tsv};
use burnscar::Result;

fn family_rank(family: &str) -> usize {
    ["indices", "ml", "dl"].iter().position(|f| *f == family).unwrap_or(3)
}

/// Merges `report.tsv` of every run directory. Rows are ordered by family,
/// method and then row text, so the result does not depend on the order
/// the directories are given in.
pub fn run(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for dir in runs {
        rows.extend(read_tsv(&fs::read_to_string(dir.join("report.tsv"))?)?);
    }
    rows.sort_by(|a, b| {
        family_rank(&a.family)
            .cmp(&family_rank(&b.family))
            .then_with(|| a.method.cmp(&b.method))
            .then_with(|| a.to_tsv_row().cmp(&b.to_tsv_row()))
    });
    let table = render_table(&rows);
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("report.tsv"), write_tsv(&rows))?;
            fs::write(dir.join("report.txt"), &table)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}
