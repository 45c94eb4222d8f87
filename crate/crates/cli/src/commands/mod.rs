//! One module per subcommand plus the plumbing they share.

pub mod dl_run;
pub mod index_eval;
pub mod ingest;
pub mod ml_run;
pub mod report;
pub mod synth;

use std::fs;
use std::path::Path;

use burnscar::metrics::{render_table, write_tsv, Summary};
use burnscar::raster::{BitemporalSample, DatasetManifest, Split};
use burnscar::{seed, Error, Result};

pub(crate) struct Splits {
    pub train: Vec<BitemporalSample>,
    pub val: Vec<BitemporalSample>,
    pub test: Vec<BitemporalSample>,
}

pub(crate) fn load_splits(path: &Path) -> Result<Splits> {
    if !path.is_file() {
        return Err(Error::Ingest {
            layer: "manifest".into(),
            reason: format!("{} does not exist", path.display()),
        });
    }
    let manifest = DatasetManifest::read(path)?;
    let splits = Splits {
        train: manifest.load_split(Split::Train)?,
        val: manifest.load_split(Split::Val)?,
        test: manifest.load_split(Split::Test)?,
    };
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(Error::Ingest {
            layer: "manifest".into(),
            reason: format!("{} needs non-empty train and test splits", path.display()),
        });
    }
    Ok(splits)
}

/// Seed of repeat `r`; repeats never share a stream with each other or
/// with the root.
pub(crate) fn repeat_seed(root: u64, r: usize) -> u64 {
    seed::derive(root, &format!("repeat.{r}"))
}

pub(crate) fn write_report(out: &Path, summary: &Summary) -> Result<()> {
    let rows = std::slice::from_ref(summary);
    fs::write(out.join("report.tsv"), write_tsv(rows))?;
    fs::write(out.join("report.txt"), render_table(rows))?;
    Ok(())
}
