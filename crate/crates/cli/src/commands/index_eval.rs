use std::fs;

use burnscar::features::Feature;
use burnscar::metrics::{accumulate, compute_metrics, ConfusionCounts, Summary};
use burnscar::spectral::IndexKind;
use burnscar::threshold::fit_threshold;
use burnscar::Result;

use super::{load_splits, write_report};
use crate::{Context, Settings};

/// `index` takes an index name (`NBR`, `dNBR`, `RdNBR`, ...); unitemporal
/// names are thresholded on their delta.
pub fn parse_index(name: &str) -> Result<IndexKind> {
    name.parse().or_else(|e| {
        match name.strip_prefix('d').map(str::parse::<IndexKind>) {
            Some(Ok(k)) if !k.is_bitemporal() => Ok(k),
            _ => Err(e),
        }
    })
}

pub fn run(mut s: Settings, ctx: &Context) -> Result<()> {
    let kind = parse_index(&s.require("index")?)?;
    let repeats = ctx.repeat_count(&mut s)?;
    ctx.root_seed(&mut s)?;
    let manifest = s.path("manifest")?;
    s.finish()?;
    let splits = load_splits(&manifest)?;
    if repeats > 1 {
        log::info!("thresholding is deterministic; reporting a single run");
    }

    let model = fit_threshold(kind, &splits.train)?;
    let mut counts = ConfusionCounts::default();
    for sample in &splits.test {
        counts += accumulate(&model.predict(sample)?, &sample.truth)?;
    }
    fs::create_dir_all(&ctx.out)?;
    fs::write(ctx.out.join("threshold_model.txt"), model.to_text())?;
    let name = Feature::Delta(kind).to_string();
    write_report(&ctx.out, &Summary::from_reports(name, "indices", &[compute_metrics(&counts)]))
}
