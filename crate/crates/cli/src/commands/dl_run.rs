use std::fs;

use burnscar::bamcd::{trace_to_tsv, train, BamCdConfig, BamCdModel};
use burnscar::metrics::{compute_metrics, Summary};
use burnscar::{Error, Result};

use super::{load_splits, repeat_seed, write_report};
use crate::{Context, Settings};

/// Every key other than `manifest`, `seed` and `repeats` is a network or
/// training setting on top of the mini profile.
pub fn run(mut s: Settings, ctx: &Context) -> Result<()> {
    let repeats = ctx.repeat_count(&mut s)?;
    let root = ctx.root_seed(&mut s)?;
    let manifest = s.path("manifest")?;
    let mut config = BamCdConfig::mini();
    for (k, v) in s.drain() {
        if !config.set(&k, &v)? {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
    }
    config.validate()?;
    let splits = load_splits(&manifest)?;
    if splits.val.is_empty() {
        return Err(Error::Ingest {
            layer: "manifest".into(),
            reason: "BAM-CD checkpoint selection needs a non-empty val split".into(),
        });
    }
    fs::create_dir_all(&ctx.out)?;
    fs::write(ctx.out.join("config.txt"), config.to_text())?;

    let mut reports = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let cfg = BamCdConfig {
            seed: repeat_seed(root, r),
            ..config.clone()
        };
        log::info!("repeat {}/{repeats}: {} trainable parameters", r + 1, cfg.parameter_count());
        let outcome = train(BamCdModel::build(&cfg)?, &splits.train, &splits.val)?;
        fs::write(ctx.out.join(format!("trace_r{r}.tsv")), trace_to_tsv(&outcome.trace))?;
        outcome.model.to_container().write(&ctx.out.join(format!("checkpoint_r{r}.bin")))?;
        reports.push(compute_metrics(&outcome.model.evaluate(&splits.test)?));
    }
    write_report(&ctx.out, &Summary::from_reports("bamcd", "dl", &reports))
}
