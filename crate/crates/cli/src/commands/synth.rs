use std::fs;

use burnscar::raster::{generate_synthetic_dataset, split_counts, write_patch_file, DatasetManifest, ManifestEntry, SyntheticConfig};
use burnscar::{Error, Result};

use crate::{Context, Settings};

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let bad = || Error::Config(format!("{key}: expected `lo,hi`, got `{v}`"));
    let (a, b) = v.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Split counts: explicit `train`/`val`/`test`, or `events` split 60/20/20.
fn counts(s: &mut Settings) -> Result<(usize, usize, usize)> {
    let explicit = [s.take("train"), s.take("val"), s.take("test")];
    let events = s.take("events");
    match (&explicit, events) {
        ([None, None, None], events) => {
            let n = events.map_or(Ok(60), |v| v.parse().map_err(|_| Error::Config(format!("events: cannot parse `{v}`"))))?;
            Ok(split_counts(n))
        }
        ([Some(_), Some(_), Some(_)], None) => {
            let n = |v: &Option<String>| -> Result<usize> {
                let v = v.as_deref().unwrap();
                v.parse().map_err(|_| Error::Config(format!("split count: cannot parse `{v}`")))
            };
            Ok((n(&explicit[0])?, n(&explicit[1])?, n(&explicit[2])?))
        }
        _ => Err(Error::Config("give either `events` or all of `train`, `val`, `test`".into())),
    }
}

pub fn run(mut s: Settings, ctx: &Context) -> Result<()> {
    let root = ctx.root_seed(&mut s)?;
    let counts = counts(&mut s)?;
    let d = SyntheticConfig::default();
    let mut config = SyntheticConfig {
        patch_size: s.get("patch_size", d.patch_size)?,
        positive_probability: s.get("positive_probability", d.positive_probability)?,
        noise: s.get("noise", d.noise)?,
        water_probability: s.get("water_probability", d.water_probability)?,
        rim_falloff: s.get("rim_falloff", d.rim_falloff)?,
        ..d
    };
    if let Some(v) = s.take("severity") {
        config.severity = parse_pair("severity", &v)?;
    }
    if let Some(v) = s.take("radius") {
        config.radius = parse_pair("radius", &v)?;
    }
    s.finish()?;
    config.validate()?;

    let samples = generate_synthetic_dataset(root, &config, counts)?;
    fs::create_dir_all(ctx.out.join("patches"))?;
    let mut manifest = DatasetManifest::new(1.0, config.patch_size, &ctx.out);
    for sample in &samples {
        let rel = format!("patches/{}.flg", sample.event_id);
        write_patch_file(sample, ctx.out.join(&rel))?;
        manifest.entries.push(ManifestEntry {
            event_id: sample.event_id.clone(),
            split: sample.split,
            path: rel,
            positive_pixels: sample.truth.count_positive(),
        });
    }
    manifest.write(ctx.out.join("manifest.csv"))?;
    log::info!("wrote {} events ({}/{}/{}) to {}", samples.len(), counts.0, counts.1, counts.2, ctx.out.display());
    Ok(())
}
