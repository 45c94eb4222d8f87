use std::fs;

use burnscar::raster::{
    balance_negatives, ingest_scene, read_patch_file, split_counts, write_patch_file, DatasetManifest, ManifestEntry,
    Scene, Split,
};
use burnscar::{Error, Result};

use crate::{Context, Settings};

/// Scenes are full-size bitemporal files in the patch format, listed in
/// `scenes`; the listed order assigns events to train/val/test 60/20/20.
pub fn run(mut s: Settings, ctx: &Context) -> Result<()> {
    let root = ctx.root_seed(&mut s)?;
    let list = s.require("scenes")?;
    let scenes: Vec<_> = list.split(',').map(str::trim).filter(|p| !p.is_empty()).map(|p| s.resolve(p)).collect();
    let patch_size = s.get("patch_size", 256usize)?;
    let clip_max = s.get("clip_max", 1.0f32)?;
    let balance = s.get("balance", false)?;
    s.finish()?;
    if scenes.is_empty() {
        return Err(Error::Config("`scenes` lists no files".into()));
    }

    let (train, val, _) = split_counts(scenes.len());
    let mut tiles = Vec::new();
    for (i, path) in scenes.iter().enumerate() {
        let sample = read_patch_file(path)?;
        let split = if i < train {
            Split::Train
        } else if i < train + val {
            Split::Val
        } else {
            Split::Test
        };
        let scene = Scene {
            pre: sample.pre,
            post: sample.post,
            truth: sample.truth,
            water: sample.water,
            event_id: sample.event_id,
            split,
        };
        tiles.extend(ingest_scene(&scene, patch_size, clip_max)?);
    }
    if balance {
        let mut kept = Vec::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            let part: Vec<_> = tiles.iter().filter(|t| t.split == split).cloned().collect();
            if !part.is_empty() {
                kept.extend(balance_negatives(&part, burnscar::seed::derive(root, split.as_str()))?);
            }
        }
        tiles = kept;
    }

    fs::create_dir_all(ctx.out.join("patches"))?;
    let mut manifest = DatasetManifest::new(clip_max, patch_size, &ctx.out);
    for t in &tiles {
        let rel = format!("patches/{}.flg", t.event_id);
        write_patch_file(t, ctx.out.join(&rel))?;
        manifest.entries.push(ManifestEntry {
            event_id: t.event_id.clone(),
            split: t.split,
            path: rel,
            positive_pixels: t.truth.count_positive(),
        });
    }
    manifest.write(ctx.out.join("manifest.csv"))
}
