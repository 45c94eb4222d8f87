use log::warn;
use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::BitemporalSample;
use crate::seed;

/// A sampled pixel: the patch it belongs to (index into the input slice)
/// and its position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelPosition {
    pub patch: usize,
    pub row: usize,
    pub col: usize,
    pub label: u8,
    pub water: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatchDraw {
    pub patch: usize,
    pub burnt_requested: usize,
    pub burnt: usize,
    pub unburnt_requested: usize,
    pub unburnt: usize,
    pub water: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelSelection {
    pub positions: Vec<PixelPosition>,
    pub draws: Vec<PatchDraw>,
}

impl PixelSelection {
    pub fn burnt(&self) -> usize {
        self.draws.iter().map(|d| d.burnt).sum()
    }

    pub fn unburnt(&self) -> usize {
        self.draws.iter().map(|d| d.unburnt).sum()
    }

    /// Pixels requested but not available in their stratum.
    pub fn shortfall(&self) -> usize {
        self.draws
            .iter()
            .map(|d| d.burnt_requested - d.burnt + d.unburnt_requested - d.unburnt)
            .sum()
    }

    pub fn for_patch(&self, patch: usize) -> impl Iterator<Item = &PixelPosition> {
        self.positions.iter().filter(move |p| p.patch == patch)
    }
}

/// `total` split evenly over `parts`, the remainder going to the first ones.
fn allocate(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

fn draw(rng: &mut impl rand::Rng, pool: &[usize], k: usize) -> Vec<usize> {
    let k = k.min(pool.len());
    let mut out: Vec<usize> = index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    out.sort_unstable();
    out
}

fn sample_patch(sample: &BitemporalSample, patch: usize, burnt_quota: usize, unburnt_quota: usize, root: u64) -> (Vec<PixelPosition>, PatchDraw) {
    let w = sample.width();
    let labels = sample.truth.labels();
    let mut burnt = Vec::new();
    let mut dry = Vec::new();
    let mut wet = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == 1 {
            burnt.push(i);
        } else if sample.is_water(i / w, i % w) {
            wet.push(i);
        } else {
            dry.push(i);
        }
    }
    let mut rng = seed::rng(root, &format!("features.sample.{patch}"));
    let picked_burnt = draw(&mut rng, &burnt, burnt_quota);
    let water_quota = if wet.is_empty() { 0 } else { unburnt_quota.div_ceil(10) };
    let water_take = water_quota.max(unburnt_quota.saturating_sub(dry.len())).min(wet.len());
    let picked_wet = draw(&mut rng, &wet, water_take);
    let picked_dry = draw(&mut rng, &dry, unburnt_quota - picked_wet.len());

    let mut positions = Vec::with_capacity(picked_burnt.len() + picked_wet.len() + picked_dry.len());
    let mut push = |i: usize, label: u8, water: bool| {
        positions.push(PixelPosition {
            patch,
            row: i / w,
            col: i % w,
            label,
            water,
        })
    };
    picked_burnt.iter().for_each(|&i| push(i, 1, false));
    let mut unburnt: Vec<(usize, bool)> = picked_wet.iter().map(|&i| (i, true)).chain(picked_dry.iter().map(|&i| (i, false))).collect();
    unburnt.sort_unstable();
    unburnt.iter().for_each(|&(i, water)| push(i, 0, water));
    let record = PatchDraw {
        patch,
        burnt_requested: burnt_quota,
        burnt: picked_burnt.len(),
        unburnt_requested: unburnt_quota,
        unburnt: picked_wet.len() + picked_dry.len(),
        water: picked_wet.len(),
    };
    (positions, record)
}

/// Balanced pixel sampling.
///
/// Every positive patch is used, plus as many negative patches drawn
/// uniformly (all of them if there are fewer). `n / 2` burnt pixels are
/// spread evenly over the positive patches and `n / 2` unburnt pixels over
/// all selected patches; remainders go to the earliest patches. Within a
/// patch holding water, at least a tenth (rounded up) of the unburnt draw
/// comes from water. Short strata give what they have and the shortfall is
/// logged, not made up elsewhere. Positions are ordered by patch index.
pub fn sample_pixels(samples: &[BitemporalSample], n: usize, root: u64) -> Result<PixelSelection> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::Config(format!("pixel budget must be a positive even number, got {n}")));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| samples[i].is_positive());
    if pos.is_empty() {
        return Err(Error::Sampling("no burnt pixels in the pool".into()));
    }
    if neg.len() < pos.len() {
        warn!("{} positive patches but only {} negatives; using all negatives", pos.len(), neg.len());
    }
    let mut rng = seed::rng(root, "features.sample.patches");
    let mut selected: Vec<usize> = draw(&mut rng, &neg, pos.len());
    selected.extend(&pos);
    selected.sort_unstable();

    let burnt_alloc = allocate(n / 2, pos.len());
    let unburnt_alloc = allocate(n / 2, selected.len());
    let mut burnt_iter = burnt_alloc.into_iter();
    let jobs: Vec<(usize, usize, usize)> = selected
        .iter()
        .zip(unburnt_alloc)
        .map(|(&p, u)| {
            let b = if samples[p].is_positive() { burnt_iter.next().unwrap() } else { 0 };
            (p, b, u)
        })
        .collect();
    let results: Vec<(Vec<PixelPosition>, PatchDraw)> = jobs
        .par_iter()
        .map(|&(p, b, u)| sample_patch(&samples[p], p, b, u, root))
        .collect();

    let mut selection = PixelSelection::default();
    for (positions, record) in results {
        selection.positions.extend(positions);
        selection.draws.push(record);
    }
    let short = selection.shortfall();
    if short > 0 {
        warn!("pixel sampling fell {short} pixels short of the requested {n}");
    }
    Ok(selection)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_remainder_first() {
        assert_eq!(allocate(10, 3), vec![4, 3, 3]);
        assert_eq!(allocate(2, 4), vec![1, 1, 0, 0]);
    }
}
