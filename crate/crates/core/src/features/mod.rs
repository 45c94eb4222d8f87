//! Pixel sampling and per-pixel feature vectors for the classical learners.

mod sampling;
mod schema;

use std::io::Write;

use rayon::prelude::*;

pub use sampling::{sample_pixels, PatchDraw, PixelPosition, PixelSelection};
pub use schema::{derive_mi_schema, Feature, FeatureSchema, SchemaVariant};

use crate::error::{Error, Result};
use crate::raster::{BitemporalSample, RasterPatch};
use crate::spectral::{self, IndexKind, Pixel};

#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureVector {
    pub features: Vec<f64>,
    pub label: u8,
    pub event_id: String,
    pub row: usize,
    pub col: usize,
}

/// Feature vectors plus, per schema column, how many NaN values were
/// replaced by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub schema: FeatureSchema,
    pub vectors: Vec<PixelFeatureVector>,
    pub nan_counts: Vec<usize>,
}

impl FeatureDataset {
    pub fn features(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| v.features.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.vectors.iter().map(|v| v.label).collect()
    }

    /// Delimited text: header `event_id,row,col,<feature names>,label`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["event_id".to_string(), "row".into(), "col".into()];
        header.extend(self.schema.names());
        header.push("label".into());
        w.write_record(&header)?;
        for v in &self.vectors {
            let mut rec = vec![v.event_id.clone(), v.row.to_string(), v.col.to_string()];
            rec.extend(v.features.iter().map(|x| format!("{x:?}")));
            rec.push(v.label.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_schema(schema: &FeatureSchema, patch: &RasterPatch) -> Result<()> {
    for f in &schema.entries {
        for band in f.required_bands() {
            if patch.band(band).is_none() {
                let index = match f {
                    Feature::PreBand(_) | Feature::PostBand(_) => f.to_string(),
                    Feature::PreIndex(k) | Feature::PostIndex(k) | Feature::Delta(k) => k.name().to_string(),
                };
                return Err(Error::MissingBand { index, band });
            }
        }
    }
    Ok(())
}

fn pixel_at(patch: &RasterPatch, i: usize) -> Pixel {
    let mut p = Pixel::default();
    let plane = patch.pixels();
    for (k, &b) in patch.bands().iter().enumerate() {
        p.set(b, f64::from(patch.data()[k * plane + i]));
    }
    p
}

/// Schema-ordered values of one pixel; NaNs are kept.
pub fn pixel_features(schema: &FeatureSchema, pre: &Pixel, post: &Pixel) -> Vec<f64> {
    schema
        .entries
        .iter()
        .map(|f| match *f {
            Feature::PreBand(b) => pre.band(b),
            Feature::PostBand(b) => post.band(b),
            Feature::PreIndex(k) => spectral::evaluate(k, pre),
            Feature::PostIndex(k) => spectral::evaluate(k, post),
            Feature::Delta(IndexKind::Rdnbr) => spectral::rdnbr(
                spectral::evaluate(IndexKind::Nbr, pre),
                spectral::evaluate(IndexKind::Nbr, post),
            ),
            Feature::Delta(IndexKind::Rbr) => spectral::rbr(
                spectral::evaluate(IndexKind::Nbr, pre),
                spectral::evaluate(IndexKind::Nbr, post),
            ),
            Feature::Delta(k) => spectral::evaluate(k, pre) - spectral::evaluate(k, post),
        })
        .collect()
}

fn zero_nans(values: &mut [f64], counts: &mut [usize]) {
    for (v, c) in values.iter_mut().zip(counts.iter_mut()) {
        if v.is_nan() {
            *v = 0.0;
            *c += 1;
        }
    }
}

/// Feature vectors of the given `(row, col)` positions of one sample.
/// Returns the vectors and per-feature NaN replacement counts.
pub fn assemble_features(
    schema: &FeatureSchema,
    sample: &BitemporalSample,
    positions: &[(usize, usize)],
) -> Result<(Vec<PixelFeatureVector>, Vec<usize>)> {
    check_schema(schema, &sample.pre)?;
    let w = sample.width();
    let mut counts = vec![0; schema.len()];
    let mut out = Vec::with_capacity(positions.len());
    for &(row, col) in positions {
        if row >= sample.height() || col >= w {
            return Err(Error::dims("pixel position", format!("< {}x{w}", sample.height()), format!("({row}, {col})")));
        }
        let i = row * w + col;
        let mut features = pixel_features(schema, &pixel_at(&sample.pre, i), &pixel_at(&sample.post, i));
        zero_nans(&mut features, &mut counts);
        out.push(PixelFeatureVector {
            features,
            label: sample.truth.get(row, col),
            event_id: sample.event_id.clone(),
            row,
            col,
        });
    }
    Ok((out, counts))
}

/// Assembles the selected pixels of every sampled patch, in patch order.
pub fn build_dataset(schema: &FeatureSchema, samples: &[BitemporalSample], selection: &PixelSelection) -> Result<FeatureDataset> {
    let mut patches: Vec<usize> = selection.positions.iter().map(|p| p.patch).collect();
    patches.dedup();
    let parts: Vec<(Vec<PixelFeatureVector>, Vec<usize>)> = patches
        .par_iter()
        .map(|&p| {
            let pos: Vec<(usize, usize)> = selection.for_patch(p).map(|q| (q.row, q.col)).collect();
            assemble_features(schema, &samples[p], &pos)
        })
        .collect::<Result<_>>()?;
    let mut ds = FeatureDataset {
        schema: schema.clone(),
        vectors: Vec::with_capacity(selection.positions.len()),
        nan_counts: vec![0; schema.len()],
    };
    for (vectors, counts) in parts {
        ds.vectors.extend(vectors);
        ds.nan_counts.iter_mut().zip(counts).for_each(|(a, b)| *a += b);
    }
    Ok(ds)
}

/// Row-major `pixels x features` matrix over a whole sample, NaNs zeroed.
pub fn patch_feature_matrix(schema: &FeatureSchema, sample: &BitemporalSample) -> Result<Vec<Vec<f64>>> {
    check_schema(schema, &sample.pre)?;
    let mut counts = vec![0; schema.len()];
    Ok((0..sample.pre.pixels())
        .map(|i| {
            let mut f = pixel_features(schema, &pixel_at(&sample.pre, i), &pixel_at(&sample.post, i));
            zero_nans(&mut f, &mut counts);
            f
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{BandId, GroundTruthMask, Split};

    fn flat_sample(v: f32) -> BitemporalSample {
        let pre = RasterPatch::new(2, 2, BandId::ALL.to_vec(), vec![v; 40]).unwrap();
        BitemporalSample::new(pre.clone(), pre, GroundTruthMask::zeros(2, 2), None, "e", Split::Train).unwrap()
    }

    #[test]
    fn identical_pair_gives_zero_deltas() {
        let (vs, _) = assemble_features(&FeatureSchema::dsi(), &flat_sample(0.2), &[(0, 0), (1, 1)]).unwrap();
        assert!(vs.iter().all(|v| v.features.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn nan_replaced_and_counted() {
        // All-zero reflectance: every normalised difference is 0/0.
        let (vs, counts) = assemble_features(&FeatureSchema::dsi(), &flat_sample(0.0), &[(0, 0), (0, 1)]).unwrap();
        assert!(vs.iter().all(|v| v.features.iter().all(|x| x.is_finite())));
        let dndvi = FeatureSchema::dsi().names().iter().position(|n| n == "dNDVI").unwrap();
        assert_eq!(counts[dndvi], 2);
    }

    #[test]
    fn missing_band() {
        let pre = RasterPatch::new(1, 1, vec![BandId::B04], vec![0.1]).unwrap();
        let s = BitemporalSample::new(pre.clone(), pre, GroundTruthMask::zeros(1, 1), None, "e", Split::Train).unwrap();
        assert!(matches!(
            assemble_features(&FeatureSchema::dsi(), &s, &[(0, 0)]),
            Err(Error::MissingBand { .. })
        ));
    }
}
