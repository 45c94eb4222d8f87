//! FLG1 binary patch files.
//!
//! Little-endian layout:
//!
//! ```text
//! "FLG1"                      magic
//! u16                         version (1)
//! u16                         patch size (square patches)
//! u8                          band count
//! [u8; 4] x band count        band names, ASCII, space padded
//! u8                          mask flags: bit 0 truth, bit 1 water
//! u8                          split: 0 train, 1 val, 2 test
//! u16 + bytes                 event id, UTF-8
//! f32 [band][row][col]        pre-fire reflectance
//! f32 [band][row][col]        post-fire reflectance
//! u8 [row][col]               truth mask (if flagged)
//! u8 [row][col]               water mask (if flagged)
//! ```

use std::fs;
use std::path::Path;

use super::{BandId, BitemporalSample, GroundTruthMask, RasterPatch, Split};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FLG1";
pub const FORMAT_VERSION: u16 = 1;

const FLAG_TRUTH: u8 = 0b01;
const FLAG_WATER: u8 = 0b10;

fn band_tag(b: BandId) -> [u8; 4] {
    let mut tag = [b' '; 4];
    tag[..3].copy_from_slice(b.name().as_bytes());
    tag
}

pub fn encode_sample(sample: &BitemporalSample) -> Result<Vec<u8>> {
    let size = sample.height();
    if sample.width() != size {
        return Err(Error::Config(format!(
            "FLG1 stores square patches; got {}x{}",
            sample.height(),
            sample.width()
        )));
    }
    let size16 = u16::try_from(size).map_err(|_| Error::Config(format!("patch size {size} exceeds u16")))?;
    let nb = u8::try_from(sample.pre.bands().len()).map_err(|_| Error::Config("too many bands".into()))?;
    let id = sample.event_id.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| Error::Config("event id too long".into()))?;

    let plane = size * size;
    let mut buf = Vec::with_capacity(32 + id.len() + 8 * plane * nb as usize + 2 * plane);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&size16.to_le_bytes());
    buf.push(nb);
    for &b in sample.pre.bands() {
        buf.extend_from_slice(&band_tag(b));
    }
    let flags = FLAG_TRUTH | if sample.water.is_some() { FLAG_WATER } else { 0 };
    buf.push(flags);
    buf.push(sample.split.code());
    buf.extend_from_slice(&id_len.to_le_bytes());
    buf.extend_from_slice(id);
    for v in sample.pre.data().iter().chain(sample.post.data()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(sample.truth.labels());
    if let Some(w) = &sample.water {
        buf.extend_from_slice(w.labels());
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                reason: format!(
                    "truncated while reading {what}: needed {n} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn fail(&self, at: usize, reason: String) -> Error {
        Error::Format {
            offset: at as u64,
            reason,
        }
    }
}

pub fn decode_sample(bytes: &[u8]) -> Result<BitemporalSample> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(cur.fail(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let at = cur.pos;
    let version = cur.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(cur.fail(at, format!("unsupported version {version}")));
    }
    let size = cur.u16("patch size")? as usize;
    let nb = cur.u8("band count")? as usize;
    let mut bands = Vec::with_capacity(nb);
    for _ in 0..nb {
        let at = cur.pos;
        let tag = cur.take(4, "band table")?;
        let name = std::str::from_utf8(tag)
            .map_err(|_| cur.fail(at, "band name is not ASCII".into()))?
            .trim_end_matches([' ', '\0']);
        let band = name
            .parse::<BandId>()
            .map_err(|_| cur.fail(at, format!("unknown band name `{name}`")))?;
        bands.push(band);
    }
    let at = cur.pos;
    let flags = cur.u8("mask flags")?;
    if flags & !(FLAG_TRUTH | FLAG_WATER) != 0 {
        return Err(cur.fail(at, format!("unknown mask flags {flags:#04x}")));
    }
    let at = cur.pos;
    let split = Split::from_code(cur.u8("split")?).ok_or_else(|| cur.fail(at, "invalid split code".into()))?;
    let id_len = cur.u16("event id length")? as usize;
    let at = cur.pos;
    let event_id = std::str::from_utf8(cur.take(id_len, "event id")?)
        .map_err(|_| cur.fail(at, "event id is not UTF-8".into()))?
        .to_owned();

    let plane = size * size;
    let pre = cur.f32s(plane * nb, "pre-fire payload")?;
    let post = cur.f32s(plane * nb, "post-fire payload")?;
    let mut mask = |flag: u8, what: &str| -> Result<Option<GroundTruthMask>> {
        if flags & flag == 0 {
            return Ok(None);
        }
        let at = cur.pos;
        let labels = cur.take(plane, what)?.to_vec();
        GroundTruthMask::new(size, size, labels)
            .map(Some)
            .map_err(|e| Error::Format {
                offset: at as u64,
                reason: format!("{what}: {e}"),
            })
    };
    let truth = mask(FLAG_TRUTH, "truth mask")?.unwrap_or_else(|| GroundTruthMask::zeros(size, size));
    let water = mask(FLAG_WATER, "water mask")?;
    if cur.pos != bytes.len() {
        return Err(cur.fail(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let dup = |e: Error| Error::Format {
        offset: 13,
        reason: e.to_string(),
    };
    let pre = RasterPatch::new(size, size, bands.clone(), pre).map_err(dup)?;
    let post = RasterPatch::new(size, size, bands, post).map_err(dup)?;
    BitemporalSample::new(pre, post, truth, water, event_id, split)
}

pub fn write_patch_file(sample: &BitemporalSample, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_sample(sample)?)?;
    Ok(())
}

pub fn read_patch_file(path: impl AsRef<Path>) -> Result<BitemporalSample> {
    decode_sample(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(water: bool) -> BitemporalSample {
        let bands = vec![BandId::B8A, BandId::B02, BandId::B12];
        let data: Vec<f32> = (0..3 * 16).map(|i| i as f32 * 0.01).collect();
        let pre = RasterPatch::new(4, 4, bands.clone(), data.clone()).unwrap();
        let post = RasterPatch::new(4, 4, bands, data.iter().map(|v| v * 0.5).collect()).unwrap();
        let mut truth = GroundTruthMask::zeros(4, 4);
        truth.labels_mut()[5] = 1;
        let water = water.then(|| {
            let mut m = GroundTruthMask::zeros(4, 4);
            m.labels_mut()[15] = 1;
            m
        });
        BitemporalSample::new(pre, post, truth, water, "evt-7", Split::Val).unwrap()
    }

    #[test]
    fn round_trip_keeps_band_order_and_masks() {
        for w in [false, true] {
            let s = sample(w);
            assert_eq!(decode_sample(&encode_sample(&s).unwrap()).unwrap(), s);
        }
    }

    #[test]
    fn header_bytes() {
        let bytes = encode_sample(&sample(false)).unwrap();
        assert_eq!(&bytes[..4], b"FLG1");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..8], &[4, 0]);
        assert_eq!(bytes[8], 3);
        assert_eq!(&bytes[9..13], b"B8A ");
        assert_eq!(bytes[21], FLAG_TRUTH);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_sample(&sample(false)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_sample(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_band_reports_offset() {
        let mut bytes = encode_sample(&sample(false)).unwrap();
        bytes[13..17].copy_from_slice(b"B99 ");
        match decode_sample(&bytes) {
            Err(Error::Format { offset, reason }) => {
                assert_eq!(offset, 13);
                assert!(reason.contains("B99"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_sample(&sample(true)).unwrap();
        // Header is 4+2+2+1+12+1+1+2+5 = 30 bytes; cut inside the pre payload.
        let cut = 30 + 10;
        match decode_sample(&bytes[..cut]) {
            Err(Error::Format { offset, reason }) => {
                assert_eq!(offset, cut as u64);
                assert!(reason.contains("pre-fire payload"), "{reason}");
                assert!(reason.contains("offset 30"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
