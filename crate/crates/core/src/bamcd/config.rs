use std::fmt::Write as _;

use crate::autodiff::LossKind;
use crate::error::{Error, Result};
use crate::raster::BandId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    /// One encoder parameter set used by both streams.
    Siamese,
    /// Independent parameter sets per stream.
    PseudoSiamese,
}

/// How scSE merges its channel- and spatial-excited maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Max,
    Add,
}

/// How the two streams' features at one level form the skip tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    Concat,
    /// `post - pre`.
    Difference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BamCdConfig {
    pub stem_width: usize,
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    pub bands: Vec<BandId>,
    pub reduction: usize,
    pub sharing: Sharing,
    pub combine: Combine,
    pub skip: SkipMode,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Random flips and transposes of training batches.
    pub augment: bool,
    pub seed: u64,
}

impl Default for BamCdConfig {
    fn default() -> Self {
        Self::mini()
    }
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}"))))
        .collect()
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl BamCdConfig {
    /// Desk-scale profile on the nine 20 m bands.
    pub fn mini() -> Self {
        Self {
            stem_width: 16,
            widths: vec![16, 32, 64, 128],
            blocks: vec![1, 1, 1, 1],
            bands: BandId::TWENTY_METRE.to_vec(),
            reduction: 2,
            sharing: Sharing::Siamese,
            combine: Combine::Max,
            skip: SkipMode::Concat,
            loss: LossKind::BceDice,
            learning_rate: 1e-3,
            epochs: 250,
            batch_size: 8,
            augment: false,
            seed: 0,
        }
    }

    /// ResNet-101-like stage layout. Only its parameter count is meant to be
    /// computed at desk scale.
    pub fn paper_like() -> Self {
        Self {
            stem_width: 64,
            widths: vec![256, 512, 1024, 2048],
            blocks: vec![3, 4, 23, 3],
            bands: BandId::ALL.to_vec(),
            reduction: 16,
            batch_size: 16,
            ..Self::mini()
        }
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    /// Input extents must be multiples of this.
    pub fn total_stride(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "widths ({}) and blocks ({}) must have equal length of at least 2",
                self.widths.len(),
                self.blocks.len()
            )));
        }
        if self.stem_width == 0 || self.widths.contains(&0) || self.blocks.contains(&0) {
            return Err(Error::Config("widths and block counts must be positive".into()));
        }
        if self.bands.is_empty() {
            return Err(Error::Config("no input bands".into()));
        }
        if self.reduction == 0 {
            return Err(Error::Config("reduction ratio must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn skip_channels(&self, level: usize) -> usize {
        match self.skip {
            SkipMode::Concat => 2 * self.widths[level],
            SkipMode::Difference => self.widths[level],
        }
    }

    pub(crate) fn squeeze_width(&self, channels: usize) -> usize {
        (channels / self.reduction).max(1)
    }

    /// Trainable parameters of the network this config builds, counted from
    /// the layer shapes without allocating anything.
    pub fn parameter_count(&self) -> usize {
        let conv_bn = |i: usize, o: usize, k: usize| i * o * k * k + 2 * o;
        let mut encoder = conv_bn(self.bands.len(), self.stem_width, 3);
        let mut c = self.stem_width;
        for (s, (&w, &n)) in self.widths.iter().zip(&self.blocks).enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                encoder += conv_bn(c, w, 3) + conv_bn(w, w, 3);
                if stride != 1 || c != w {
                    encoder += conv_bn(c, w, 1);
                }
                c = w;
            }
        }
        let streams = match self.sharing {
            Sharing::Siamese => 1,
            Sharing::PseudoSiamese => 2,
        };
        let conv_block = |i: usize, o: usize| {
            let h = self.squeeze_width(o);
            conv_bn(i, o, 3) + conv_bn(o, o, 3) + (o * h + h) + (h * o + o) + (o + 1)
        };
        let top = self.levels() - 1;
        let mut decoder = conv_block(self.skip_channels(top), self.widths[top]);
        for s in (0..top).rev() {
            decoder += conv_block(self.widths[s + 1] + self.skip_channels(s), self.widths[s]);
        }
        streams * encoder + decoder + self.widths[0] + 1
    }

    /// Applies one `key=value` setting. Returns `false` for keys this config
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "stem_width" => self.stem_width = parse(key, value)?,
            "widths" => self.widths = parse_list(key, value)?,
            "blocks" => self.blocks = parse_list(key, value)?,
            "bands" => self.bands = parse_list(key, value)?,
            "reduction" => self.reduction = parse(key, value)?,
            "sharing" => {
                self.sharing = match value.trim() {
                    "siamese" => Sharing::Siamese,
                    "pseudo_siamese" => Sharing::PseudoSiamese,
                    other => return Err(Error::Config(format!("sharing: unknown mode {other:?}"))),
                }
            }
            "combine" => {
                self.combine = match value.trim() {
                    "max" => Combine::Max,
                    "add" => Combine::Add,
                    other => return Err(Error::Config(format!("combine: unknown operator {other:?}"))),
                }
            }
            "skip" => {
                self.skip = match value.trim() {
                    "concat" => SkipMode::Concat,
                    "difference" => SkipMode::Difference,
                    other => return Err(Error::Config(format!("skip: unknown mode {other:?}"))),
                }
            }
            "loss" => {
                let keep = self.loss;
                self.loss = LossKind::parse(value.trim()).ok_or_else(|| Error::Config(format!("loss: unknown loss {value:?}")))?;
                if let (LossKind::Focal { .. }, LossKind::Focal { alpha, gamma }) = (self.loss, keep) {
                    self.loss = LossKind::Focal { alpha, gamma };
                }
            }
            "focal_alpha" | "focal_gamma" => {
                let v: f64 = parse(key, value)?;
                let (mut alpha, mut gamma) = match self.loss {
                    LossKind::Focal { alpha, gamma } => (alpha, gamma),
                    _ => (0.25, 2.0),
                };
                if key == "focal_alpha" {
                    alpha = v;
                } else {
                    gamma = v;
                }
                self.loss = LossKind::Focal { alpha, gamma };
            }
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sharing = match self.sharing {
            Sharing::Siamese => "siamese",
            Sharing::PseudoSiamese => "pseudo_siamese",
        };
        let combine = match self.combine {
            Combine::Max => "max",
            Combine::Add => "add",
        };
        let skip = match self.skip {
            SkipMode::Concat => "concat",
            SkipMode::Difference => "difference",
        };
        let _ = writeln!(s, "stem_width={}", self.stem_width);
        let _ = writeln!(s, "widths={}", list(&self.widths));
        let _ = writeln!(s, "blocks={}", list(&self.blocks));
        let _ = writeln!(s, "bands={}", list(&self.bands));
        let _ = writeln!(s, "reduction={}", self.reduction);
        let _ = writeln!(s, "sharing={sharing}");
        let _ = writeln!(s, "combine={combine}");
        let _ = writeln!(s, "skip={skip}");
        let _ = writeln!(s, "loss={}", self.loss.name());
        if let LossKind::Focal { alpha, gamma } = self.loss {
            let _ = writeln!(s, "focal_alpha={alpha:?}");
            let _ = writeln!(s, "focal_gamma={gamma:?}");
        }
        let _ = writeln!(s, "learning_rate={:?}", self.learning_rate);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "augment={}", self.augment);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::mini();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            if !c.set(k.trim(), v)? {
                return Err(Error::Config(format!("unknown key {:?}", k.trim())));
            }
        }
        Ok(c)
    }
}
