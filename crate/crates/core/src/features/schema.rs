use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::BandId;
use crate::spectral::IndexKind;

/// One column of a pixel feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    PreBand(BandId),
    PostBand(BandId),
    PreIndex(IndexKind),
    PostIndex(IndexKind),
    /// Pre minus post for unitemporal kinds; RdNBR and RBR as defined.
    Delta(IndexKind),
}

impl Feature {
    pub fn required_bands(self) -> Vec<BandId> {
        match self {
            Feature::PreBand(b) | Feature::PostBand(b) => vec![b],
            Feature::PreIndex(k) | Feature::PostIndex(k) | Feature::Delta(k) => k.required_bands(),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::PreBand(b) => write!(f, "pre_{b}"),
            Feature::PostBand(b) => write!(f, "post_{b}"),
            Feature::PreIndex(k) => write!(f, "pre_{k}"),
            Feature::PostIndex(k) => write!(f, "post_{k}"),
            Feature::Delta(k) if k.is_bitemporal() => write!(f, "{k}"),
            Feature::Delta(k) => write!(f, "d{k}"),
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown feature {s:?}"));
        if let Some(rest) = s.strip_prefix("pre_") {
            return match rest.parse::<BandId>() {
                Ok(b) => Ok(Feature::PreBand(b)),
                Err(_) => rest.parse().map(Feature::PreIndex).map_err(|_| bad()),
            };
        }
        if let Some(rest) = s.strip_prefix("post_") {
            return match rest.parse::<BandId>() {
                Ok(b) => Ok(Feature::PostBand(b)),
                Err(_) => rest.parse().map(Feature::PostIndex).map_err(|_| bad()),
            };
        }
        if let Ok(k) = s.parse::<IndexKind>() {
            if k.is_bitemporal() {
                return Ok(Feature::Delta(k));
            }
        }
        match s.strip_prefix('d').map(str::parse::<IndexKind>) {
            Some(Ok(k)) if !k.is_bitemporal() => Ok(Feature::Delta(k)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaVariant {
    All,
    Mi,
    Dsi,
}

impl SchemaVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaVariant::All => "all",
            SchemaVariant::Mi => "mi",
            SchemaVariant::Dsi => "dsi",
        }
    }
}

impl FromStr for SchemaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(SchemaVariant::All),
            "mi" => Ok(SchemaVariant::Mi),
            "dsi" => Ok(SchemaVariant::Dsi),
            _ => Err(Error::Config(format!("unknown schema variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub variant: SchemaVariant,
    pub entries: Vec<Feature>,
}

impl FeatureSchema {
    /// Pre bands, post bands, pre indices, post indices, deltas, RdNBR, RBR.
    pub fn all(bands: &[BandId]) -> Self {
        let mut entries: Vec<Feature> = bands.iter().map(|&b| Feature::PreBand(b)).collect();
        entries.extend(bands.iter().map(|&b| Feature::PostBand(b)));
        entries.extend(IndexKind::UNITEMPORAL.iter().map(|&k| Feature::PreIndex(k)));
        entries.extend(IndexKind::UNITEMPORAL.iter().map(|&k| Feature::PostIndex(k)));
        entries.extend(Self::dsi().entries);
        Self {
            variant: SchemaVariant::All,
            entries,
        }
    }

    /// Change features only.
    pub fn dsi() -> Self {
        let mut entries: Vec<Feature> = IndexKind::UNITEMPORAL.iter().map(|&k| Feature::Delta(k)).collect();
        entries.push(Feature::Delta(IndexKind::Rdnbr));
        entries.push(Feature::Delta(IndexKind::Rbr));
        Self {
            variant: SchemaVariant::Dsi,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(ToString::to_string).collect()
    }

    pub fn required_bands(&self) -> Vec<BandId> {
        BandId::ALL
            .into_iter()
            .filter(|b| self.entries.iter().any(|f| f.required_bands().contains(b)))
            .collect()
    }

    /// One line per feature after a `# variant=` header.
    pub fn to_text(&self) -> String {
        let mut s = format!("# variant={}\n", self.variant.as_str());
        for name in self.names() {
            s.push_str(&name);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let variant = lines
            .next()
            .and_then(|l| l.strip_prefix("# variant="))
            .ok_or_else(|| Error::Config("schema text must start with '# variant='".into()))?
            .parse()?;
        let entries = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse())
            .collect::<Result<_>>()?;
        Ok(Self { variant, entries })
    }
}

/// Keeps the `all` entries whose importance is strictly above 0.01, in
/// order. An empty result is returned as is.
pub fn derive_mi_schema(all: &FeatureSchema, importances: &[f64]) -> Result<FeatureSchema> {
    if importances.len() != all.len() {
        return Err(Error::dims("importance vector", all.len(), importances.len()));
    }
    Ok(FeatureSchema {
        variant: SchemaVariant::Mi,
        entries: all
            .entries
            .iter()
            .zip(importances)
            .filter(|(_, &imp)| imp > 0.01)
            .map(|(f, _)| *f)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        let s = FeatureSchema::all(&BandId::ALL);
        assert_eq!(s.len(), 61);
        let back = FeatureSchema::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.names()[0], "pre_B02");
        assert!(s.names().contains(&"dNBR".to_string()));
        assert!(s.names().contains(&"RDNBR".to_string()));
        assert!(s.names().contains(&"post_NBRPLUS".to_string()));
    }

    #[test]
    fn mi_threshold() {
        let all = FeatureSchema {
            variant: SchemaVariant::All,
            entries: vec![
                Feature::PreBand(BandId::B02),
                Feature::PreBand(BandId::B03),
                Feature::PreBand(BandId::B04),
            ],
        };
        let mi = derive_mi_schema(&all, &[0.5, 0.009, 0.491]).unwrap();
        assert_eq!(mi.entries, vec![Feature::PreBand(BandId::B02), Feature::PreBand(BandId::B04)]);
        assert!(derive_mi_schema(&all, &[0.01, 0.0, 0.0]).unwrap().is_empty());
        assert!(matches!(derive_mi_schema(&all, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
