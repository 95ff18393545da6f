//! Registry of the sixteen quality axes.
//!
//! Every other module keys on the codes defined here. The order is fixed
//! (eight technical factors, the technical aggregate, five aesthetic factors,
//! the aesthetic aggregate, overall) so that serialized reports and metric
//! tables stay column-stable.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AXIS_COUNT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perspective {
    Technical,
    Aesthetic,
    Overall,
}

impl Perspective {
    pub fn as_str(self) -> &'static str {
        match self {
            Perspective::Technical => "technical",
            Perspective::Aesthetic => "aesthetic",
            Perspective::Overall => "overall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DimensionSpec {
    pub code: &'static str,
    /// Name used when building prompts.
    pub name: &'static str,
    /// Full display label, e.g. "(Camera) Trajectory".
    pub label: &'static str,
    pub positive_desc: &'static str,
    pub negative_desc: &'static str,
    pub perspective: Perspective,
    pub temporal: bool,
    /// True for the three aggregate ratings (T-all, A-all, O).
    pub is_abstract: bool,
}

impl DimensionSpec {
    /// Aesthetic factor axes (A-1 .. A-5), the only ones whose prompts embed the axis name.
    pub fn is_aesthetic_factor(&self) -> bool {
        self.perspective == Perspective::Aesthetic && !self.is_abstract
    }
}

const fn spec(
    code: &'static str,
    name: &'static str,
    label: &'static str,
    positive_desc: &'static str,
    negative_desc: &'static str,
    perspective: Perspective,
    temporal: bool,
    is_abstract: bool,
) -> DimensionSpec {
    DimensionSpec {
        code,
        name,
        label,
        positive_desc,
        negative_desc,
        perspective,
        temporal,
        is_abstract,
    }
}

use Perspective::{Aesthetic, Overall, Technical};

static REGISTRY: [DimensionSpec; AXIS_COUNT] = [
    spec("T-1", "Sharpness", "Sharpness", "Sharp", "Fuzzy", Technical, false, false),
    spec("T-2", "Focus", "Focus", "In-Focus", "Out-of-Focus", Technical, false, false),
    spec("T-3", "Noise", "Noise", "Noiseless", "Noisy", Technical, false, false),
    spec("T-4", "Motion Blur", "Motion Blur", "Clear-Motion", "Blurry-Motion", Technical, false, false),
    spec("T-5", "Flicker", "Flicker", "Stable", "Shaky", Technical, true, false),
    spec("T-6", "Exposure", "Exposure", "Well-exposed", "Poorly-exposed", Technical, false, false),
    spec(
        "T-7",
        "Compression Artifacts",
        "Compression Artifacts",
        "Original",
        "Compressed",
        Technical,
        false,
        false,
    ),
    spec("T-8", "Fluency", "Fluency", "Fluent", "Choppy", Technical, true, false),
    spec(
        "T-all",
        "Technical Perspective",
        "Technical Perspective",
        "Not Degraded",
        "Severely Degraded",
        Technical,
        false,
        true,
    ),
    spec("A-1", "Contents", "Contents", "Good", "Bad", Aesthetic, false, false),
    spec("A-2", "Composition", "Composition", "Organized", "Chaotic", Aesthetic, false, false),
    spec("A-3", "Color", "Color", "Vibrant", "Faded", Aesthetic, false, false),
    spec("A-4", "Lighting", "Lighting", "Contrastive", "Gloomy", Aesthetic, false, false),
    spec(
        "A-5",
        "Trajectory",
        "(Camera) Trajectory",
        "Consistent",
        "Incoherent",
        Aesthetic,
        true,
        false,
    ),
    spec(
        "A-all",
        "Aesthetic Perspective",
        "Aesthetic Perspective",
        "Good Aesthetics",
        "Bad Aesthetics",
        Aesthetic,
        false,
        true,
    ),
    spec(
        "O",
        "Overall Quality score",
        "Overall Quality score",
        "High Quality",
        "Low Quality",
        Overall,
        false,
        true,
    ),
];

/// Column order used by benchmark tables (aesthetic block, technical block, overall).
pub const BENCHMARK_ORDER: [&str; AXIS_COUNT] = [
    "A-1", "A-2", "A-3", "A-4", "A-5", "A-all", "T-1", "T-2", "T-3", "T-4", "T-5", "T-6", "T-7",
    "T-8", "T-all", "O",
];

pub fn registry() -> &'static [DimensionSpec; AXIS_COUNT] {
    &REGISTRY
}

pub fn lookup(code: &str) -> Result<&'static DimensionSpec> {
    REGISTRY
        .iter()
        .find(|s| s.code == code)
        .ok_or_else(|| Error::UnknownAxis(code.to_string()))
}

/// Position of `code` in registry order.
pub fn axis_index(code: &str) -> Result<usize> {
    REGISTRY
        .iter()
        .position(|s| s.code == code)
        .ok_or_else(|| Error::UnknownAxis(code.to_string()))
}

pub fn codes() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|s| s.code)
}

/// Writes the registry as CSV, one record per axis.
pub fn export_registry<W: Write>(writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "code",
        "name",
        "label",
        "positive_desc",
        "negative_desc",
        "perspective",
        "temporal",
    ])?;
    for s in &REGISTRY {
        w.write_record([
            s.code,
            s.name,
            s.label,
            s.positive_desc,
            s.negative_desc,
            s.perspective.as_str(),
            if s.temporal { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn registry_shape() {
        let reg = registry();
        assert_eq!(reg.len(), 16);
        let codes: HashSet<_> = reg.iter().map(|s| s.code).collect();
        assert_eq!(codes.len(), 16);

        let technical_factors = reg
            .iter()
            .filter(|s| s.perspective == Technical && !s.is_abstract)
            .count();
        let aesthetic_factors = reg.iter().filter(|s| s.is_aesthetic_factor()).count();
        assert_eq!(technical_factors, 8);
        assert_eq!(aesthetic_factors, 5);
        assert_eq!(reg.iter().filter(|s| s.is_abstract).count(), 3);

        for s in reg {
            assert_ne!(s.positive_desc, s.negative_desc, "{}", s.code);
        }
        let temporal: Vec<_> = reg.iter().filter(|s| s.temporal).map(|s| s.code).collect();
        assert_eq!(temporal, ["T-5", "T-8", "A-5"]);
    }

    #[test]
    fn first_and_last_entries() {
        let first = &registry()[0];
        assert_eq!(
            (first.code, first.name, first.positive_desc, first.negative_desc),
            ("T-1", "Sharpness", "Sharp", "Fuzzy")
        );
        assert_eq!(first.perspective, Technical);
        assert!(!first.temporal);

        let last = &registry()[15];
        assert_eq!(
            (last.code, last.name, last.positive_desc, last.negative_desc),
            ("O", "Overall Quality score", "High Quality", "Low Quality")
        );
        assert_eq!(last.perspective, Overall);
    }

    #[test]
    fn lookup_known_and_unknown() {
        let color = lookup("A-3").unwrap();
        assert_eq!(
            (color.name, color.positive_desc, color.negative_desc),
            ("Color", "Vibrant", "Faded")
        );
        let flicker = lookup("T-5").unwrap();
        assert_eq!(flicker.name, "Flicker");
        assert!(flicker.temporal);

        match lookup("Z-9") {
            Err(Error::UnknownAxis(code)) => assert_eq!(code, "Z-9"),
            other => panic!("expected unknown-axis error, got {other:?}"),
        }
    }

    #[test]
    fn benchmark_order_is_a_permutation() {
        let mut idx: Vec<_> = BENCHMARK_ORDER.iter().map(|c| axis_index(c).unwrap()).collect();
        idx.sort_unstable();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn export_has_one_row_per_axis() {
        let mut buf = Vec::new();
        export_registry(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.contains("A-5,Trajectory,(Camera) Trajectory,Consistent,Incoherent,aesthetic,true"));
    }
}
