use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::PipelineConfig;
use crate::inject::BranchDiagnostics;
use crate::msdb::Ranked;

/// Version tag carried by every report.
pub const REPORT_SCHEMA: &str = "racig.run-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema: String,
    pub prompt: String,
    pub seed: u64,
    pub characters: usize,
    pub retrieval: RetrievalReport,
    pub assignment: AssignmentReport,
    pub steps: Vec<StepReport>,
    pub final_latent: LatentSummary,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalReport {
    /// Hex FNV-1a checksum of the index feature matrix.
    pub index_checksum: String,
    pub index_size: usize,
    pub shortlist: Vec<Ranked>,
    /// Position of the retrieved record in the shortlist.
    pub chosen: usize,
    pub retrieved_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentReport {
    pub scorer: String,
    pub perm: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepReport {
    pub t: usize,
    pub alpha_bar: f64,
    /// Conditioned branches, one per character.
    pub branches: Vec<BranchDiagnostics>,
    pub cond_l2: f64,
    pub uncond_l2: f64,
    pub guided_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionMean {
    pub region: usize,
    pub character: usize,
    pub cells: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSummary {
    pub shape: Vec<usize>,
    pub sum: f64,
    pub l2: f64,
    pub region_means: Vec<RegionMean>,
    /// Mean over cells outside every union mask; absent when there are none.
    pub background_mean: Option<f64>,
}

/// Pretty JSON with every float written in 17 significant digits.
pub struct FixedPrecision<'a>(PrettyFormatter<'a>);

impl Default for FixedPrecision<'_> {
    fn default() -> Self {
        Self(PrettyFormatter::with_indent(b"  "))
    }
}

impl Formatter for FixedPrecision<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes any value with [`FixedPrecision`], newline-terminated.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedPrecision::default());
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_digits() {
        let s = to_json(&serde_json::json!({"a": 0.1, "b": [1.0, -2.5e-300], "n": 3})).unwrap();
        assert!(s.contains(r#""a": 1.0000000000000001e-1"#), "{s}");
        assert!(s.contains("1.0000000000000000e0"));
        assert!(s.contains("-2.5000000000000000e-300"));
        assert!(s.contains(r#""n": 3"#));
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn roundtrip_is_exact_for_awkward_values() {
        for x in [f64::MIN_POSITIVE, 1.0 / 3.0, 123_456_789.123_456_78, -0.0, 5e-324, f64::MAX] {
            let s = to_json(&x).unwrap();
            let y: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{s}");
        }
    }
}
