//! JSONL record formats and float formatting.
//!
//! Floats are written `%.17g`-style: 17 significant digits with trailing
//! zeros dropped, which round-trips every `f64` exactly and does not depend
//! on the shortest-representation algorithm of the JSON library.

use crate::composition::{CompositionSpec, CouplingConstraint, CouplingSet, LocalStructure, OwnershipMap};
use crate::error::{CoherenceError, Result};
use crate::polytope::{Relation, RelationKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};

/// `serde_json` formatter writing floats with 17 significant digits.
#[derive(Debug, Clone, Copy, Default)]
pub struct G17Formatter;

impl serde_json::ser::Formatter for G17Formatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_g17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        writer.write_all(format_g17(value as f64).as_bytes())
    }
}

/// `%.17g` with a guaranteed decimal point or exponent, so the value reads
/// back as a float.
pub fn format_g17(value: f64) -> String {
    if value == 0.0 {
        return if value.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    let sci = format!("{value:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{value:.decimals$}");
        let trimmed = if fixed.contains('.') {
            fixed.trim_end_matches('0').to_string()
        } else {
            fixed
        };
        if trimmed.ends_with('.') {
            format!("{trimmed}0")
        } else {
            trimmed
        }
    } else {
        let m = mantissa.trim_end_matches('0');
        let m = m
            .strip_suffix('.')
            .map(|s| format!("{s}.0"))
            .unwrap_or_else(|| m.to_string());
        format!("{m}e{exp}")
    }
}

/// One JSON line (no trailing newline) with [`G17Formatter`].
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, G17Formatter);
    value
        .serialize(&mut ser)
        .map_err(|e| CoherenceError::Internal(format!("serialization failed: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Pretty JSON document with [`G17Formatter`]-style floats.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    // re-emit through the compact writer, then indent via serde_json::Value
    // would lose the float format, so indent by hand with PrettyFormatter
    struct Pretty<'a>(serde_json::ser::PrettyFormatter<'a>);
    impl serde_json::ser::Formatter for Pretty<'_> {
        fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
            w.write_all(format_g17(v).as_bytes())
        }
        fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.begin_array(w)
        }
        fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.end_array(w)
        }
        fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
            self.0.begin_array_value(w, first)
        }
        fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.end_array_value(w)
        }
        fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.begin_object(w)
        }
        fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.end_object(w)
        }
        fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
            self.0.begin_object_key(w, first)
        }
        fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.begin_object_value(w)
        }
        fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
            self.0.end_object_value(w)
        }
    }
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Pretty(serde_json::ser::PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| CoherenceError::Internal(format!("serialization failed: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// A line that failed to parse or validate.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Reads non-blank lines with their 1-based line numbers.
pub fn read_lines(reader: impl BufRead) -> io::Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn parse_line<T: DeserializeOwned>(line_no: usize, text: &str) -> std::result::Result<T, LineError> {
    serde_json::from_str(text).map_err(|e| LineError {
        line: line_no,
        message: format!("malformed record: {e}"),
    })
}

/// Parses a whole JSONL document, collecting every bad line.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> io::Result<(Vec<(usize, T)>, Vec<LineError>)> {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (n, line) in read_lines(reader)? {
        match parse_line(n, &line) {
            Ok(v) => ok.push((n, v)),
            Err(e) => bad.push(e),
        }
    }
    Ok((ok, bad))
}

/// Relation given as `kind` plus optional `m` for fixed-arity kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRef {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

impl RelationRef {
    pub fn resolve(&self) -> Result<Relation> {
        let kind = RelationKind::from_tag(&self.kind)
            .ok_or_else(|| CoherenceError::InvalidArgument(format!("unknown relation kind `{}`", self.kind)))?;
        let m = self
            .m
            .or(kind.fixed_arity())
            .ok_or_else(|| CoherenceError::InvalidArgument(format!("relation `{}` needs an explicit m", self.kind)))?;
        Relation::new(kind, m)
    }
}

impl From<&Relation> for RelationRef {
    fn from(r: &Relation) -> Self {
        Self {
            kind: r.kind().tag().into(),
            m: Some(r.arity()),
        }
    }
}

/// Input of `project`: one clique and a quote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRecord {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub relation: RelationRef,
    pub quote: Vec<f64>,
}

/// Output of `project`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectOutput {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
    pub method: String,
    pub projected: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub active_constraint: Option<String>,
}

/// Input of `certify`: a composition and its component quotes.
///
/// `local_relations[a]` gives component `a`'s clique relation, or `null`
/// for a free component; omitted means every component is free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub owners: Vec<usize>,
    pub locals: Vec<Vec<f64>>,
    #[serde(default)]
    pub coupling: Vec<CouplingInput>,
    #[serde(default)]
    pub local_relations: Option<Vec<Option<RelationRef>>>,
    /// Certify the raw composition without local repair.
    #[serde(default)]
    pub raw: bool,
}

/// Coupling constraint as written in input files; `id` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingInput {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub constraint: CouplingBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingBody {
    pub kind: crate::composition::CouplingKind,
    pub coords: Vec<usize>,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub a: Option<Vec<f64>>,
}

impl CompositionRecord {
    pub fn spec(&self) -> Result<CompositionSpec> {
        let k = self.locals.len();
        let ownership = OwnershipMap::from_owners(self.owners.clone(), k)?;
        let components = match &self.local_relations {
            Some(rels) => {
                if rels.len() != k {
                    return Err(CoherenceError::InvalidOwnership(format!(
                        "{} local relations for {k} components",
                        rels.len()
                    )));
                }
                rels.iter()
                    .enumerate()
                    .map(|(a, r)| match r {
                        Some(r) => Ok(LocalStructure::Clique(r.resolve()?)),
                        None => Ok(LocalStructure::Free {
                            dim: ownership.coords_of(a).len(),
                        }),
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => (0..k)
                .map(|a| LocalStructure::Free {
                    dim: ownership.coords_of(a).len(),
                })
                .collect(),
        };
        let coupling = CouplingSet::new(
            self.coupling
                .iter()
                .enumerate()
                .map(|(i, c)| CouplingConstraint {
                    id: c.id.clone().unwrap_or_else(|| format!("c{i}")),
                    kind: c.constraint.kind,
                    coords: c.constraint.coords.clone(),
                    b: c.constraint.b,
                    a: c.constraint.a.clone(),
                })
                .collect(),
        );
        CompositionSpec::new(components, ownership, coupling)
    }
}

/// Output of `certify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateOutput {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
    pub eps_star: f64,
    pub exposure_bound: f64,
    pub repaired: Vec<f64>,
    pub binding: Vec<String>,
    pub inputs_locally_coherent: bool,
    pub composed: Vec<f64>,
    /// Per-component share of the residual.
    pub attribution: Vec<f64>,
}

/// One step of a residual stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    #[serde(default)]
    pub t: Option<u64>,
    pub eps_sq: f64,
    pub m: u64,
    #[serde(rename = "K")]
    pub k: u64,
}

/// Input of `predict`: a panel of full-clique quotes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub relation: RelationRef,
    pub panel: Vec<Vec<f64>>,
}

/// Output of `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOutput {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
    pub predicted: f64,
    pub observed: f64,
    /// `observed / predicted`; null when the prediction is zero.
    pub ratio: Option<f64>,
    pub regime: String,
    pub kappa: f64,
    pub generic_bound: f64,
    pub std_error: f64,
    pub exhaustive: bool,
    pub n: u64,
}

/// Empirical CDF points `(x, F(x))` of a sample, one per distinct value.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = f,
            _ => out.push((*x, f)),
        }
    }
    out
}
