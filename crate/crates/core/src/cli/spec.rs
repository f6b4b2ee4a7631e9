//! One-line source specs: `kind` or `kind:key=value,key=value`.
//!
//! List values use `/` as separator (`var=1/0.5/0.25`) so a spec never needs
//! shell quoting.
//!
//! | kind              | keys                                              |
//! |-------------------|---------------------------------------------------|
//! | `gaussian`        | `n`, `var`, `mean` (scalars broadcast)            |
//! | `std-gaussian`    | `n`                                               |
//! | `random-gaussian` | `n`, `draw` (seed of the random variances)        |
//! | `banana`          | `curvature`, `spread`                             |
//! | `banana-lift`     | `n`, `matrix-seed`, `curvature`, `spread`         |
//! | `bernoulli`       | `p` (Hamming distortion)                          |
//! | `discrete`        | `values`, `pmf`, `metric` (`squared`, `hamming`)  |
//! | `file`            | `path`, `dim`, `header` (`true`, `false`)         |

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::sources::{random_gaussian_source, DistortionMetric, Source, SourceError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecError {
    pub text: String,
    /// Byte offset of the offending token.
    pub pos: usize,
    pub message: String,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bad source spec at column {}: {}", self.pos + 1, self.message)?;
        writeln!(f, "  {}", self.text)?;
        write!(f, "  {}^", " ".repeat(self.pos))
    }
}

impl std::error::Error for SpecError {}

#[derive(Clone, Debug, PartialEq)]
struct Param {
    key: String,
    value: String,
    key_pos: usize,
    value_pos: usize,
}

/// A parsed spec; `text` is kept verbatim for manifests.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSpec {
    pub text: String,
    pub kind: String,
    params: Vec<Param>,
}

/// A built source plus the distortion it is measured in.
#[derive(Clone, Debug)]
pub struct BuiltSource {
    pub source: Source,
    pub metric: DistortionMetric,
}

const KINDS: &[(&str, &[&str])] = &[
    ("gaussian", &["n", "var", "mean"]),
    ("std-gaussian", &["n"]),
    ("random-gaussian", &["n", "draw"]),
    ("banana", &["curvature", "spread"]),
    ("banana-lift", &["n", "matrix-seed", "curvature", "spread"]),
    ("bernoulli", &["p"]),
    ("discrete", &["values", "pmf", "metric"]),
    ("file", &["path", "dim", "header"]),
];

impl FromStr for SourceSpec {
    type Err = SpecError;

    fn from_str(text: &str) -> Result<Self, SpecError> {
        let err = |pos: usize, message: String| SpecError {
            text: text.to_string(),
            pos,
            message,
        };
        let (kind, rest) = match text.find(':') {
            Some(i) => (&text[..i], Some(i + 1)),
            None => (text, None),
        };
        if kind.is_empty() {
            return Err(err(0, "missing source kind".into()));
        }
        if let Some(bad) = kind.find(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')) {
            return Err(err(bad, format!("unexpected character {:?} in source kind", &kind[bad..bad + 1])));
        }
        let Some(&(_, allowed)) = KINDS.iter().find(|(k, _)| *k == kind) else {
            let names: Vec<&str> = KINDS.iter().map(|(k, _)| *k).collect();
            return Err(err(0, format!("unknown source kind {kind:?}; expected one of {}", names.join(", "))));
        };
        let mut params: Vec<Param> = Vec::new();
        if let Some(start) = rest {
            if start == text.len() {
                return Err(err(start, "expected key=value after ':'".into()));
            }
            let mut pos = start;
            for item in text[start..].split(',') {
                let Some(eq) = item.find('=') else {
                    return Err(err(pos, format!("expected key=value, found {item:?}")));
                };
                let (key, value) = (&item[..eq], &item[eq + 1..]);
                if key.is_empty() {
                    return Err(err(pos, "empty key".into()));
                }
                if value.is_empty() {
                    return Err(err(pos + eq + 1, format!("empty value for {key:?}")));
                }
                if !allowed.contains(&key) {
                    return Err(err(
                        pos,
                        format!("unknown key {key:?} for {kind}; expected one of {}", allowed.join(", ")),
                    ));
                }
                if params.iter().any(|p| p.key == key) {
                    return Err(err(pos, format!("duplicate key {key:?}")));
                }
                params.push(Param {
                    key: key.to_string(),
                    value: value.to_string(),
                    key_pos: pos,
                    value_pos: pos + eq + 1,
                });
                pos += item.len() + 1;
            }
        }
        Ok(Self {
            text: text.to_string(),
            kind: kind.to_string(),
            params,
        })
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl SourceSpec {
    fn err(&self, pos: usize, message: impl Into<String>) -> SpecError {
        SpecError {
            text: self.text.clone(),
            pos,
            message: message.into(),
        }
    }

    fn param(&self, key: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.key == key)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, SpecError> {
        self.param(key)
            .map(|p| {
                p.value
                    .parse()
                    .map_err(|_| self.err(p.value_pos, format!("cannot parse {:?} for {key:?}", p.value)))
            })
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, SpecError> {
        let Some(p) = self.param(key) else {
            return Ok(None);
        };
        let mut pos = p.value_pos;
        let mut out = Vec::new();
        for item in p.value.split('/') {
            out.push(
                item.parse()
                    .map_err(|_| self.err(pos, format!("cannot parse {item:?} as a number in {key:?}")))?,
            );
            pos += item.len() + 1;
        }
        Ok(Some(out))
    }

    /// Position of `key`'s value, or of the kind when absent.
    fn pos_of(&self, key: &str) -> usize {
        self.param(key).map_or(0, |p| p.value_pos)
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T, SpecError> {
        self.get(key)?
            .ok_or_else(|| self.err(self.text.len(), format!("{} needs {key}=...", self.kind)))
    }

    /// Builds the source with sampling seed `seed`.
    pub fn build(&self, seed: u64) -> Result<BuiltSource, SpecError> {
        let wrap = |key: &str| {
            let pos = self.pos_of(key);
            move |e: SourceError| self.err(pos, e.to_string())
        };
        let squared = DistortionMetric::SquaredError;
        let built = |source: Source, metric| BuiltSource { source, metric };
        match self.kind.as_str() {
            "gaussian" => {
                let var = self.list("var")?;
                let mean = self.list("mean")?;
                let listed = [&var, &mean].iter().filter_map(|l| l.as_ref().map(Vec::len)).find(|&l| l > 1);
                let n = match (self.get::<usize>("n")?, listed) {
                    (Some(n), Some(l)) if n != l => {
                        return Err(self.err(self.pos_of("n"), format!("n={n} but a list has {l} entries")))
                    }
                    (Some(n), _) => n,
                    (None, Some(l)) => l,
                    (None, None) => 1,
                };
                let expand = |key: &str, v: Option<Vec<f64>>, default: f64| match v {
                    None => Ok(vec![default; n]),
                    Some(v) if v.len() == 1 => Ok(vec![v[0]; n]),
                    Some(v) if v.len() == n => Ok(v),
                    Some(v) => Err(self.err(self.pos_of(key), format!("{key} has {} entries, expected {n}", v.len()))),
                };
                let (variances, means) = (expand("var", var, 1.0)?, expand("mean", mean, 0.0)?);
                Source::diagonal_gaussian(means, variances, seed)
                    .map(|s| built(s, squared))
                    .map_err(wrap("var"))
            }
            "std-gaussian" => Source::standard_gaussian(self.get("n")?.unwrap_or(1), seed)
                .map(|s| built(s, squared))
                .map_err(wrap("n")),
            "random-gaussian" => {
                let draw: u64 = self.get("draw")?.unwrap_or(0);
                random_gaussian_source(self.required("n")?, draw)
                    .map(|s| built(s.with_seed(seed), squared))
                    .map_err(wrap("n"))
            }
            "banana" | "banana-lift" => {
                let curvature = self.get("curvature")?.unwrap_or(0.5);
                let spread = self.get("spread")?.unwrap_or(2.0);
                let inner = Source::banana(curvature, spread, seed).map_err(wrap("curvature"))?;
                if self.kind == "banana" {
                    return Ok(built(inner, squared));
                }
                let n: usize = self.required("n")?;
                Source::glorot_lift(inner, n, self.get("matrix-seed")?.unwrap_or(0))
                    .map(|s| built(s, squared))
                    .map_err(wrap("n"))
            }
            "bernoulli" => {
                let p: f64 = self.required("p")?;
                Source::discrete(vec![vec![0.0], vec![1.0]], vec![1.0 - p, p], seed)
                    .map(|s| built(s, DistortionMetric::Hamming))
                    .map_err(wrap("p"))
            }
            "discrete" => {
                let values = self
                    .list("values")?
                    .ok_or_else(|| self.err(self.text.len(), "discrete needs values=..."))?;
                let pmf = self.list("pmf")?.ok_or_else(|| self.err(self.text.len(), "discrete needs pmf=..."))?;
                let metric = match self.param("metric").map(|p| p.value.as_str()) {
                    None | Some("squared") => squared,
                    Some("hamming") => DistortionMetric::Hamming,
                    Some(other) => {
                        return Err(self.err(self.pos_of("metric"), format!("unknown metric {other:?}; expected squared or hamming")))
                    }
                };
                Source::discrete(values.into_iter().map(|v| vec![v]).collect(), pmf, seed)
                    .map(|s| built(s, metric))
                    .map_err(wrap("pmf"))
            }
            "file" => {
                let path: PathBuf = self.required::<String>("path")?.into();
                let header = self.get("header")?.unwrap_or(false);
                let dim = match self.get::<usize>("dim")? {
                    Some(d) => d,
                    None => crate::sources::read_any(&path, header).map_err(wrap("path"))?.0,
                };
                Source::from_file(&path, dim, header)
                    .map(|s| built(s.with_seed(seed), squared))
                    .map_err(wrap("path"))
            }
            _ => unreachable!("kind checked at parse time"),
        }
    }
}
