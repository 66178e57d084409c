//! Function-family specifications: JSON documents, the CLI one-liner
//! grammar, and seeded random oracle families.
//!
//! The grammar parser is pure (no file access); `@file` matrix references
//! are resolved in a separate step so untrusted strings can be parsed
//! safely.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::{
    ConvexPotentialPower, FunctionModel, GaussExpFunction, HalfSpaceIndicator, LogCurvature,
    RadialQuartic,
};

/// Which sign pattern a random family draws its exponent curvature from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomCurvature {
    LogConcave,
    LogConvex,
    Affine,
}

/// A function family as specified in plans and on the command line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    /// `f(x) = exp(-x'Ax/2 + <a,x> + c)`.
    GaussExp {
        k: usize,
        #[serde(rename = "A")]
        curvature: Vec<Vec<f64>>,
        a: Vec<f64>,
        c: f64,
    },
    /// A named catalog family with free-form parameters.
    Builtin {
        name: String,
        #[serde(default)]
        params: serde_json::Map<String, serde_json::Value>,
    },
    /// `count` seeded random oracle functions, expanded at instantiation.
    RandomGaussExp {
        count: usize,
        seed: u64,
        curvature: RandomCurvature,
        #[serde(default = "default_k_max")]
        k_max: usize,
        /// Eigenvalue range of the curvature matrix; defaults to
        /// `[0, 3]` for log-concave and `[-0.3, 0]` for log-convex
        /// (the latter keeps moments up to order 3 integrable).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eig_range: Option<[f64; 2]>,
        /// How many of `count` get a zero curvature matrix (the
        /// equality family).
        #[serde(default)]
        zero_curvature: usize,
        #[serde(default = "default_tilt_max")]
        tilt_max: f64,
        #[serde(default = "default_offset_max")]
        offset_max: f64,
    },
}

fn default_k_max() -> usize {
    3
}

fn default_tilt_max() -> f64 {
    2.0
}

fn default_offset_max() -> f64 {
    1.0
}

/// A catalog entry: a spec plus an optional stable id and an optional
/// claimed curvature override (used by deliberately mismatched probes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    #[serde(flatten)]
    pub spec: FunctionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<LogCurvature>,
}

/// An instantiated function ready for checking.
#[derive(Debug, Clone)]
pub struct CatalogFunction {
    pub id: String,
    pub model: FunctionModel,
    /// The curvature the checks should assume; `None` leaves the choice
    /// to the function's own certificate.
    pub claim: Option<LogCurvature>,
}

impl CatalogFunction {
    /// The claim to check under: an explicit override wins, otherwise
    /// the certified class speaks for itself.
    pub fn effective_claim(&self) -> Option<LogCurvature> {
        self.claim.or_else(|| self.model.exponent_class().natural_claim())
    }
}

impl CatalogEntry {
    pub fn instantiate(&self, index: usize) -> Result<Vec<CatalogFunction>> {
        let base_id = self
            .id
            .clone()
            .unwrap_or_else(|| format!("fn{index}"));
        let mut out = Vec::new();
        match &self.spec {
            FunctionSpec::GaussExp { k, curvature, a, c } => {
                out.push(CatalogFunction {
                    id: base_id,
                    model: FunctionModel::GaussExp(build_gauss_exp(*k, curvature, a, *c)?),
                    claim: self.claim,
                });
            }
            FunctionSpec::Builtin { name, params } => {
                out.push(CatalogFunction {
                    id: base_id,
                    model: build_builtin(name, params)?,
                    claim: self.claim,
                });
            }
            FunctionSpec::RandomGaussExp {
                count,
                seed,
                curvature,
                k_max,
                eig_range,
                zero_curvature,
                tilt_max,
                offset_max,
            } => {
                if *count > 10_000 {
                    return Err(Error::InvalidParameter(format!(
                        "random family of {count} functions exceeds the 10000 cap"
                    )));
                }
                if *k_max < 1 {
                    return Err(Error::InvalidParameter("k_max must be >= 1".into()));
                }
                let range = eig_range.unwrap_or(match curvature {
                    RandomCurvature::LogConcave => [0.0, 3.0],
                    RandomCurvature::LogConvex => [-0.3, 0.0],
                    RandomCurvature::Affine => [0.0, 0.0],
                });
                if !(range[0] <= range[1]) {
                    return Err(Error::InvalidParameter(
                        "eigenvalue range must be ordered".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for i in 0..*count {
                    let affine =
                        i < *zero_curvature || matches!(curvature, RandomCurvature::Affine);
                    let f = random_gauss_exp(
                        &mut rng,
                        *k_max,
                        if affine { None } else { Some(range) },
                        *tilt_max,
                        *offset_max,
                    )?;
                    let claim = self.claim.or(match curvature {
                        RandomCurvature::LogConcave | RandomCurvature::Affine => {
                            Some(LogCurvature::LogConcave)
                        }
                        RandomCurvature::LogConvex => Some(LogCurvature::LogConvex),
                    });
                    out.push(CatalogFunction {
                        id: format!("{base_id}.{i}"),
                        model: FunctionModel::GaussExp(f),
                        claim,
                    });
                }
            }
        }
        Ok(out)
    }
}

fn build_gauss_exp(
    k: usize,
    curvature: &[Vec<f64>],
    a: &[f64],
    c: f64,
) -> Result<GaussExpFunction> {
    if curvature.len() != k || curvature.iter().any(|row| row.len() != k) {
        return Err(Error::Parse(format!(
            "curvature matrix must be {k}x{k}"
        )));
    }
    if a.len() != k {
        return Err(Error::Parse(format!("tilt vector must have length {k}")));
    }
    let mat = DMatrix::from_fn(k, k, |i, j| curvature[i][j]);
    GaussExpFunction::new(mat, DVector::from_vec(a.to_vec()), c)
}

fn param_f64(
    params: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    default: f64,
) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Error::Parse(format!("parameter {key} must be a number"))),
    }
}

fn param_usize(
    params: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    default: usize,
) -> Result<usize> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .map(|u| u as usize)
            .ok_or_else(|| Error::Parse(format!("parameter {key} must be a nonnegative integer"))),
    }
}

fn build_builtin(
    name: &str,
    params: &serde_json::Map<String, serde_json::Value>,
) -> Result<FunctionModel> {
    match name {
        "half_space_indicator" => {
            let k = param_usize(params, "k", 1)?;
            let offset = param_f64(params, "offset", 0.5)?;
            let normal = match params.get("normal") {
                None => {
                    let mut n = DVector::zeros(k);
                    if k > 0 {
                        n[0] = 1.0;
                    }
                    n
                }
                Some(v) => {
                    let vals: Vec<f64> = v
                        .as_array()
                        .ok_or_else(|| Error::Parse("normal must be an array".into()))?
                        .iter()
                        .map(|x| {
                            x.as_f64()
                                .ok_or_else(|| Error::Parse("normal entries must be numbers".into()))
                        })
                        .collect::<Result<_>>()?;
                    if vals.len() != k {
                        return Err(Error::Parse(format!("normal must have length {k}")));
                    }
                    DVector::from_vec(vals)
                }
            };
            Ok(FunctionModel::HalfSpace(HalfSpaceIndicator::new(
                normal, offset,
            )?))
        }
        "convex_potential_power" => {
            let k = param_usize(params, "k", 1)?;
            let beta = param_f64(params, "beta", 3.0)?;
            Ok(FunctionModel::PowerPotential(ConvexPotentialPower::new(
                k, beta,
            )?))
        }
        "radial_quartic" => {
            let k = param_usize(params, "k", 1)?;
            Ok(FunctionModel::RadialQuartic(RadialQuartic::new(k)?))
        }
        other => Err(Error::Parse(format!("unknown builtin function {other:?}"))),
    }
}

/// Draws one random oracle function: curvature eigenvalues uniform in
/// the range conjugated by a random orthogonal basis, tilt uniform in
/// the ball, offset uniform.
fn random_gauss_exp(
    rng: &mut ChaCha8Rng,
    k_max: usize,
    eig_range: Option<[f64; 2]>,
    tilt_max: f64,
    offset_max: f64,
) -> Result<GaussExpFunction> {
    let k = rng.gen_range(1..=k_max);
    let curvature = match eig_range {
        None => DMatrix::zeros(k, k),
        Some([lo, hi]) => {
            let eig = DVector::from_fn(k, |_, _| rng.gen_range(lo..=hi));
            let q = random_orthogonal(rng, k);
            let raw = &q * DMatrix::from_diagonal(&eig) * q.transpose();
            (&raw + raw.transpose()) * 0.5
        }
    };
    let mut direction = DVector::from_fn(k, |_, _| standard_normal(rng));
    let norm = direction.norm();
    if norm > 1e-12 {
        direction /= norm;
    }
    let tilt = direction * rng.gen_range(0.0..=tilt_max);
    let offset = rng.gen_range(-offset_max..=offset_max);
    GaussExpFunction::new(curvature, tilt, offset)
}

fn random_orthogonal(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(k, k, |_, _| standard_normal(rng));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix the sign ambiguity so the draw is well defined
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for i in 0..k {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

/// Intermediate result of the one-liner grammar, before any file access.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedFunction {
    GaussExp {
        curvature: MatrixSource,
        tilt: Vec<f64>,
        offset: f64,
    },
    Builtin {
        name: String,
        params: Vec<(String, f64)>,
    },
}

/// Where the curvature matrix of a grammar spec comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSource {
    /// `A=0.5`: a multiple of the identity in the inferred dimension.
    Scalar(f64),
    /// `A=diag(1,2,3)`.
    Diagonal(Vec<f64>),
    /// `A=@path.json`: a row-major matrix in a JSON file.
    File(String),
}

/// Parses the one-liner function grammar:
///
/// ```text
/// gauss:A=<scalar|diag(l1,l2,..)|@matrix.json>,a=<scalar|(l1,l2,..)>,c=<scalar>
/// builtin:<name>[,key=value]...
/// ```
///
/// Pure string processing; `@file` references are resolved later by
/// [`resolve_parsed_function`].
pub fn parse_function_grammar(input: &str) -> Result<ParsedFunction> {
    let (head, rest) = input
        .split_once(':')
        .ok_or_else(|| Error::Parse("expected 'gauss:...' or 'builtin:...'".into()))?;
    match head {
        "gauss" => parse_gauss_grammar(rest),
        "builtin" => parse_builtin_grammar(rest),
        other => Err(Error::Parse(format!(
            "unknown function kind {other:?}; expected gauss or builtin"
        ))),
    }
}

/// Splits on commas that are not inside parentheses.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn parse_scalar(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("expected a number, got {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("non-finite number {s:?}")));
    }
    Ok(v)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| Error::Parse(format!("expected a parenthesized list, got {s:?}")))?;
    if inner.trim().is_empty() {
        return Err(Error::Parse("empty list".into()));
    }
    inner.split(',').map(parse_scalar).collect()
}

fn parse_gauss_grammar(rest: &str) -> Result<ParsedFunction> {
    let mut curvature = None;
    let mut tilt = None;
    let mut offset = None;
    for part in split_top_level(rest) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got {part:?}")))?;
        match key.trim() {
            "A" => {
                let value = value.trim();
                curvature = Some(if let Some(path) = value.strip_prefix('@') {
                    if path.is_empty() {
                        return Err(Error::Parse("empty matrix file path".into()));
                    }
                    MatrixSource::File(path.to_string())
                } else if let Some(diag) = value.strip_prefix("diag") {
                    MatrixSource::Diagonal(parse_list(diag)?)
                } else {
                    MatrixSource::Scalar(parse_scalar(value)?)
                });
            }
            "a" => {
                let value = value.trim();
                tilt = Some(if value.starts_with('(') {
                    parse_list(value)?
                } else {
                    vec![parse_scalar(value)?]
                });
            }
            "c" => offset = Some(parse_scalar(value)?),
            other => {
                return Err(Error::Parse(format!(
                    "unknown gauss parameter {other:?}; expected A, a, c"
                )))
            }
        }
    }
    Ok(ParsedFunction::GaussExp {
        curvature: curvature.ok_or_else(|| Error::Parse("missing A=".into()))?,
        tilt: tilt.unwrap_or_else(|| vec![0.0]),
        offset: offset.unwrap_or(0.0),
    })
}

fn parse_builtin_grammar(rest: &str) -> Result<ParsedFunction> {
    let mut parts = split_top_level(rest).into_iter();
    let name = parts
        .next()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Parse("missing builtin name".into()))?;
    let mut params = Vec::new();
    for part in parts {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got {part:?}")))?;
        params.push((key.trim().to_string(), parse_scalar(value)?));
    }
    Ok(ParsedFunction::Builtin {
        name: name.to_string(),
        params,
    })
}

/// Resolves a parsed grammar spec into a [`FunctionSpec`], reading any
/// `@file` matrix reference from disk.
pub fn resolve_parsed_function(parsed: &ParsedFunction) -> Result<FunctionSpec> {
    match parsed {
        ParsedFunction::GaussExp {
            curvature,
            tilt,
            offset,
        } => {
            let (k, matrix) = match curvature {
                MatrixSource::Scalar(s) => {
                    let k = tilt.len();
                    let mut m = vec![vec![0.0; k]; k];
                    for (i, row) in m.iter_mut().enumerate() {
                        row[i] = *s;
                    }
                    (k, m)
                }
                MatrixSource::Diagonal(diag) => {
                    let k = diag.len();
                    let mut m = vec![vec![0.0; k]; k];
                    for (i, row) in m.iter_mut().enumerate() {
                        row[i] = diag[i];
                    }
                    (k, m)
                }
                MatrixSource::File(path) => {
                    let text = std::fs::read_to_string(path)?;
                    let m: Vec<Vec<f64>> = serde_json::from_str(&text)?;
                    (m.len(), m)
                }
            };
            let tilt = if tilt.len() == k {
                tilt.clone()
            } else if tilt.len() == 1 {
                vec![tilt[0]; k]
            } else {
                return Err(Error::Parse(format!(
                    "tilt length {} does not match dimension {k}",
                    tilt.len()
                )));
            };
            Ok(FunctionSpec::GaussExp {
                k,
                curvature: matrix,
                a: tilt,
                c: *offset,
            })
        }
        ParsedFunction::Builtin { name, params } => {
            let mut map = serde_json::Map::new();
            for (key, value) in params {
                if key == "k" {
                    let as_int = *value as u64;
                    if as_int as f64 != *value {
                        return Err(Error::Parse("k must be an integer".into()));
                    }
                    map.insert(key.clone(), serde_json::json!(as_int));
                } else {
                    map.insert(key.clone(), serde_json::json!(value));
                }
            }
            Ok(FunctionSpec::Builtin {
                name: name.clone(),
                params: map,
            })
        }
    }
}

/// One-step convenience for trusted inputs: parse, resolve, instantiate.
pub fn function_from_grammar(input: &str) -> Result<CatalogFunction> {
    let spec = resolve_parsed_function(&parse_function_grammar(input)?)?;
    let entry = CatalogEntry {
        spec,
        id: Some(input.to_string()),
        claim: None,
    };
    let mut fns = entry.instantiate(0)?;
    Ok(fns.remove(0))
}
