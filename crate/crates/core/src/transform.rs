//! Span rewriting. Every output is fitted to the length of its input so file
//! sizes and offsets never change.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matcher::MatchSpan;
use crate::policy::{PolicySpec, TransformSpec};

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("span is not a decimal number")]
    NotNumeric,
}

/// Resolved mask and generalisation tables, keyed by domain id.
#[derive(Debug, Default)]
pub struct DomainTables {
    values: HashMap<String, Vec<String>>,
    hierarchies: HashMap<String, BTreeMap<String, String>>,
}

impl DomainTables {
    pub fn insert_values(&mut self, domain: &str, values: Vec<String>) {
        self.values.insert(domain.to_string(), values);
    }

    pub fn insert_hierarchy(&mut self, domain: &str, map: BTreeMap<String, String>) {
        self.hierarchies.insert(domain.to_string(), map);
    }

    pub fn values(&self, domain: &str) -> Option<&[String]> {
        self.values.get(domain).map(Vec::as_slice)
    }

    pub fn hierarchy(&self, domain: &str) -> Option<&BTreeMap<String, String>> {
        self.hierarchies.get(domain)
    }
}

/// Per-handle transformation state.
#[derive(Debug, Clone)]
pub struct TransformContext {
    pub rng_seed: u64,
    pub tables: Arc<DomainTables>,
}

impl TransformContext {
    pub fn new(rng_seed: u64, policy: &PolicySpec) -> Self {
        TransformContext {
            rng_seed,
            tables: Arc::clone(policy.tables()),
        }
    }
}

/// Truncate or right-pad with spaces to exactly `len` bytes.
pub fn fit(mut value: Vec<u8>, len: usize) -> Vec<u8> {
    value.resize(len, b' ');
    value
}

pub fn redact(span: &[u8], ch: u8) -> Vec<u8> {
    vec![ch; span.len()]
}

fn digest(seed: u64, data: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(data);
    h.finalize().into()
}

pub fn mask(span: &[u8], domain: &str, ctx: &TransformContext) -> Result<Vec<u8>, TransformError> {
    let table = ctx
        .tables
        .values(domain)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| TransformError::UnknownDomain(domain.to_string()))?;
    let d = digest(ctx.rng_seed, span);
    let idx = u64::from_le_bytes(d[..8].try_into().unwrap()) % table.len() as u64;
    Ok(fit(table[idx as usize].as_bytes().to_vec(), span.len()))
}

pub fn generalize(
    span: &[u8],
    domain: &str,
    ctx: &TransformContext,
) -> Result<Vec<u8>, TransformError> {
    let map = ctx
        .tables
        .hierarchy(domain)
        .ok_or_else(|| TransformError::UnknownDomain(domain.to_string()))?;
    let parent = std::str::from_utf8(span).ok().and_then(|text| {
        map.get(text).or_else(|| {
            map.iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(text))
                .map(|(_, v)| v)
        })
    });
    Ok(match parent {
        Some(v) => fit(v.as_bytes().to_vec(), span.len()),
        None => redact(span, b'*'),
    })
}

/// A parsed decimal literal: value and number of fraction digits.
fn parse_decimal(span: &[u8]) -> Option<(f64, usize)> {
    let text = std::str::from_utf8(span).ok()?;
    let body = text.strip_prefix(['-', '+']).unwrap_or(text);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    Some((text.parse().ok()?, frac.map_or(0, str::len)))
}

/// Draw from Laplace(0, scale) by inverting the CDF.
pub fn laplace_sample<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            return -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

/// Noise for the value at absolute file `offset` under a handle seed.
pub fn noise_at(seed: u64, offset: u64, scale: f64) -> f64 {
    let mut rng = ChaCha20Rng::from_seed(digest(seed, &offset.to_le_bytes()));
    laplace_sample(&mut rng, scale)
}

/// Render `v` with `decimals` fraction digits in exactly `width` bytes,
/// saturating at the widest representable value when it does not fit.
fn render_fitted(v: f64, decimals: usize, width: usize) -> Vec<u8> {
    let mut s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s.remove(0);
    }
    if s.len() > width {
        let negative = v < 0.0;
        let sign = usize::from(negative);
        let point = usize::from(decimals > 0);
        let int_digits = width.saturating_sub(sign + point + decimals);
        s = if int_digits == 0 {
            // Cannot represent any value with this sign; the input's own
            // width always fits zero.
            format!("{:.decimals$}", 0.0)
        } else {
            let mut t = String::with_capacity(width);
            if negative {
                t.push('-');
            }
            t.extend(std::iter::repeat('9').take(int_digits));
            if decimals > 0 {
                t.push('.');
                t.extend(std::iter::repeat('9').take(decimals));
            }
            t
        };
    }
    fit(s.into_bytes(), width)
}

/// Laplace noise on a decimal span. `offset` is the span's absolute position,
/// which together with the handle seed fixes the draw.
pub fn dp_noise(
    span: &[u8],
    spec: &TransformSpec,
    ctx: &TransformContext,
    offset: u64,
) -> Result<Vec<u8>, TransformError> {
    let TransformSpec::DiffPriv { epsilon, clamp, .. } = spec else {
        return Ok(span.to_vec());
    };
    let (mut x, decimals) = parse_decimal(span).ok_or(TransformError::NotNumeric)?;
    let sensitivity = match clamp {
        Some((lo, hi)) => {
            x = x.clamp(*lo, *hi);
            hi - lo
        }
        None => 1.0,
    };
    let noisy = x + noise_at(ctx.rng_seed, offset, sensitivity / epsilon);
    Ok(render_fitted(noisy, decimals, span.len()))
}

/// Transform one span of `buf` (offsets relative to `buf`, which starts at
/// absolute `base`). Output replaces `buf[span.start..span.end]`.
fn transform_span(
    buf: &[u8],
    span: &MatchSpan,
    spec: &TransformSpec,
    ctx: &TransformContext,
    base: u64,
) -> Result<Vec<u8>, TransformError> {
    let bytes = &buf[span.start..span.end];
    match spec {
        TransformSpec::Redact { ch } => Ok(redact(bytes, *ch)),
        TransformSpec::Mask { domain, .. } => mask(bytes, domain, ctx),
        TransformSpec::Generalize { domain, .. } => generalize(bytes, domain, ctx),
        TransformSpec::DiffPriv { .. } => {
            let (a, b) = span.capture.unwrap_or((span.start, span.end));
            let noised = dp_noise(&buf[a..b], spec, ctx, base + a as u64)?;
            let mut out = bytes.to_vec();
            out[a - span.start..b - span.start].copy_from_slice(&noised);
            Ok(out)
        }
    }
}

/// Apply every span's transformation in place. `base` is the absolute offset
/// of `buf[0]`; positional transforms key off it.
pub fn apply_in_place(
    buf: &mut [u8],
    base: u64,
    spans: &[MatchSpan],
    policy: &PolicySpec,
    ctx: &TransformContext,
) {
    for span in spans {
        let spec = &policy.rules[span.rule_index].transformation;
        match transform_span(buf, span, spec, ctx, base) {
            Ok(out) => buf[span.start..span.end].copy_from_slice(&out),
            Err(e) => log::warn!(
                "rule {} left span at {} unmodified: {e}",
                span.rule_index,
                base + span.start as u64
            ),
        }
    }
}

pub fn apply(
    buffer: &[u8],
    spans: &[MatchSpan],
    policy: &PolicySpec,
    ctx: &TransformContext,
) -> Vec<u8> {
    let mut out = buffer.to_vec();
    apply_in_place(&mut out, 0, spans, policy, ctx);
    out
}
