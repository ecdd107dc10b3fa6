//! Behaviour-specification files.
//!
//! A policy is a single JSON object with `do_read`, `do_write` and an ordered
//! `rules` list. Each rule carries one or more patterns and the transformation
//! applied to whatever they match. The schema is strict: unknown fields are
//! errors, and every error names the offending field by path
//! (`rules[1].transformation.e`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::domains;
use crate::matcher::{ByteSet, CompiledPattern};
use crate::transform::DomainTables;

/// Default bound on the length of any single match.
pub const DEFAULT_MAX_MATCH_BYTES: usize = 1024;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("malformed policy document: {0}")]
    Syntax(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("pattern error at {path} (rule {rule_index}, pattern {pattern_index}): {message}")]
    Pattern {
        path: String,
        rule_index: usize,
        pattern_index: usize,
        message: String,
    },
    #[error("unknown domain `{domain}` at {path}")]
    UnknownDomain { path: String, domain: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PolicyError {
    fn schema(path: &str, message: impl Into<String>) -> Self {
        PolicyError::Schema {
            path: path.to_string(),
            message: message.into(),
        }
    }

    /// The field path the error refers to, when there is one.
    pub fn path(&self) -> Option<&str> {
        match self {
            PolicyError::Schema { path, .. }
            | PolicyError::Pattern { path, .. }
            | PolicyError::UnknownDomain { path, .. } => Some(path),
            _ => None,
        }
    }
}

/// Parse-time knobs that are not part of the document itself.
#[derive(Debug, Clone)]
pub struct PolicyOptions {
    /// Upper bound on a single match; also the extent reported for unbounded
    /// regular expressions.
    pub max_match_bytes: usize,
    /// Directory that relative sidecar table paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        PolicyOptions {
            max_match_bytes: DEFAULT_MAX_MATCH_BYTES,
            base_dir: None,
        }
    }
}

/// The source of a pattern as written in the policy.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternSource {
    Regex(String),
    Dictionary {
        terms: Vec<String>,
        case_sensitive: bool,
        word_boundary: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Regex,
    Dictionary,
}

/// A compiled pattern.
#[derive(Clone)]
pub struct Pattern {
    source: PatternSource,
    pub(crate) compiled: CompiledPattern,
}

impl Pattern {
    pub fn kind(&self) -> PatternKind {
        match self.source {
            PatternSource::Regex(_) => PatternKind::Regex,
            PatternSource::Dictionary { .. } => PatternKind::Dictionary,
        }
    }

    pub fn source(&self) -> &PatternSource {
        &self.source
    }

    /// Longest match this pattern can produce.
    pub fn extent(&self) -> usize {
        self.compiled.limit()
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pattern")
            .field("source", &self.source)
            .field("extent", &self.extent())
            .finish()
    }
}

/// Where a mask or generalisation table comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TableSource {
    Builtin,
    InlineValues(Vec<String>),
    InlineMap(BTreeMap<String, String>),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpMechanism {
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Redact,
    Mask,
    Generalize,
    DiffPriv,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    Redact {
        ch: u8,
    },
    Mask {
        domain: String,
        values: TableSource,
    },
    Generalize {
        domain: String,
        hierarchy: TableSource,
    },
    DiffPriv {
        mechanism: DpMechanism,
        epsilon: f64,
        /// Accepted and validated, unused by the Laplace mechanism.
        delta: f64,
        clamp: Option<(f64, f64)>,
    },
}

impl TransformSpec {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformSpec::Redact { .. } => TransformKind::Redact,
            TransformSpec::Mask { .. } => TransformKind::Mask,
            TransformSpec::Generalize { .. } => TransformKind::Generalize,
            TransformSpec::DiffPriv { .. } => TransformKind::DiffPriv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub patterns: Vec<Pattern>,
    pub transformation: TransformSpec,
}

/// A validated, compiled policy. Immutable once built.
#[derive(Clone)]
pub struct PolicySpec {
    pub do_read: bool,
    pub do_write: bool,
    pub rules: Vec<Rule>,
    max_match_bytes: usize,
    alphabet: ByteSet,
    tables: Arc<DomainTables>,
}

impl PartialEq for PolicySpec {
    fn eq(&self, other: &Self) -> bool {
        self.do_read == other.do_read && self.do_write == other.do_write && self.rules == other.rules
    }
}

impl fmt::Debug for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicySpec")
            .field("do_read", &self.do_read)
            .field("do_write", &self.do_write)
            .field("rules", &self.rules)
            .field("max_match_bytes", &self.max_match_bytes)
            .finish()
    }
}

impl PolicySpec {
    /// The policy that protects nothing.
    pub fn empty() -> Self {
        PolicySpec {
            do_read: false,
            do_write: false,
            rules: Vec::new(),
            max_match_bytes: DEFAULT_MAX_MATCH_BYTES,
            alphabet: ByteSet::empty(),
            tables: Arc::new(DomainTables::default()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn max_match_bytes(&self) -> usize {
        self.max_match_bytes
    }

    /// Upper bound on the length of any match any pattern can produce.
    pub fn max_pattern_extent(&self) -> usize {
        self.rules
            .iter()
            .flat_map(|r| r.patterns.iter())
            .map(Pattern::extent)
            .max()
            .unwrap_or(0)
    }

    /// True when no pattern can ever include byte `b` in a match.
    #[inline]
    pub fn is_separator(&self, b: u8) -> bool {
        !self.alphabet.contains(b)
    }

    pub fn tables(&self) -> &Arc<DomainTables> {
        &self.tables
    }

    /// Serialise back to the document form. Sidecar paths are written as given.
    pub fn to_json(&self) -> Value {
        let rules: Vec<Value> = self
            .rules
            .iter()
            .map(|rule| {
                let patterns: Vec<Value> = rule.patterns.iter().map(pattern_to_json).collect();
                json!({
                    "patterns": patterns,
                    "transformation": transform_to_json(&rule.transformation),
                })
            })
            .collect();
        json!({
            "do_read": self.do_read,
            "do_write": self.do_write,
            "rules": rules,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.to_json()).expect("policy values always serialise")
    }
}

fn pattern_to_json(p: &Pattern) -> Value {
    match &p.source {
        PatternSource::Regex(s) => json!({"type": "re", "spec": s}),
        PatternSource::Dictionary {
            terms,
            case_sensitive,
            word_boundary,
        } => json!({
            "type": "dict",
            "spec": terms,
            "case_sensitive": case_sensitive,
            "word_boundary": word_boundary,
        }),
    }
}

fn table_to_json(t: &TableSource) -> Option<Value> {
    match t {
        TableSource::Builtin => None,
        TableSource::InlineValues(v) => Some(json!(v)),
        TableSource::InlineMap(m) => Some(json!(m)),
        TableSource::File(p) => Some(json!(p.to_string_lossy())),
    }
}

fn transform_to_json(t: &TransformSpec) -> Value {
    match t {
        TransformSpec::Redact { ch } => {
            json!({"type": "redact", "char": (*ch as char).to_string()})
        }
        TransformSpec::Mask { domain, values } => {
            let mut v = json!({"type": "mask", "domain": domain});
            if let Some(t) = table_to_json(values) {
                v["values"] = t;
            }
            v
        }
        TransformSpec::Generalize { domain, hierarchy } => {
            let mut v = json!({"type": "generalize", "domain": domain});
            if let Some(t) = table_to_json(hierarchy) {
                v["hierarchy"] = t;
            }
            v
        }
        TransformSpec::DiffPriv {
            mechanism: DpMechanism::Laplace,
            epsilon,
            delta,
            clamp,
        } => {
            let mut v = json!({"type": "diff_priv", "mechanism": "laplace", "e": epsilon, "d": delta});
            if let Some((lo, hi)) = clamp {
                v["clamp"] = json!([lo, hi]);
            }
            v
        }
    }
}

/// Parse a policy with default options.
pub fn parse_policy(bytes: &[u8]) -> Result<PolicySpec, PolicyError> {
    parse_policy_with(bytes, &PolicyOptions::default())
}

/// Read and parse a policy file; relative sidecar paths resolve against the
/// file's directory unless `opts.base_dir` is set.
pub fn load_policy(path: &Path, opts: &PolicyOptions) -> Result<PolicySpec, PolicyError> {
    let bytes = std::fs::read(path).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut opts = opts.clone();
    if opts.base_dir.is_none() {
        opts.base_dir = path.parent().map(Path::to_path_buf);
    }
    parse_policy_with(&bytes, &opts)
}

pub fn parse_policy_with(bytes: &[u8], opts: &PolicyOptions) -> Result<PolicySpec, PolicyError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| PolicyError::Syntax(format!("policy is not UTF-8: {e}")))?;
    let doc: Value = serde_json::from_str(text).map_err(|e| PolicyError::Syntax(e.to_string()))?;

    let root = Obj::new(&doc, "$")?;
    root.only(&["do_read", "do_write", "rules"])?;
    let do_read = root.req_bool("do_read")?;
    let do_write = root.req_bool("do_write")?;
    let rule_values = root.req_array("rules")?;

    let mut tables = DomainTables::default();
    let mut alphabet = ByteSet::empty();
    let mut rules = Vec::with_capacity(rule_values.len());
    for (ri, rv) in rule_values.iter().enumerate() {
        let rpath = format!("rules[{ri}]");
        let robj = Obj::new(rv, &rpath)?;
        robj.only(&["patterns", "transformation"])?;
        let pvals = robj.req_array("patterns")?;
        if pvals.is_empty() {
            return Err(PolicyError::schema(
                &format!("{rpath}.patterns"),
                "a rule needs at least one pattern",
            ));
        }
        let mut patterns = Vec::with_capacity(pvals.len());
        for (pi, pv) in pvals.iter().enumerate() {
            let ppath = format!("{rpath}.patterns[{pi}]");
            let (pattern, set) = parse_pattern(pv, &ppath, ri, pi, opts)?;
            alphabet.union_with(&set);
            patterns.push(pattern);
        }
        let tv = robj.req("transformation")?;
        let transformation =
            parse_transform(tv, &format!("{rpath}.transformation"), opts, &mut tables)?;
        rules.push(Rule {
            patterns,
            transformation,
        });
    }

    Ok(PolicySpec {
        do_read,
        do_write,
        rules,
        max_match_bytes: opts.max_match_bytes,
        alphabet,
        tables: Arc::new(tables),
    })
}

fn parse_pattern(
    v: &Value,
    path: &str,
    rule_index: usize,
    pattern_index: usize,
    opts: &PolicyOptions,
) -> Result<(Pattern, ByteSet), PolicyError> {
    let obj = Obj::new(v, path)?;
    let kind = obj.req_str("type")?;
    let pattern_err = |message: String| PolicyError::Pattern {
        path: format!("{path}.spec"),
        rule_index,
        pattern_index,
        message,
    };
    match kind {
        "re" => {
            obj.only(&["type", "spec"])?;
            let spec = obj.req_str("spec")?.to_string();
            let (compiled, set) =
                CompiledPattern::regex(&spec, opts.max_match_bytes).map_err(pattern_err)?;
            Ok((
                Pattern {
                    source: PatternSource::Regex(spec),
                    compiled,
                },
                set,
            ))
        }
        "dict" => {
            obj.only(&["type", "spec", "case_sensitive", "word_boundary"])?;
            let spec_path = format!("{path}.spec");
            let arr = obj.req_array("spec")?;
            if arr.is_empty() {
                return Err(PolicyError::schema(&spec_path, "dictionary needs at least one term"));
            }
            let mut terms = Vec::with_capacity(arr.len());
            for (i, t) in arr.iter().enumerate() {
                let s = t.as_str().ok_or_else(|| {
                    PolicyError::schema(&format!("{spec_path}[{i}]"), "expected a string")
                })?;
                if s.is_empty() {
                    return Err(PolicyError::schema(
                        &format!("{spec_path}[{i}]"),
                        "dictionary terms must be non-empty",
                    ));
                }
                terms.push(s.to_string());
            }
            let case_sensitive = obj.opt_bool("case_sensitive")?.unwrap_or(false);
            let word_boundary = obj.opt_bool("word_boundary")?.unwrap_or(true);
            let (compiled, set) = CompiledPattern::dictionary(
                &terms,
                case_sensitive,
                word_boundary,
                opts.max_match_bytes,
            )
            .map_err(pattern_err)?;
            Ok((
                Pattern {
                    source: PatternSource::Dictionary {
                        terms,
                        case_sensitive,
                        word_boundary,
                    },
                    compiled,
                },
                set,
            ))
        }
        other => Err(PolicyError::schema(
            &format!("{path}.type"),
            format!("unknown pattern type `{other}` (expected \"re\" or \"dict\")"),
        )),
    }
}

fn parse_transform(
    v: &Value,
    path: &str,
    opts: &PolicyOptions,
    tables: &mut DomainTables,
) -> Result<TransformSpec, PolicyError> {
    let obj = Obj::new(v, path)?;
    match obj.req_str("type")? {
        "redact" => {
            obj.only(&["type", "char"])?;
            let ch = match obj.opt_str("char")? {
                None => b'*',
                Some(s) if s.len() == 1 => s.as_bytes()[0],
                Some(_) => {
                    return Err(PolicyError::schema(
                        &format!("{path}.char"),
                        "redaction character must be a single byte",
                    ))
                }
            };
            Ok(TransformSpec::Redact { ch })
        }
        "mask" => {
            obj.only(&["type", "domain", "values"])?;
            let domain = obj.req_str("domain")?.to_string();
            let vpath = format!("{path}.values");
            let source = match obj.get("values") {
                None => TableSource::Builtin,
                Some(Value::String(p)) => TableSource::File(PathBuf::from(p)),
                Some(Value::Array(a)) => TableSource::InlineValues(string_list(a, &vpath)?),
                Some(_) => return Err(PolicyError::schema(&vpath, "expected an array or a path")),
            };
            let values = match &source {
                TableSource::Builtin => domains::builtin_values(&domain)
                    .map(|v| v.iter().map(|s| s.to_string()).collect::<Vec<_>>())
                    .ok_or_else(|| PolicyError::UnknownDomain {
                        path: format!("{path}.domain"),
                        domain: domain.clone(),
                    })?,
                TableSource::InlineValues(v) => v.clone(),
                TableSource::File(p) => {
                    let doc = read_sidecar(p, opts)?;
                    match doc {
                        Value::Array(a) => string_list(&a, &vpath)?,
                        _ => return Err(PolicyError::schema(&vpath, "sidecar must hold a JSON array")),
                    }
                }
                TableSource::InlineMap(_) => unreachable!(),
            };
            if values.is_empty() {
                return Err(PolicyError::UnknownDomain {
                    path: vpath,
                    domain,
                });
            }
            tables.insert_values(&domain, values);
            Ok(TransformSpec::Mask {
                domain,
                values: source,
            })
        }
        "generalize" => {
            obj.only(&["type", "domain", "hierarchy"])?;
            let hpath = format!("{path}.hierarchy");
            let source = match obj.get("hierarchy") {
                None => TableSource::Builtin,
                Some(Value::String(p)) => TableSource::File(PathBuf::from(p)),
                Some(Value::Object(m)) => TableSource::InlineMap(string_map(m, &hpath)?),
                Some(_) => return Err(PolicyError::schema(&hpath, "expected an object or a path")),
            };
            let domain = match (obj.opt_str("domain")?, &source) {
                (Some(d), _) => d.to_string(),
                (None, TableSource::Builtin) => {
                    return Err(PolicyError::schema(&hpath, "missing field `hierarchy`"))
                }
                (None, _) => format!("{path}.hierarchy"),
            };
            let map = match &source {
                TableSource::Builtin => domains::builtin_hierarchy(&domain).ok_or_else(|| {
                    PolicyError::UnknownDomain {
                        path: format!("{path}.domain"),
                        domain: domain.clone(),
                    }
                })?,
                TableSource::InlineMap(m) => m.clone(),
                TableSource::File(p) => match read_sidecar(p, opts)? {
                    Value::Object(m) => string_map(&m, &hpath)?,
                    _ => return Err(PolicyError::schema(&hpath, "sidecar must hold a JSON object")),
                },
                TableSource::InlineValues(_) => unreachable!(),
            };
            if map.is_empty() {
                return Err(PolicyError::schema(&hpath, "hierarchy must not be empty"));
            }
            tables.insert_hierarchy(&domain, map);
            Ok(TransformSpec::Generalize {
                domain,
                hierarchy: source,
            })
        }
        "diff_priv" => {
            obj.only(&["type", "mechanism", "e", "d", "clamp"])?;
            let mechanism = match obj.req_str("mechanism")? {
                "laplace" => DpMechanism::Laplace,
                other => {
                    return Err(PolicyError::schema(
                        &format!("{path}.mechanism"),
                        format!("unsupported mechanism `{other}`"),
                    ))
                }
            };
            let epsilon = obj.req_f64("e")?;
            if epsilon <= 0.0 {
                return Err(PolicyError::schema(&format!("{path}.e"), "epsilon must be > 0"));
            }
            let delta = obj.opt_f64("d")?.unwrap_or(0.0);
            if !(0.0..1.0).contains(&delta) {
                return Err(PolicyError::schema(&format!("{path}.d"), "delta must lie in [0, 1)"));
            }
            let clamp = match obj.get("clamp") {
                None => None,
                Some(Value::Array(a)) if a.len() == 2 => {
                    let cpath = format!("{path}.clamp");
                    let lo = a[0]
                        .as_f64()
                        .ok_or_else(|| PolicyError::schema(&cpath, "bounds must be numbers"))?;
                    let hi = a[1]
                        .as_f64()
                        .ok_or_else(|| PolicyError::schema(&cpath, "bounds must be numbers"))?;
                    if lo >= hi {
                        return Err(PolicyError::schema(&cpath, "clamp needs lo < hi"));
                    }
                    Some((lo, hi))
                }
                Some(_) => {
                    return Err(PolicyError::schema(
                        &format!("{path}.clamp"),
                        "expected [lo, hi]",
                    ))
                }
            };
            Ok(TransformSpec::DiffPriv {
                mechanism,
                epsilon,
                delta,
                clamp,
            })
        }
        other => Err(PolicyError::schema(
            &format!("{path}.type"),
            format!("unknown transformation `{other}`"),
        )),
    }
}

fn read_sidecar(p: &Path, opts: &PolicyOptions) -> Result<Value, PolicyError> {
    let full = match &opts.base_dir {
        Some(base) if p.is_relative() => base.join(p),
        _ => p.to_path_buf(),
    };
    let bytes = std::fs::read(&full).map_err(|source| PolicyError::Io {
        path: full.clone(),
        source,
    })?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PolicyError::Syntax(format!("{}: {e}", full.display())))
}

fn string_list(a: &[Value], path: &str) -> Result<Vec<String>, PolicyError> {
    a.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| PolicyError::schema(&format!("{path}[{i}]"), "expected a string"))
        })
        .collect()
}

fn string_map(m: &Map<String, Value>, path: &str) -> Result<BTreeMap<String, String>, PolicyError> {
    m.iter()
        .map(|(k, v)| {
            v.as_str()
                .map(|s| (k.clone(), s.to_string()))
                .ok_or_else(|| PolicyError::schema(&format!("{path}.{k}"), "expected a string"))
        })
        .collect()
}

/// A JSON object being validated, with its path for error messages.
struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: &'a str,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, path: &'a str) -> Result<Self, PolicyError> {
        match v {
            Value::Object(map) => Ok(Obj { map, path }),
            _ => Err(PolicyError::schema(path, "expected an object")),
        }
    }

    fn field(&self, name: &str) -> String {
        if self.path == "$" {
            name.to_string()
        } else {
            format!("{}.{name}", self.path)
        }
    }

    fn only(&self, allowed: &[&str]) -> Result<(), PolicyError> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(PolicyError::schema(&self.field(k), format!("unknown field `{k}`"))),
            None => Ok(()),
        }
    }

    fn get(&self, name: &str) -> Option<&'a Value> {
        self.map.get(name)
    }

    fn req(&self, name: &str) -> Result<&'a Value, PolicyError> {
        self.map
            .get(name)
            .ok_or_else(|| PolicyError::schema(&self.field(name), format!("missing field `{name}`")))
    }

    fn mistyped(&self, name: &str, want: &str) -> PolicyError {
        PolicyError::schema(&self.field(name), format!("expected {want}"))
    }

    fn req_bool(&self, name: &str) -> Result<bool, PolicyError> {
        self.req(name)?.as_bool().ok_or_else(|| self.mistyped(name, "a boolean"))
    }

    fn opt_bool(&self, name: &str) -> Result<Option<bool>, PolicyError> {
        self.get(name)
            .map(|v| v.as_bool().ok_or_else(|| self.mistyped(name, "a boolean")))
            .transpose()
    }

    fn req_str(&self, name: &str) -> Result<&'a str, PolicyError> {
        self.req(name)?.as_str().ok_or_else(|| self.mistyped(name, "a string"))
    }

    fn opt_str(&self, name: &str) -> Result<Option<&'a str>, PolicyError> {
        self.get(name)
            .map(|v| v.as_str().ok_or_else(|| self.mistyped(name, "a string")))
            .transpose()
    }

    fn req_f64(&self, name: &str) -> Result<f64, PolicyError> {
        self.req(name)?.as_f64().ok_or_else(|| self.mistyped(name, "a number"))
    }

    fn opt_f64(&self, name: &str) -> Result<Option<f64>, PolicyError> {
        self.get(name)
            .map(|v| v.as_f64().ok_or_else(|| self.mistyped(name, "a number")))
            .transpose()
    }

    fn req_array(&self, name: &str) -> Result<&'a Vec<Value>, PolicyError> {
        self.req(name)?.as_array().ok_or_else(|| self.mistyped(name, "an array"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference document: one redaction rule, one noise rule.
    pub(crate) const SAMPLE: &str = r#"{
        "do_read": true,
        "do_write": false,
        "rules": [{
            "patterns": [{
                "type": "re",
                "spec": "(:?\\w|\\.)+@(?:\\w|\\.)+\\.\\w{2,4}"
            }],
            "transformation": {
                "type": "redact"
            }}, {
            "patterns":[{
                "type":"re",
                "spec": "Account\\s+total:\\s+(-?\\d+\\.\\d{2})"
            }],
            "transformation": {
                "type": "diff_priv",
                "mechanism": "laplace",
                "e": 0.01,
                "d": 0.2
            }
        }]
    }"#;

    fn schema_path(err: PolicyError) -> String {
        match err {
            PolicyError::Schema { path, .. } => path,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn parses_sample_document() {
        let p = parse_policy(SAMPLE.as_bytes()).unwrap();
        assert!(p.do_read);
        assert!(!p.do_write);
        assert_eq!(p.rules.len(), 2);
        assert_eq!(p.rules[0].transformation, TransformSpec::Redact { ch: b'*' });
        assert_eq!(
            p.rules[1].transformation,
            TransformSpec::DiffPriv {
                mechanism: DpMechanism::Laplace,
                epsilon: 0.01,
                delta: 0.2,
                clamp: None
            }
        );
        assert_eq!(p.rules[0].patterns[0].kind(), PatternKind::Regex);
    }

    #[test]
    fn illegal_escape_is_a_syntax_error() {
        // `\.` is not a legal JSON escape.
        let verbatim = SAMPLE.replace(r"(-?\\d+\\.\\d{2})", r"(-?\\d+\.\\d{2})");
        assert!(matches!(
            parse_policy(verbatim.as_bytes()),
            Err(PolicyError::Syntax(_))
        ));
    }

    #[test]
    fn empty_policy() {
        let p = parse_policy(br#"{"do_read":false,"do_write":false,"rules":[]}"#).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.max_pattern_extent(), 0);
        assert!(!p.do_read && !p.do_write);
    }

    #[test]
    fn empty_pattern_list_is_rejected_with_path() {
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[],"transformation":{"type":"redact"}}]}"#;
        assert_eq!(schema_path(parse_policy(doc).unwrap_err()), "rules[0].patterns");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let doc = br#"{"do_read":true,"do_write":false,"rules":[],"do_raed":true}"#;
        assert_eq!(schema_path(parse_policy(doc).unwrap_err()), "do_raed");
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[{"type":"re","spec":"a","flags":"i"}],"transformation":{"type":"redact"}}]}"#;
        assert_eq!(
            schema_path(parse_policy(doc).unwrap_err()),
            "rules[0].patterns[0].flags"
        );
    }

    #[test]
    fn mistyped_field() {
        let doc = br#"{"do_read":"yes","do_write":false,"rules":[]}"#;
        assert_eq!(schema_path(parse_policy(doc).unwrap_err()), "do_read");
    }

    #[test]
    fn backtracking_constructs_fail_compilation() {
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[{"type":"re","spec":"ok"},{"type":"re","spec":"(a)\\1"}],
             "transformation":{"type":"redact"}}]}"#;
        match parse_policy(doc).unwrap_err() {
            PolicyError::Pattern {
                rule_index,
                pattern_index,
                ..
            } => assert_eq!((rule_index, pattern_index), (0, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn epsilon_must_be_positive() {
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[{"type":"re","spec":"\\d+"}],
             "transformation":{"type":"diff_priv","mechanism":"laplace","e":0}}]}"#;
        assert_eq!(
            schema_path(parse_policy(doc).unwrap_err()),
            "rules[0].transformation.e"
        );
    }

    #[test]
    fn mask_with_unknown_or_empty_domain() {
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[{"type":"re","spec":"x"}],
             "transformation":{"type":"mask","domain":"no-such-domain"}}]}"#;
        assert!(matches!(parse_policy(doc), Err(PolicyError::UnknownDomain { .. })));
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[{"type":"re","spec":"x"}],
             "transformation":{"type":"mask","domain":"codes","values":[]}}]}"#;
        assert!(matches!(parse_policy(doc), Err(PolicyError::UnknownDomain { .. })));
    }

    #[test]
    fn generalize_requires_hierarchy() {
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[{"type":"re","spec":"x"}],
             "transformation":{"type":"generalize","domain":"status","hierarchy":{}}}]}"#;
        assert_eq!(
            schema_path(parse_policy(doc).unwrap_err()),
            "rules[0].transformation.hierarchy"
        );
    }

    #[test]
    fn dictionary_extent_is_longest_term() {
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[{"type":"dict","spec":["abc","defgh"]}],
             "transformation":{"type":"redact"}}]}"#;
        assert_eq!(parse_policy(doc).unwrap().max_pattern_extent(), 5);
    }

    #[test]
    fn unbounded_regex_extent_is_the_cap() {
        let opts = PolicyOptions {
            max_match_bytes: 128,
            ..Default::default()
        };
        let p = parse_policy_with(SAMPLE.as_bytes(), &opts).unwrap();
        assert_eq!(p.max_pattern_extent(), 128);
        assert_eq!(parse_policy(SAMPLE.as_bytes()).unwrap().max_pattern_extent(), 1024);
    }

    #[test]
    fn bounded_regex_extent_is_exact() {
        let doc = br#"{"do_read":true,"do_write":false,"rules":[
            {"patterns":[{"type":"re","spec":"[A-Z]\\d{2}\\.\\d"}],
             "transformation":{"type":"redact"}}]}"#;
        assert_eq!(parse_policy(doc).unwrap().max_pattern_extent(), 5);
    }

    #[test]
    fn separators_follow_the_pattern_alphabet() {
        let p = parse_policy(SAMPLE.as_bytes()).unwrap();
        assert!(p.is_separator(b','));
        assert!(p.is_separator(b'"'));
        assert!(!p.is_separator(b'a'));
        assert!(!p.is_separator(b' '), "\\s appears in the second rule");
    }

    #[test]
    fn sidecar_tables_resolve_relative_to_policy() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("status.json"), r#"{"Single":"Not Married"}"#).unwrap();
        std::fs::write(dir.path().join("codes.json"), r#"["X01.1","X02.2"]"#).unwrap();
        let policy = dir.path().join("policy.json");
        std::fs::write(
            &policy,
            r#"{"do_read":true,"do_write":true,"rules":[
                {"patterns":[{"type":"dict","spec":["Single"]}],
                 "transformation":{"type":"generalize","domain":"status","hierarchy":"status.json"}},
                {"patterns":[{"type":"re","spec":"[A-Z]\\d\\d\\.\\d"}],
                 "transformation":{"type":"mask","domain":"codes","values":"codes.json"}}]}"#,
        )
        .unwrap();
        let p = load_policy(&policy, &PolicyOptions::default()).unwrap();
        assert_eq!(p.tables().values("codes").unwrap().len(), 2);
        assert_eq!(
            p.tables().hierarchy("status").unwrap().get("Single").map(String::as_str),
            Some("Not Married")
        );
    }
}
