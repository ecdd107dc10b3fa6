//! Synthetic CSV datasets with controlled match probabilities.
//!
//! Rows look like `124,"G30.1","$683.91","Lorem ipsum dolor. FrequentKeyword. Magna aliqua."`:
//! an id, an ICD-10 code (or empty), a dollar amount, and a free-text message
//! that may carry keywords and an email address.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::domains;
use crate::matcher::scan;
use crate::policy::{parse_policy, PolicySpec};

/// Regex that recognises the generated ICD-10 codes.
pub const ICD_REGEX: &str = r"\b[A-Z]\d{2}\.\d\b";
/// Regex that recognises the generated email addresses (hyphenated domains
/// included).
pub const EMAIL_REGEX: &str = r"(?:\w|\.)+@(?:\w|\.|-)+\.\w{2,4}";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub rows: usize,
    pub seed: u64,
    pub p_icd: f64,
    pub p_kw1: f64,
    pub p_kw2: f64,
    pub p_email: f64,
    /// Inclusive dollar range; amounts have two decimals.
    pub amount_range: (f64, f64),
    pub kw1: String,
    pub kw2: String,
    pub header: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            rows: 20_000,
            seed: 0,
            p_icd: 0.05,
            p_kw1: 0.01,
            p_kw2: 0.1,
            p_email: 0.05,
            amount_range: (1.0, 1000.0),
            kw1: "RareKeyword".into(),
            kw2: "FrequentKeyword".into(),
            header: true,
        }
    }
}

impl DatasetSpec {
    pub fn with_rows(rows: usize, seed: u64) -> Self {
        DatasetSpec {
            rows,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("p_icd", self.p_icd),
            ("p_kw1", self.p_kw1),
            ("p_kw2", self.p_kw2),
            ("p_email", self.p_email),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let (lo, hi) = self.amount_range;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(format!("bad amount range [{lo}, {hi}]"));
        }
        Ok(())
    }
}

fn sentence(rng: &mut ChaCha8Rng, out: &mut String) {
    let words = domains::words();
    let n = rng.gen_range(3..=9);
    for i in 0..n {
        let w = words.choose(rng).expect("word list is not empty");
        if i == 0 {
            let mut c = w.chars();
            if let Some(f) = c.next() {
                out.push(f.to_ascii_uppercase());
                out.push_str(c.as_str());
            }
        } else {
            out.push(' ');
            out.push_str(w);
        }
    }
    out.push('.');
}

fn email(rng: &mut ChaCha8Rng) -> String {
    let first = domains::first_names().choose(rng).unwrap();
    let a = domains::last_names().choose(rng).unwrap();
    let b = domains::last_names().choose(rng).unwrap();
    let tld = ["com", "net", "org", "biz", "info"].choose(rng).unwrap();
    format!("{first}{}@{a}-{b}.{tld}", rng.gen_range(10..100))
}

/// Generate the dataset as CSV bytes.
pub fn generate(spec: &DatasetSpec) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::with_capacity(spec.rows * 104));
    if spec.header {
        w.write_record(["id", "icd", "amount", "message"])
            .expect("writing to memory");
    }
    let lo = (spec.amount_range.0 * 100.0).round() as u64;
    let hi = (spec.amount_range.1 * 100.0).round() as u64;
    let mut msg = String::new();
    for id in 0..spec.rows {
        let icd = if rng.gen_bool(spec.p_icd) {
            domains::icd10_codes().choose(&mut rng).unwrap().as_str()
        } else {
            ""
        };
        let cents = rng.gen_range(lo..=hi);
        let amount = format!("${}.{:02}", cents / 100, cents % 100);
        msg.clear();
        sentence(&mut rng, &mut msg);
        if rng.gen_bool(spec.p_kw1) {
            msg.push(' ');
            msg.push_str(&spec.kw1);
            msg.push('.');
        }
        if rng.gen_bool(spec.p_kw2) {
            msg.push(' ');
            msg.push_str(&spec.kw2);
            msg.push('.');
        }
        if rng.gen_bool(spec.p_email) {
            msg.push(' ');
            msg.push_str(&email(&mut rng));
            msg.push('.');
        }
        msg.push(' ');
        sentence(&mut rng, &mut msg);
        w.write_record([id.to_string().as_str(), icd, &amount, &msg])
            .expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

/// Scan hits per rule over a whole file.
pub fn measure_match_rate(file: &[u8], policy: &PolicySpec) -> Vec<usize> {
    let mut counts = vec![0; policy.rules.len()];
    for s in scan(file, policy) {
        counts[s.rule_index] += 1;
    }
    counts
}

/// One redaction rule per generated field: icd, kw1, kw2, email.
pub fn calibration_policy(spec: &DatasetSpec) -> PolicySpec {
    let rule = |pattern: serde_json::Value| {
        json!({"patterns": [pattern], "transformation": {"type": "redact"}})
    };
    let doc = json!({
        "do_read": true,
        "do_write": true,
        "rules": [
            rule(json!({"type": "re", "spec": ICD_REGEX})),
            rule(json!({"type": "dict", "spec": [spec.kw1]})),
            rule(json!({"type": "dict", "spec": [spec.kw2]})),
            rule(json!({"type": "re", "spec": EMAIL_REGEX})),
        ]
    });
    parse_policy(doc.to_string().as_bytes()).expect("calibration policy is valid")
}
