//! Bundled value domains: surrogate tables for masking, hierarchies for
//! generalisation, and the word lists used by the data generator.

use std::collections::BTreeMap;
use std::sync::OnceLock;

fn lines(text: &'static str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

macro_rules! table {
    ($name:ident, $file:literal) => {
        pub fn $name() -> &'static [String] {
            static CELL: OnceLock<Vec<String>> = OnceLock::new();
            CELL.get_or_init(|| lines(include_str!($file)))
        }
    };
}

table!(icd10_codes, "data/icd10.txt");
table!(words, "data/words.txt");
table!(first_names, "data/first_names.txt");
table!(last_names, "data/last_names.txt");

/// Fictional addresses built from the name lists.
pub fn surrogate_emails() -> &'static [String] {
    static CELL: OnceLock<Vec<String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let tlds = ["com", "net", "org", "info"];
        first_names()
            .iter()
            .zip(last_names().iter().cycle().skip(7))
            .enumerate()
            .map(|(i, (f, l))| format!("{f}{}@{l}.example.{}", i % 90 + 10, tlds[i % 4]))
            .collect()
    })
}

fn capitalised(list: &'static [String]) -> Vec<String> {
    list.iter()
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
                None => String::new(),
            }
        })
        .collect()
}

/// Surrogate values for a builtin mask domain.
pub fn builtin_values(domain: &str) -> Option<&'static [String]> {
    static FIRST: OnceLock<Vec<String>> = OnceLock::new();
    static LAST: OnceLock<Vec<String>> = OnceLock::new();
    match domain {
        "icd10" => Some(icd10_codes()),
        "email" => Some(surrogate_emails()),
        "first_name" => Some(FIRST.get_or_init(|| capitalised(first_names()))),
        "last_name" => Some(LAST.get_or_init(|| capitalised(last_names()))),
        _ => None,
    }
}

/// Builtin generalisation hierarchies.
pub fn builtin_hierarchy(domain: &str) -> Option<BTreeMap<String, String>> {
    let pairs: &[(&str, &str)] = match domain {
        "marital_status" => &[
            ("Single", "Not Married"),
            ("Divorced", "Not Married"),
            ("Widowed", "Not Married"),
            ("Separated", "Not Married"),
            ("Married", "Partnered"),
            ("Civil Partnership", "Partnered"),
        ],
        _ => return None,
    };
    Some(
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icd_codes_are_well_formed() {
        let codes = icd10_codes();
        assert!(codes.len() > 200);
        for c in codes {
            let b = c.as_bytes();
            assert_eq!(b.len(), 5, "{c}");
            assert!(b[0].is_ascii_uppercase() && b[1].is_ascii_digit() && b[2].is_ascii_digit());
            assert_eq!(b[3], b'.');
            assert!(b[4].is_ascii_digit());
        }
    }

    #[test]
    fn builtin_domains_are_non_empty() {
        for d in ["icd10", "email", "first_name", "last_name"] {
            assert!(!builtin_values(d).unwrap().is_empty(), "{d}");
        }
        assert!(builtin_values("zip").is_none());
        assert_eq!(builtin_hierarchy("marital_status").unwrap()["Single"], "Not Married");
    }

    #[test]
    fn word_list_is_lowercase_ascii() {
        assert!(words().iter().all(|w| w.bytes().all(|b| b.is_ascii_lowercase())));
    }
}
