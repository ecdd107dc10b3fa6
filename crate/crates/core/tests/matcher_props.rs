use dlpfs::matcher::{scan_from, scan_two_windows};
use dlpfs::policy::parse_policy_with;
use dlpfs::{scan, scan_truncated, MatchSpan, PolicyOptions, PolicySpec};
use proptest::prelude::*;
use regex::bytes::Regex;
use serde_json::json;

/// Pattern description shared by the policy under test and the oracle.
#[derive(Debug, Clone)]
enum Pat {
    Re(&'static str),
    Dict(&'static [&'static str], bool, bool),
}

const CAP: usize = 6;

// Look-around free, so the oracle can match on sliced windows.
const POLICIES: &[&[&[Pat]]] = &[
    &[&[Pat::Re("[a-c]+d")], &[Pat::Re(r"\d{2,4}")]],
    &[&[Pat::Re("ab|abc"), Pat::Re("b+")]],
    &[&[Pat::Re("x(y+)z")], &[Pat::Dict(&["xy", "yz", "xyz"], true, false)]],
    &[&[Pat::Dict(&["ab", "abc", "b-c", "cd"], false, true)], &[Pat::Re("(?:a|ab)(?:c|bcd)")]],
    &[&[Pat::Re("[a-d ]+")], &[Pat::Dict(&["AB"], false, false)]],
    &[&[Pat::Dict(&["a", "aa", "aaa"], true, true)], &[Pat::Re("a")]],
];

fn build(rules: &[&[Pat]]) -> PolicySpec {
    let rules: Vec<_> = rules
        .iter()
        .map(|pats| {
            let patterns: Vec<_> = pats
                .iter()
                .map(|p| match p {
                    Pat::Re(r) => json!({"type": "re", "spec": r}),
                    Pat::Dict(t, cs, wb) => {
                        json!({"type": "dict", "spec": t, "case_sensitive": cs, "word_boundary": wb})
                    }
                })
                .collect();
            json!({"patterns": patterns, "transformation": {"type": "redact"}})
        })
        .collect();
    let doc = json!({"do_read": true, "do_write": true, "rules": rules}).to_string();
    let opts = PolicyOptions {
        max_match_bytes: CAP,
        ..Default::default()
    };
    parse_policy_with(doc.as_bytes(), &opts).unwrap()
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

enum Oracle {
    Re(Regex, usize),
    Dict(Vec<Vec<u8>>, bool, bool),
}

impl Oracle {
    fn new(p: &Pat) -> Self {
        match p {
            Pat::Re(r) => {
                let re = Regex::new(&format!("^(?:{r})")).unwrap();
                Oracle::Re(re, CAP)
            }
            Pat::Dict(t, cs, wb) => Oracle::Dict(t.iter().map(|s| s.as_bytes().to_vec()).collect(), *cs, *wb),
        }
    }

    /// Match anchored at `s`: leftmost-first within the capped window for
    /// regexes, the longest acceptable term for dictionaries.
    fn at(&self, hay: &[u8], s: usize) -> Option<(usize, Option<(usize, usize)>)> {
        match self {
            Oracle::Re(re, cap) => {
                let window = &hay[s..hay.len().min(s + cap)];
                let c = re.captures(window)?;
                let m = c.get(0).unwrap();
                if m.is_empty() {
                    return None;
                }
                Some((s + m.end(), c.get(1).map(|g| (s + g.start(), s + g.end()))))
            }
            Oracle::Dict(terms, cs, wb) => terms
                .iter()
                .filter(|t| {
                    let e = s + t.len();
                    e <= hay.len()
                        && if *cs { &hay[s..e] == t.as_slice() } else { hay[s..e].eq_ignore_ascii_case(t) }
                        && (!wb
                            || ((!is_word(hay[s]) || s == 0 || !is_word(hay[s - 1]))
                                && (!is_word(hay[e - 1]) || e == hay.len() || !is_word(hay[e]))))
                })
                .map(|t| s + t.len())
                .max()
                .map(|e| (e, None)),
        }
    }
}

/// Greedy left-to-right resolution: smallest start, then longest, then the
/// earliest rule and pattern.
fn oracle_scan(rules: &[&[Pat]], hay: &[u8]) -> Vec<MatchSpan> {
    let pats: Vec<(usize, usize, Oracle)> = rules
        .iter()
        .enumerate()
        .flat_map(|(ri, ps)| ps.iter().enumerate().map(move |(pi, p)| (ri, pi, Oracle::new(p))))
        .collect();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < hay.len() {
        let mut best: Option<MatchSpan> = None;
        for s in pos..hay.len() {
            for (ri, pi, o) in &pats {
                if let Some((e, capture)) = o.at(hay, s) {
                    if best.as_ref().map_or(true, |b| e > b.end) {
                        best = Some(MatchSpan {
                            start: s,
                            end: e,
                            rule_index: *ri,
                            pattern_index: *pi,
                            capture,
                        });
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        match best {
            Some(b) => {
                pos = b.end;
                out.push(b);
            }
            None => break,
        }
    }
    out
}

fn hay() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop::sample::select(b"abcdxyz0123 -\nAB".to_vec()), 0..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn scan_matches_brute_force(which in 0..POLICIES.len(), buf in hay()) {
        let rules = POLICIES[which];
        let policy = build(rules);
        prop_assert_eq!(scan(&buf, &policy), oracle_scan(rules, &buf));
    }

    #[test]
    fn spans_are_well_formed(which in 0..POLICIES.len(), buf in hay()) {
        let policy = build(POLICIES[which]);
        let spans = scan(&buf, &policy);
        for s in &spans {
            prop_assert!(s.start < s.end && s.end <= buf.len());
            prop_assert!(s.len() <= policy.max_match_bytes());
            if let Some((a, b)) = s.capture {
                prop_assert!(s.start <= a && a <= b && b <= s.end);
            }
        }
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
    }

    #[test]
    fn two_windows_with_full_guard_equal_scan(which in 0..POLICIES.len(), buf in hay(), k in 0usize..80, extra in 0usize..8) {
        let policy = build(POLICIES[which]);
        let k = k.min(buf.len());
        let g = policy.max_pattern_extent() + extra;
        prop_assert_eq!(scan_two_windows(&buf, &policy, k, g), scan(&buf, &policy));
    }

    #[test]
    fn truncation_reports_only_settled_spans(which in 0..POLICIES.len(), buf in hay(), lo in any::<bool>(), ro in any::<bool>()) {
        let policy = build(POLICIES[which]);
        let (spans, pre, suf) = scan_truncated(&buf, &policy, lo, ro);
        prop_assert!(pre + suf <= buf.len() || buf.is_empty());
        if !lo && !ro {
            prop_assert_eq!((pre, suf), (0, 0));
            prop_assert_eq!(&spans, &scan(&buf, &policy));
        }
        for s in &spans {
            prop_assert!(s.start >= pre && s.end <= buf.len() - suf);
        }
        // The settled middle agrees with a scan of the whole buffer.
        let whole: Vec<_> = scan(&buf, &policy)
            .into_iter()
            .filter(|s| s.start >= pre && s.end <= buf.len() - suf)
            .collect();
        if !lo {
            prop_assert_eq!(spans, whole);
        }
    }

    #[test]
    fn resuming_at_a_span_end_continues_the_sweep(which in 0..POLICIES.len(), buf in hay()) {
        let policy = build(POLICIES[which]);
        let all = scan(&buf, &policy);
        if let Some(first) = all.first() {
            let (rest, _) = scan_from(&buf, &policy, first.end, false);
            prop_assert_eq!(rest, all[1..].to_vec());
        }
    }
}
