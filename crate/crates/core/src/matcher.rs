//! Sensitive-span detection.
//!
//! Every pattern defines, for each start offset `s`, at most one hit: the
//! leftmost-first anchored match found inside `[s, s + limit]`, where `limit`
//! is the pattern's extent. A scan is a greedy sweep over those hits (earliest
//! start, then longest, then lowest rule, then lowest pattern), resuming at the
//! end of each accepted span.
//!
//! Because a hit depends only on `[s - 1, s + limit]`, a window cut out of a
//! larger stream can decide exactly which of its spans are final. The
//! `scan_truncated` family reports the resolved region so callers can widen
//! the window until the bytes they need are covered.

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use regex_automata::meta;
use regex_automata::util::syntax;
use regex_automata::{Anchored, Input};
use regex_syntax::hir::{Class, Hir, HirKind, Look};
use regex_syntax::ParserBuilder;

use crate::policy::PolicySpec;

/// A detected sensitive byte range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MatchSpan {
    pub start: usize,
    pub end: usize,
    pub rule_index: usize,
    pub pattern_index: usize,
    /// First capture group of a regex hit, when it exists and participated.
    pub capture: Option<(usize, usize)>,
}

impl MatchSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub(crate) fn shifted(mut self, by: usize) -> Self {
        self.start += by;
        self.end += by;
        self.capture = self.capture.map(|(a, b)| (a + by, b + by));
        self
    }
}

/// Set of byte values.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) struct ByteSet([u64; 4]);

impl ByteSet {
    pub(crate) fn empty() -> Self {
        ByteSet([0; 4])
    }

    pub(crate) fn insert(&mut self, b: u8) {
        self.0[(b >> 6) as usize] |= 1 << (b & 63);
    }

    pub(crate) fn insert_range(&mut self, lo: u8, hi: u8) {
        for b in lo..=hi {
            self.insert(b);
        }
    }

    #[inline]
    pub(crate) fn contains(&self, b: u8) -> bool {
        self.0[(b >> 6) as usize] & (1 << (b & 63)) != 0
    }

    pub(crate) fn union_with(&mut self, other: &ByteSet) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a |= b;
        }
    }
}

#[derive(Clone)]
pub(crate) enum CompiledPattern {
    Regex(RegexPattern),
    Dict(DictPattern),
}

#[derive(Clone)]
pub(crate) struct RegexPattern {
    re: meta::Regex,
    limit: usize,
    has_groups: bool,
}

#[derive(Clone)]
pub(crate) struct DictPattern {
    ac: AhoCorasick,
    limit: usize,
    word_boundary: bool,
}

/// Look-arounds that inspect at most one byte on either side.
fn look_is_local(look: Look) -> bool {
    matches!(
        look,
        Look::Start
            | Look::End
            | Look::StartLF
            | Look::EndLF
            | Look::StartCRLF
            | Look::EndCRLF
            | Look::WordAscii
            | Look::WordAsciiNegate
            | Look::WordStartAscii
            | Look::WordEndAscii
            | Look::WordStartHalfAscii
            | Look::WordEndHalfAscii
    )
}

fn collect_alphabet(hir: &Hir, set: &mut ByteSet) {
    match hir.kind() {
        HirKind::Empty | HirKind::Look(_) => {}
        HirKind::Literal(lit) => lit.0.iter().for_each(|&b| set.insert(b)),
        HirKind::Class(Class::Bytes(c)) => {
            for r in c.ranges() {
                set.insert_range(r.start(), r.end());
            }
        }
        HirKind::Class(Class::Unicode(c)) => {
            for r in c.ranges() {
                let lo = r.start() as u32;
                let hi = r.end() as u32;
                if lo <= 0x7F {
                    set.insert_range(lo as u8, hi.min(0x7F) as u8);
                }
                if hi > 0x7F {
                    set.insert_range(0x80, 0xFF);
                }
            }
        }
        HirKind::Repetition(r) => collect_alphabet(&r.sub, set),
        HirKind::Capture(c) => collect_alphabet(&c.sub, set),
        HirKind::Concat(v) | HirKind::Alternation(v) => {
            v.iter().for_each(|h| collect_alphabet(h, set))
        }
    }
}

#[inline]
fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

impl CompiledPattern {
    pub(crate) fn regex(src: &str, cap: usize) -> Result<(Self, ByteSet), String> {
        let hir = ParserBuilder::new()
            .unicode(false)
            .utf8(false)
            .build()
            .parse(src)
            .map_err(|e| e.to_string())?;
        let props = hir.properties();
        if props.minimum_len() == Some(0) {
            return Err("pattern can match the empty string".into());
        }
        if let Some(look) = props.look_set().iter().find(|l| !look_is_local(*l)) {
            return Err(format!("unsupported assertion {look:?}"));
        }
        let limit = props.maximum_len().map_or(cap, |m| m.min(cap));
        let re = meta::Builder::new()
            .configure(meta::Config::new().utf8_empty(false))
            .syntax(syntax::Config::new().unicode(false).utf8(false))
            .build_from_hir(&hir)
            .map_err(|e| e.to_string())?;
        let has_groups = re.group_info().group_len(regex_automata::PatternID::ZERO) > 1;
        let mut set = ByteSet::empty();
        collect_alphabet(&hir, &mut set);
        Ok((
            CompiledPattern::Regex(RegexPattern {
                re,
                limit,
                has_groups,
            }),
            set,
        ))
    }

    pub(crate) fn dictionary(
        terms: &[String],
        case_sensitive: bool,
        word_boundary: bool,
        cap: usize,
    ) -> Result<(Self, ByteSet), String> {
        let limit = terms.iter().map(String::len).max().unwrap_or(0);
        if limit > cap {
            return Err(format!("term longer than the {cap}-byte match limit"));
        }
        let ac = AhoCorasickBuilder::new()
            .match_kind(MatchKind::Standard)
            .ascii_case_insensitive(!case_sensitive)
            .build(terms)
            .map_err(|e| e.to_string())?;
        let mut set = ByteSet::empty();
        for b in terms.iter().flat_map(|t| t.bytes()) {
            set.insert(b);
            if !case_sensitive {
                set.insert(b.to_ascii_lowercase());
                set.insert(b.to_ascii_uppercase());
            }
        }
        Ok((
            CompiledPattern::Dict(DictPattern {
                ac,
                limit,
                word_boundary,
            }),
            set,
        ))
    }

    pub(crate) fn limit(&self) -> usize {
        match self {
            CompiledPattern::Regex(r) => r.limit,
            CompiledPattern::Dict(d) => d.limit,
        }
    }

    /// First start in `[pos, before)` that has a hit, with the hit's end.
    fn next_hit(&self, hay: &[u8], pos: usize, before: usize) -> Option<(usize, usize)> {
        if pos >= before {
            return None;
        }
        match self {
            CompiledPattern::Regex(r) => r.next_hit(hay, pos, before),
            CompiledPattern::Dict(d) => d.next_hit(hay, pos, before),
        }
    }

    fn capture(&self, hay: &[u8], start: usize) -> Option<(usize, usize)> {
        match self {
            CompiledPattern::Regex(r) if r.has_groups => r.capture(hay, start),
            _ => None,
        }
    }
}

impl RegexPattern {
    fn anchored(&self, hay: &[u8], s: usize) -> Option<usize> {
        let end = hay.len().min(s + self.limit);
        let input = Input::new(hay).span(s..end).anchored(Anchored::Yes);
        self.re.search(&input).map(|m| m.end())
    }

    fn capture(&self, hay: &[u8], s: usize) -> Option<(usize, usize)> {
        let end = hay.len().min(s + self.limit);
        let input = Input::new(hay).span(s..end).anchored(Anchored::Yes);
        let mut caps = self.re.create_captures();
        self.re.search_captures(&input, &mut caps);
        caps.get_group(1).map(|g| (g.start, g.end))
    }

    fn next_hit(&self, hay: &[u8], mut pos: usize, before: usize) -> Option<(usize, usize)> {
        let n = hay.len();
        let l = self.limit;
        let horizon = n.min(before - 1 + l);
        // An unrestricted leftmost match that already fits the limit is also
        // the first bounded hit.
        let m = self.re.search(&Input::new(hay).span(pos..horizon))?;
        if m.len() <= l {
            return (m.start() < before).then(|| (m.start(), m.end()));
        }
        while pos < before {
            let chunk_end = horizon.min(pos + 2 * l);
            match self.re.search(&Input::new(hay).span(pos..chunk_end)) {
                Some(m) if m.start() <= pos + l => {
                    let s = m.start();
                    if s >= before {
                        return None;
                    }
                    if let Some(e) = self.anchored(hay, s) {
                        return Some((s, e));
                    }
                    pos = s + 1;
                }
                _ => pos += l + 1,
            }
        }
        None
    }
}

impl DictPattern {
    fn boundary_ok(&self, hay: &[u8], s: usize, e: usize) -> bool {
        if !self.word_boundary {
            return true;
        }
        let left = !is_word(hay[s]) || s == 0 || !is_word(hay[s - 1]);
        let right = !is_word(hay[e - 1]) || e == hay.len() || !is_word(hay[e]);
        left && right
    }

    fn next_hit(&self, hay: &[u8], pos: usize, before: usize) -> Option<(usize, usize)> {
        let horizon = hay.len().min(before - 1 + self.limit);
        let input = aho_corasick::Input::new(hay).span(pos..horizon);
        let mut best: Option<(usize, usize)> = None;
        for m in self.ac.find_overlapping_iter(input) {
            if let Some((bs, _)) = best {
                if m.end() > bs + self.limit {
                    break;
                }
            }
            if m.start() >= before || !self.boundary_ok(hay, m.start(), m.end()) {
                continue;
            }
            best = match best {
                Some((bs, be)) if bs < m.start() || (bs == m.start() && be >= m.end()) => best,
                _ => Some((m.start(), m.end())),
            };
        }
        best
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Pending,
    Hit(usize, usize),
    Exhausted,
}

/// Greedy sweep over `[from, ..)` accepting spans that start before `before`.
/// Returns the spans and the cursor the sweep ended on.
fn sweep(policy: &PolicySpec, hay: &[u8], from: usize, before: usize) -> (Vec<MatchSpan>, usize) {
    let patterns: Vec<(usize, usize, &CompiledPattern)> = policy
        .rules
        .iter()
        .enumerate()
        .flat_map(|(ri, r)| {
            r.patterns
                .iter()
                .enumerate()
                .map(move |(pi, p)| (ri, pi, &p.compiled))
        })
        .collect();
    let mut slots = vec![Slot::Pending; patterns.len()];
    let mut spans = Vec::new();
    let mut pos = from;
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for (i, (_, _, pat)) in patterns.iter().enumerate() {
            let stale = match slots[i] {
                Slot::Pending => true,
                Slot::Hit(s, _) => s < pos,
                Slot::Exhausted => false,
            };
            if stale {
                slots[i] = match pat.next_hit(hay, pos, before) {
                    Some((s, e)) => Slot::Hit(s, e),
                    None => Slot::Exhausted,
                };
            }
            if let Slot::Hit(s, e) = slots[i] {
                let better = match best {
                    None => true,
                    Some((bs, be, _)) => s < bs || (s == bs && e > be),
                };
                if better {
                    best = Some((s, e, i));
                }
            }
        }
        let Some((s, e, i)) = best else { break };
        let (rule_index, pattern_index, pat) = patterns[i];
        spans.push(MatchSpan {
            start: s,
            end: e,
            rule_index,
            pattern_index,
            capture: pat.capture(hay, s),
        });
        pos = e;
    }
    (spans, pos)
}

/// All spans of `buffer`, treating both ends as the ends of the stream.
pub fn scan(buffer: &[u8], policy: &PolicySpec) -> Vec<MatchSpan> {
    if policy.is_empty() || buffer.is_empty() {
        return Vec::new();
    }
    sweep(policy, buffer, 0, buffer.len()).0
}

/// Exclusive bound on span starts that a right-open window can decide.
fn right_limit(buffer: &[u8], policy: &PolicySpec, right_open: bool) -> usize {
    let n = buffer.len();
    if !right_open {
        return n;
    }
    let l = policy.max_pattern_extent();
    let last_sep = buffer.iter().rposition(|&b| policy.is_separator(b));
    last_sep.map_or(0, |i| i + 1).max(n.saturating_sub(l))
}

/// Earliest offset of a left-open window at which the stream's sweep is known
/// to be synchronised: no span can contain it from either side.
fn left_cut(buffer: &[u8], policy: &PolicySpec, limit: usize) -> usize {
    let n = buffer.len();
    let l = policy.max_pattern_extent();
    let sep = buffer.iter().position(|&b| policy.is_separator(b)).unwrap_or(n);
    if sep <= l {
        return sep;
    }
    // Reach-based cut: x >= L such that no hit starting in [1, x) ends past x.
    let patterns: Vec<&CompiledPattern> = policy
        .rules
        .iter()
        .flat_map(|r| r.patterns.iter().map(|p| &p.compiled))
        .collect();
    let mut x = l;
    let mut scanned = 1;
    loop {
        if x >= sep || x > limit {
            return sep;
        }
        let mut reach = 0;
        for p in &patterns {
            let mut pos = scanned;
            while let Some((s, e)) = p.next_hit(buffer, pos, x) {
                reach = reach.max(e);
                pos = s + 1;
            }
        }
        if reach <= x {
            return x;
        }
        scanned = x;
        x = reach;
    }
}

/// Scan a window that may abut unseen bytes. Returns the spans that are final,
/// plus how many leading and trailing bytes remain unresolved. Span offsets
/// are relative to `buffer`.
pub fn scan_truncated(
    buffer: &[u8],
    policy: &PolicySpec,
    left_open: bool,
    right_open: bool,
) -> (Vec<MatchSpan>, usize, usize) {
    let n = buffer.len();
    if policy.is_empty() || n == 0 {
        return (Vec::new(), 0, 0);
    }
    let t = right_limit(buffer, policy, right_open);
    let x = if left_open {
        // Hits starting before `t` are fully visible; beyond that a cut
        // cannot be verified.
        left_cut(buffer, policy, t)
    } else {
        0
    };
    if x >= n {
        return (Vec::new(), n, 0);
    }
    let (spans, end) = sweep(policy, buffer, x, t);
    let resolved = end.max(t).max(x);
    (spans, x, n - resolved)
}

/// Resume a sweep at `cursor`, a point where the stream's sweep is known to
/// stand. Bytes before `cursor` serve only as look-behind context. Returns the
/// spans and the offset up to which the output is final.
pub fn scan_from(
    buffer: &[u8],
    policy: &PolicySpec,
    cursor: usize,
    right_open: bool,
) -> (Vec<MatchSpan>, usize) {
    let n = buffer.len();
    if policy.is_empty() {
        return (Vec::new(), n);
    }
    let t = right_limit(buffer, policy, right_open);
    if cursor >= t {
        return (Vec::new(), cursor.max(t));
    }
    let (spans, end) = sweep(policy, buffer, cursor, t);
    (spans, end.max(t))
}

/// Scan `buffer` as two independently read windows, `[0, k + g)` and
/// `[k - g, len)`, and merge. Equals `scan(buffer)` whenever
/// `g >= max_pattern_extent`; smaller guards can lose spans that straddle `k`.
pub fn scan_two_windows(buffer: &[u8], policy: &PolicySpec, k: usize, g: usize) -> Vec<MatchSpan> {
    let n = buffer.len();
    let k = k.min(n);
    let l_end = n.min(k + g);
    let r0 = k.saturating_sub(g);
    let left = &buffer[..l_end];
    let (mut spans, _, suffix) = scan_truncated(left, policy, false, l_end < n);
    let cursor = l_end - suffix;
    let right = &buffer[r0..];
    if r0 == 0 || cursor > r0 {
        // The left window's resolved cursor lies inside the right window.
        let (more, _) = scan_from(right, policy, cursor - r0, false);
        spans.extend(more.into_iter().map(|s| s.shifted(r0)));
    } else {
        let (more, _, _) = scan_truncated(right, policy, true, false);
        spans.extend(
            more.into_iter()
                .map(|s| s.shifted(r0))
                .filter(|s| s.start >= cursor),
        );
    }
    spans
}
