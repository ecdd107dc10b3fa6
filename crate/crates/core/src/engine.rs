//! Guard-buffered protection of the read and write paths.
//!
//! Reads fetch the requested range plus guard bytes on either side, scan the
//! window, widen it while the requested bytes are not yet resolved, and cache
//! the transformed result. Writes are held back until the scanner can prove
//! that no span can still grow into the next write, then flushed transformed.

use std::io;
use std::ops::Range;
use std::path::Path;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::matcher::{scan, scan_from, scan_truncated};
use crate::policy::PolicySpec;
use crate::transform::{apply_in_place, TransformContext};

/// Sanity cap for guards and line extension.
pub const MAX_GUARD: usize = 1 << 20;
/// Reads larger than this are processed as a pipeline of sub-windows.
pub const PIPELINE_CHUNK: usize = 4 << 20;

#[derive(Debug, Error)]
#[error("guard of {0} bytes exceeds the {MAX_GUARD}-byte limit")]
pub struct GuardTooLarge(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatMode {
    Raw,
    LineAligned,
}

impl FormatMode {
    /// Line-aligned for common line-oriented suffixes, raw otherwise.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv" | "tsv" | "log" | "jsonl") => FormatMode::LineAligned,
            _ => FormatMode::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuardConfig {
    pub left_guard: usize,
    pub right_guard: usize,
    pub format_mode: FormatMode,
}

impl GuardConfig {
    pub fn new(left: usize, right: usize, format_mode: FormatMode) -> Result<Self, GuardTooLarge> {
        if left.max(right) > MAX_GUARD {
            return Err(GuardTooLarge(left.max(right)));
        }
        Ok(GuardConfig {
            left_guard: left,
            right_guard: right,
            format_mode,
        })
    }

    pub fn symmetric(guard: usize, format_mode: FormatMode) -> Result<Self, GuardTooLarge> {
        Self::new(guard, guard, format_mode)
    }

    /// `max(64, max_pattern_extent)` on both sides.
    pub fn default_for(policy: &PolicySpec, format_mode: FormatMode) -> Self {
        let g = policy.max_pattern_extent().clamp(64, MAX_GUARD);
        GuardConfig {
            left_guard: g,
            right_guard: g,
            format_mode,
        }
    }
}

/// A window of file bytes around a requested range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardedChunk {
    pub file_offset: u64,
    pub data: Vec<u8>,
    pub requested_range: Range<usize>,
}

impl GuardedChunk {
    pub fn requested(&self) -> &[u8] {
        &self.data[self.requested_range.clone()]
    }
}

/// Positional access to the bytes behind a handle.
pub trait Storage {
    fn read_at(&self, buf: &mut [u8], offset: u64) -> io::Result<usize>;
    fn write_all_at(&self, data: &[u8], offset: u64) -> io::Result<()>;
    fn size(&self) -> io::Result<u64>;

    /// Read until `buf` is full or end of file; returns the count read.
    fn read_full_at(&self, buf: &mut [u8], offset: u64) -> io::Result<usize> {
        let mut done = 0;
        while done < buf.len() {
            match self.read_at(&mut buf[done..], offset + done as u64) {
                Ok(0) => break,
                Ok(n) => done += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(done)
    }
}

impl Storage for std::fs::File {
    fn read_at(&self, buf: &mut [u8], offset: u64) -> io::Result<usize> {
        std::os::unix::fs::FileExt::read_at(self, buf, offset)
    }

    fn write_all_at(&self, data: &[u8], offset: u64) -> io::Result<()> {
        std::os::unix::fs::FileExt::write_all_at(self, data, offset)
    }

    fn size(&self) -> io::Result<u64> {
        Ok(self.metadata()?.len())
    }
}

/// An in-memory file.
#[derive(Debug, Default)]
pub struct MemFile(pub Mutex<Vec<u8>>);

impl MemFile {
    pub fn new(data: Vec<u8>) -> Self {
        MemFile(Mutex::new(data))
    }

    pub fn contents(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }
}

impl Storage for MemFile {
    fn read_at(&self, buf: &mut [u8], offset: u64) -> io::Result<usize> {
        let data = self.0.lock().unwrap();
        let start = (offset as usize).min(data.len());
        let n = buf.len().min(data.len() - start);
        buf[..n].copy_from_slice(&data[start..start + n]);
        Ok(n)
    }

    fn write_all_at(&self, src: &[u8], offset: u64) -> io::Result<()> {
        let mut data = self.0.lock().unwrap();
        let end = offset as usize + src.len();
        if data.len() < end {
            data.resize(end, 0);
        }
        data[offset as usize..end].copy_from_slice(src);
        Ok(())
    }

    fn size(&self) -> io::Result<u64> {
        Ok(self.0.lock().unwrap().len() as u64)
    }
}

#[derive(Debug)]
struct ReadCache {
    offset: u64,
    data: Vec<u8>,
}

#[derive(Debug, Default)]
struct WriteBuffer {
    base: u64,
    pending: Vec<u8>,
    /// Raw byte just before `base`, as look-behind context.
    context: Option<u8>,
    /// Raw byte before the end of the last flush, with that flush's end.
    last_flushed: Option<(u64, u8)>,
}

/// Per-open-file protection state.
pub struct HandleState {
    pub file_id: (u64, u64),
    pub rng_seed: u64,
    pub dirty: bool,
    policy: Arc<PolicySpec>,
    guard: GuardConfig,
    ctx: TransformContext,
    read_cache: Option<ReadCache>,
    write_buffer: WriteBuffer,
    deferred_error: Option<io::Error>,
}

impl std::fmt::Debug for HandleState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HandleState")
            .field("file_id", &self.file_id)
            .field("rng_seed", &self.rng_seed)
            .field("dirty", &self.dirty)
            .field("guard", &self.guard)
            .field("pending", &self.write_buffer.pending.len())
            .finish()
    }
}

impl HandleState {
    pub fn new(
        file_id: (u64, u64),
        rng_seed: u64,
        policy: Arc<PolicySpec>,
        guard: GuardConfig,
    ) -> Self {
        let ctx = TransformContext::new(rng_seed, &policy);
        HandleState {
            file_id,
            rng_seed,
            dirty: false,
            policy,
            guard,
            ctx,
            read_cache: None,
            write_buffer: WriteBuffer::default(),
            deferred_error: None,
        }
    }

    pub fn policy(&self) -> &PolicySpec {
        &self.policy
    }

    pub fn guard(&self) -> GuardConfig {
        self.guard
    }

    pub fn invalidate_read_cache(&mut self) {
        self.read_cache = None;
    }

    /// End offset of buffered, not yet flushed bytes.
    pub fn pending_end(&self) -> Option<u64> {
        let wb = &self.write_buffer;
        (!wb.pending.is_empty()).then(|| wb.base + wb.pending.len() as u64)
    }

    fn reads_protected(&self) -> bool {
        self.policy.do_read && !self.policy.is_empty()
    }

    fn writes_protected(&self) -> bool {
        self.policy.do_write && !self.policy.is_empty()
    }

    /// Read `[offset, offset + size)`, protected per policy, truncated at EOF.
    pub fn protected_read<S: Storage + ?Sized>(
        &mut self,
        st: &S,
        offset: u64,
        size: usize,
    ) -> io::Result<Vec<u8>> {
        if !self.reads_protected() {
            let mut buf = vec![0; size];
            let n = st.read_full_at(&mut buf, offset)?;
            buf.truncate(n);
            return Ok(buf);
        }
        let file_len = st.size()?;
        if offset >= file_len || size == 0 {
            return Ok(Vec::new());
        }
        let end = file_len.min(offset + size as u64);
        let mut out = Vec::with_capacity((end - offset) as usize);
        let mut o = offset;
        while o < end {
            let e = end.min(o + PIPELINE_CHUNK as u64);
            self.read_range(st, o, e, file_len, &mut out)?;
            o = e;
        }
        Ok(out)
    }

    fn read_range<S: Storage + ?Sized>(
        &mut self,
        st: &S,
        o: u64,
        e: u64,
        file_len: u64,
        out: &mut Vec<u8>,
    ) -> io::Result<()> {
        if let Some(c) = &self.read_cache {
            if c.offset <= o && e <= c.offset + c.data.len() as u64 {
                let a = (o - c.offset) as usize;
                out.extend_from_slice(&c.data[a..a + (e - o) as usize]);
                return Ok(());
            }
        }
        let chunk = self.resolve_window(st, o, e, file_len)?;
        out.extend_from_slice(chunk.requested());
        Ok(())
    }

    /// Build, scan and transform the guarded window around `[o, e)`, widening
    /// until every requested byte is resolved. Caches the resolved region.
    pub fn resolve_window<S: Storage + ?Sized>(
        &mut self,
        st: &S,
        o: u64,
        e: u64,
        file_len: u64,
    ) -> io::Result<GuardedChunk> {
        let l = self.policy.max_pattern_extent() as u64;
        let mut wa = o.saturating_sub(self.guard.left_guard as u64);
        let mut wb = file_len.min(e + self.guard.right_guard as u64);
        if self.guard.format_mode == FormatMode::LineAligned {
            wa = line_start(st, wa)?;
            wb = line_end(st, wb, file_len)?;
        }
        loop {
            let mut data = vec![0; (wb - wa) as usize];
            let got = st.read_full_at(&mut data, wa)?;
            data.truncate(got);
            let wb_actual = wa + got as u64;
            let left_open = wa > 0;
            let right_open = wb_actual < file_len && got == (wb - wa) as usize;
            let (spans, pre, suf) = scan_truncated(&data, &self.policy, left_open, right_open);
            let ra = wa + pre as u64;
            let rb = wb_actual - suf as u64;
            let want_right = e.min(wb_actual);
            let need_left = left_open && ra > o;
            let need_right = right_open && rb < want_right;
            if !need_left && !need_right {
                apply_in_place(&mut data, wa, &spans, &self.policy, &self.ctx);
                let resolved = data[pre..data.len() - suf].to_vec();
                let requested_range = (o - wa) as usize..(want_right - wa) as usize;
                self.read_cache = Some(ReadCache {
                    offset: ra,
                    data: resolved,
                });
                return Ok(GuardedChunk {
                    file_offset: wa,
                    data,
                    requested_range,
                });
            }
            if need_left {
                wa = o.saturating_sub((2 * (o - wa)).max(l).max(1));
            }
            if need_right {
                wb = file_len.min(e + (2 * (wb - e)).max(l).max(1));
            }
        }
    }

    /// Accept `data` at `offset`. Buffering is invisible to the caller; flush
    /// failures surface on the next `settle`.
    pub fn protected_write<S: Storage + ?Sized>(
        &mut self,
        st: &S,
        offset: u64,
        data: &[u8],
    ) -> io::Result<usize> {
        self.read_cache = None;
        if !self.writes_protected() {
            st.write_all_at(data, offset)?;
            return Ok(data.len());
        }
        if data.is_empty() {
            return Ok(0);
        }
        if let Some(end) = self.pending_end() {
            if end != offset {
                self.settle_pending(st);
            }
        }
        let wb = &mut self.write_buffer;
        if wb.pending.is_empty() {
            wb.base = offset;
            wb.context = match wb.last_flushed {
                Some((at, b)) if at == offset => Some(b),
                _ if offset == 0 => None,
                _ => {
                    let mut b = [0u8];
                    match st.read_full_at(&mut b, offset - 1) {
                        Ok(1) => Some(b[0]),
                        _ => None,
                    }
                }
            };
        }
        wb.pending.extend_from_slice(data);
        self.dirty = true;
        self.flush_settled(st, true);
        Ok(data.len())
    }

    /// Scan the pending bytes and flush the prefix that can no longer change.
    fn flush_settled<S: Storage + ?Sized>(&mut self, st: &S, right_open: bool) {
        let wb = &mut self.write_buffer;
        let c0 = usize::from(wb.context.is_some());
        let mut hay = Vec::with_capacity(c0 + wb.pending.len());
        hay.extend(wb.context);
        hay.extend_from_slice(&wb.pending);
        let (mut spans, resolved) = scan_from(&hay, &self.policy, c0, right_open);
        let mut cut = resolved;
        if right_open && self.guard.format_mode == FormatMode::LineAligned {
            cut = hay[c0..resolved]
                .iter()
                .rposition(|&b| b == b'\n')
                .map_or(c0, |i| c0 + i + 1);
            if let Some(s) = spans.iter().find(|s| s.start < cut && s.end > cut) {
                cut = s.start;
            }
        }
        if cut <= c0 {
            return;
        }
        spans.retain(|s| s.end <= cut);
        let last_raw = hay[cut - 1];
        let mut out = hay[c0..cut].to_vec();
        let spans: Vec<_> = spans
            .into_iter()
            .map(|mut s| {
                s.start -= c0;
                s.end -= c0;
                s.capture = s.capture.map(|(a, b)| (a - c0, b - c0));
                s
            })
            .collect();
        apply_in_place(&mut out, wb.base, &spans, &self.policy, &self.ctx);
        if let Err(e) = st.write_all_at(&out, wb.base) {
            log::warn!("deferred write error at offset {}: {e}", wb.base);
            self.deferred_error.get_or_insert(e);
        }
        let flushed = cut - c0;
        wb.pending.drain(..flushed);
        wb.base += flushed as u64;
        wb.context = Some(last_raw);
        wb.last_flushed = Some((wb.base, last_raw));
        if wb.pending.is_empty() {
            self.dirty = false;
        }
    }

    fn settle_pending<S: Storage + ?Sized>(&mut self, st: &S) {
        if !self.write_buffer.pending.is_empty() {
            self.flush_settled(st, false);
        }
        debug_assert!(self.write_buffer.pending.is_empty());
        self.dirty = false;
    }

    /// Flush everything pending, treating the end of the buffer as final.
    /// Reports any write error deferred since the last settle.
    pub fn settle<S: Storage + ?Sized>(&mut self, st: &S) -> io::Result<()> {
        self.settle_pending(st);
        match self.deferred_error.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn line_start<S: Storage + ?Sized>(st: &S, from: u64) -> io::Result<u64> {
    let floor = from.saturating_sub(MAX_GUARD as u64);
    let mut hi = from;
    let mut buf = vec![0u8; 4096];
    while hi > floor {
        let lo = floor.max(hi.saturating_sub(buf.len() as u64));
        let n = (hi - lo) as usize;
        let got = st.read_full_at(&mut buf[..n], lo)?;
        if let Some(i) = buf[..got].iter().rposition(|&b| b == b'\n') {
            return Ok(lo + i as u64 + 1);
        }
        hi = lo;
    }
    Ok(floor)
}

fn line_end<S: Storage + ?Sized>(st: &S, from: u64, file_len: u64) -> io::Result<u64> {
    let ceil = file_len.min(from + MAX_GUARD as u64);
    let mut lo = from;
    let mut buf = vec![0u8; 4096];
    while lo < ceil {
        let n = ((ceil - lo) as usize).min(buf.len());
        let got = st.read_full_at(&mut buf[..n], lo)?;
        if let Some(i) = buf[..got].iter().position(|&b| b == b'\n') {
            return Ok(lo + i as u64 + 1);
        }
        if got < n {
            return Ok(lo + got as u64);
        }
        lo += n as u64;
    }
    Ok(ceil)
}

/// Transform a whole byte string in one pass: the reference result every
/// windowed read and buffered write must reproduce.
pub fn scrub(bytes: &[u8], policy: &PolicySpec, rng_seed: u64) -> Vec<u8> {
    let ctx = TransformContext::new(rng_seed, policy);
    let spans = scan(bytes, policy);
    let mut out = bytes.to_vec();
    apply_in_place(&mut out, 0, &spans, policy, &ctx);
    out
}
