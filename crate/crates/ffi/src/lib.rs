//! C interface to the dlpfs policy engine and in-process filesystem.
//!
//! Every function returns a [`DlpfsStatus`]; on failure a message is kept per
//! thread and can be fetched with [`dlpfs_last_error_message`]. Objects are
//! opaque, created by `*_new`/`*_parse` and released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dlpfs::engine;
use dlpfs::policy::{load_policy, parse_policy_with, PolicyOptions, PolicySpec};
use dlpfs::vfs::{FsType, MountConfig, OpenFlags, OsBackend, Vfs, VfsError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlpfsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Policy = 3,
    Io = 4,
    BadHandle = 5,
    InvalidConfig = 6,
    Unsupported = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlpfsFsType {
    Loopback = 0,
    Dlpfs = 1,
}

/// A parsed policy.
pub struct DlpfsPolicy(PolicySpec);

/// An in-process filesystem over a root directory.
pub struct DlpfsVfs(Vfs<OsBackend>);

/// One detected span. `capture_start == capture_end` when there is no
/// capture group.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DlpfsSpan {
    pub start: usize,
    pub end: usize,
    pub rule_index: usize,
    pub pattern_index: usize,
    pub capture_start: usize,
    pub capture_end: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<(CString, c_int)>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display, errno: c_int) {
    let msg = CString::new(msg.to_string().replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some((msg, errno)));
}

struct Failure(DlpfsStatus);

fn fail(status: DlpfsStatus, msg: impl std::fmt::Display) -> Failure {
    set_error(msg, 0);
    Failure(status)
}

impl From<VfsError> for Failure {
    fn from(e: VfsError) -> Self {
        let status = match &e {
            VfsError::Io(_) => DlpfsStatus::Io,
            VfsError::PathEscape(_) => DlpfsStatus::Io,
            VfsError::BadHandle(_) => DlpfsStatus::BadHandle,
            VfsError::NotSupported(_) => DlpfsStatus::Unsupported,
            VfsError::InvalidConfig(_) | VfsError::Guard(_) => DlpfsStatus::InvalidConfig,
            VfsError::Policy(_) => DlpfsStatus::Policy,
        };
        set_error(&e, e.errno());
        Failure(status)
    }
}

fn guarded(f: impl FnOnce() -> Result<(), Failure>) -> DlpfsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlpfsStatus::Ok,
        Ok(Err(Failure(s))) => s,
        Err(_) => {
            set_error("internal panic", 0);
            DlpfsStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(DlpfsStatus::NullArgument, format!("{what} is NULL")))
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(fail(DlpfsStatus::NullArgument, "data is NULL"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(fail(DlpfsStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(DlpfsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(DlpfsStatus::NullArgument, format!("{what} is NULL")))
}

fn leak_slice<T>(v: Vec<T>) -> (*mut T, usize) {
    let b = v.into_boxed_slice();
    let n = b.len();
    if n == 0 {
        return (ptr::null_mut(), 0);
    }
    (Box::into_raw(b) as *mut T, n)
}

unsafe fn free_slice<T>(p: *mut T, len: usize) {
    if !p.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(p, len)));
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dlpfs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |(m, _)| m.as_ptr()))
}

/// errno equivalent of the last failed filesystem call on this thread, or 0.
#[no_mangle]
pub extern "C" fn dlpfs_last_errno() -> c_int {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |(_, n)| *n))
}

/// Parse a JSON policy. Relative table paths resolve against the working
/// directory.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_policy_parse(
    data: *const u8,
    len: usize,
    out: *mut *mut DlpfsPolicy,
) -> DlpfsStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        let p = parse_policy_with(bytes(data, len)?, &PolicyOptions::default())
            .map_err(|e| fail(DlpfsStatus::Policy, e))?;
        *out = Box::into_raw(Box::new(DlpfsPolicy(p)));
        Ok(())
    })
}

/// Load a policy file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_policy_load(path: *const c_char, out: *mut *mut DlpfsPolicy) -> DlpfsStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        let path = c_str(path, "path")?;
        let p = load_policy(Path::new(path), &PolicyOptions::default())
            .map_err(|e| fail(DlpfsStatus::Policy, e))?;
        *out = Box::into_raw(Box::new(DlpfsPolicy(p)));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_policy_free(policy: *mut DlpfsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Upper bound on the length of any match, 0 for NULL or empty policies.
///
/// # Safety
/// `policy` must be NULL or a live policy.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_policy_max_extent(policy: *const DlpfsPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.0.max_pattern_extent())
}

/// # Safety
/// `policy` must be NULL or a live policy.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_policy_rule_count(policy: *const DlpfsPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.0.rules.len())
}

/// Find all spans in `data`. Release the array with [`dlpfs_spans_free`].
///
/// # Safety
/// `policy` must be live, `data` must point to `len` bytes, `out` and
/// `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_scan(
    policy: *const DlpfsPolicy,
    data: *const u8,
    len: usize,
    out: *mut *mut DlpfsSpan,
    out_len: *mut usize,
) -> DlpfsStatus {
    guarded(|| {
        let policy = non_null(policy, "policy")?;
        let out = out_ptr(out, "out")?;
        let out_len = out_ptr(out_len, "out_len")?;
        let spans: Vec<DlpfsSpan> = dlpfs::scan(bytes(data, len)?, &policy.0)
            .into_iter()
            .map(|s| {
                let (cs, ce) = s.capture.unwrap_or((s.start, s.start));
                DlpfsSpan {
                    start: s.start,
                    end: s.end,
                    rule_index: s.rule_index,
                    pattern_index: s.pattern_index,
                    capture_start: cs,
                    capture_end: ce,
                }
            })
            .collect();
        (*out, *out_len) = leak_slice(spans);
        Ok(())
    })
}

/// # Safety
/// `spans`/`len` must come from [`dlpfs_scan`].
#[no_mangle]
pub unsafe extern "C" fn dlpfs_spans_free(spans: *mut DlpfsSpan, len: usize) {
    free_slice(spans, len);
}

/// Apply the policy to a whole buffer. Release the result with
/// [`dlpfs_buffer_free`].
///
/// # Safety
/// As for [`dlpfs_scan`].
#[no_mangle]
pub unsafe extern "C" fn dlpfs_scrub(
    policy: *const DlpfsPolicy,
    data: *const u8,
    len: usize,
    seed: u64,
    out: *mut *mut u8,
    out_len: *mut usize,
) -> DlpfsStatus {
    guarded(|| {
        let policy = non_null(policy, "policy")?;
        let out = out_ptr(out, "out")?;
        let out_len = out_ptr(out_len, "out_len")?;
        (*out, *out_len) = leak_slice(engine::scrub(bytes(data, len)?, &policy.0, seed));
        Ok(())
    })
}

/// # Safety
/// `data`/`len` must come from [`dlpfs_scrub`].
#[no_mangle]
pub unsafe extern "C" fn dlpfs_buffer_free(data: *mut u8, len: usize) {
    free_slice(data, len);
}

/// Create a filesystem over `root`. `fs_type` is a [`DlpfsFsType`] value.
/// `policy` may be NULL for an empty policy
/// and is copied. A negative `guard` selects the default; `seed` may be NULL
/// for per-handle random seeds.
///
/// # Safety
/// `root` must be a NUL-terminated string, `policy` NULL or live, `seed`
/// NULL or readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_vfs_new(
    fs_type: c_int,
    root: *const c_char,
    policy: *const DlpfsPolicy,
    guard: i64,
    seed: *const u64,
    out: *mut *mut DlpfsVfs,
) -> DlpfsStatus {
    guarded(|| {
        let out = out_ptr(out, "out")?;
        let root = c_str(root, "root")?;
        let fs_type = match fs_type {
            t if t == DlpfsFsType::Loopback as c_int => FsType::Loopback,
            t if t == DlpfsFsType::Dlpfs as c_int => FsType::Dlpfs,
            t => return Err(fail(DlpfsStatus::InvalidConfig, format!("unknown fs type {t}"))),
        };
        let mut cfg = MountConfig::new(fs_type, root, root);
        cfg.guard = usize::try_from(guard).ok();
        cfg.seed = seed.as_ref().copied();
        let policy = policy.as_ref().map_or_else(PolicySpec::empty, |p| p.0.clone());
        let vfs = Vfs::with_backend(&cfg, policy, OsBackend)?;
        *out = Box::into_raw(Box::new(DlpfsVfs(vfs)));
        Ok(())
    })
}

/// Settles every open handle and frees the filesystem.
///
/// # Safety
/// `vfs` must come from [`dlpfs_vfs_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_vfs_free(vfs: *mut DlpfsVfs) {
    if !vfs.is_null() {
        drop(Box::from_raw(vfs));
    }
}

/// Open `path` (relative to the root) with `open(2)` flags. With `O_CREAT`
/// the file is created with `mode`.
///
/// # Safety
/// `vfs` must be live, `path` NUL-terminated, `fh` writable.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_vfs_open(
    vfs: *const DlpfsVfs,
    path: *const c_char,
    flags: c_int,
    mode: u32,
    fh: *mut u64,
) -> DlpfsStatus {
    guarded(|| {
        let vfs = &non_null(vfs, "vfs")?.0;
        let path = Path::new(c_str(path, "path")?);
        let fh = out_ptr(fh, "fh")?;
        let flags = OpenFlags::from_libc(flags);
        *fh = if flags.create {
            vfs.create(path, flags, mode)?
        } else {
            vfs.open(path, flags)?
        };
        Ok(())
    })
}

/// Read up to `cap` bytes at `offset`; `*nread` is 0 at end of file.
///
/// # Safety
/// `vfs` must be live, `buf` writable for `cap` bytes, `nread` writable.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_vfs_read(
    vfs: *const DlpfsVfs,
    fh: u64,
    offset: u64,
    buf: *mut u8,
    cap: usize,
    nread: *mut usize,
) -> DlpfsStatus {
    guarded(|| {
        let vfs = &non_null(vfs, "vfs")?.0;
        let nread = out_ptr(nread, "nread")?;
        if cap > 0 && buf.is_null() {
            return Err(fail(DlpfsStatus::NullArgument, "buf is NULL"));
        }
        let data = vfs.read(fh, offset, cap)?;
        if !data.is_empty() {
            ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        }
        *nread = data.len();
        Ok(())
    })
}

/// # Safety
/// `vfs` must be live, `data` readable for `len` bytes, `written` writable.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_vfs_write(
    vfs: *const DlpfsVfs,
    fh: u64,
    offset: u64,
    data: *const u8,
    len: usize,
    written: *mut usize,
) -> DlpfsStatus {
    guarded(|| {
        let vfs = &non_null(vfs, "vfs")?.0;
        let written = out_ptr(written, "written")?;
        *written = vfs.write(fh, offset, bytes(data, len)?)?;
        Ok(())
    })
}

/// Settle buffered writes of `fh`, reporting deferred write failures.
///
/// # Safety
/// `vfs` must be live.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_vfs_flush(vfs: *const DlpfsVfs, fh: u64) -> DlpfsStatus {
    guarded(|| Ok(non_null(vfs, "vfs")?.0.flush(fh)?))
}

/// Settle and close `fh`.
///
/// # Safety
/// `vfs` must be live.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_vfs_release(vfs: *const DlpfsVfs, fh: u64) -> DlpfsStatus {
    guarded(|| Ok(non_null(vfs, "vfs")?.0.release(fh)?))
}

/// Current size of the open file.
///
/// # Safety
/// `vfs` must be live, `size` writable.
#[no_mangle]
pub unsafe extern "C" fn dlpfs_vfs_size(vfs: *const DlpfsVfs, fh: u64, size: *mut u64) -> DlpfsStatus {
    guarded(|| {
        let vfs = &non_null(vfs, "vfs")?.0;
        let size = out_ptr(size, "size")?;
        *size = vfs.fgetattr(fh)?.size;
        Ok(())
    })
}
