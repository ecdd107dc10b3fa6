//! Mount-independent passthrough filesystem.
//!
//! [`Vfs`] maps POSIX-style operations on mount-relative paths onto a root
//! directory. In loopback mode it forwards bytes untouched; in dlpfs mode every
//! handle carries a [`HandleState`] and data goes through the engine.

pub mod backend;
pub mod path;

use std::collections::HashMap;
use std::ffi::{OsStr, OsString};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{FormatMode, GuardConfig, GuardTooLarge, HandleState};
use crate::policy::{load_policy, PolicyError, PolicyOptions, PolicySpec};

pub use backend::{Backend, BackingFile, DirEntry, FileAttr, FileKind, OpenFlags, OsBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsType {
    Loopback,
    Dlpfs,
}

impl std::str::FromStr for FsType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loopback" => Ok(FsType::Loopback),
            "dlpfs" => Ok(FsType::Dlpfs),
            other => Err(format!("unknown filesystem type `{other}` (dlpfs or loopback)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum VfsError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("path escapes the mount root: {0}")]
    PathEscape(PathBuf),
    #[error("unknown or released handle {0}")]
    BadHandle(u64),
    #[error("{0} is not supported on this mount")]
    NotSupported(&'static str),
    #[error("invalid mount configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Guard(#[from] GuardTooLarge),
}

impl VfsError {
    /// The errno a kernel-facing caller should report.
    pub fn errno(&self) -> i32 {
        match self {
            VfsError::Io(e) => e.raw_os_error().unwrap_or(libc::EIO),
            VfsError::PathEscape(_) => libc::EACCES,
            VfsError::BadHandle(_) => libc::EBADF,
            VfsError::NotSupported(_) => libc::ENOTSUP,
            VfsError::InvalidConfig(_) | VfsError::Policy(_) | VfsError::Guard(_) => libc::EINVAL,
        }
    }
}

pub type Result<T, E = VfsError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct MountConfig {
    pub fs_type: FsType,
    pub root: PathBuf,
    pub mountpoint: PathBuf,
    pub policy_path: Option<PathBuf>,
    /// Guard bytes on each side; defaults to `max(64, max_pattern_extent)`.
    pub guard: Option<usize>,
    /// Forces a format mode instead of choosing by file suffix.
    pub format_mode: Option<FormatMode>,
    /// Fixed per-handle seed, for reproducible output.
    pub seed: Option<u64>,
}

impl MountConfig {
    pub fn new(fs_type: FsType, root: impl Into<PathBuf>, mountpoint: impl Into<PathBuf>) -> Self {
        MountConfig {
            fs_type,
            root: root.into(),
            mountpoint: mountpoint.into(),
            policy_path: None,
            guard: None,
            format_mode: None,
            seed: None,
        }
    }

    /// Root and mountpoint must be existing, disjoint directories.
    pub fn validate(&self) -> Result<()> {
        let canon = |p: &Path, what: &str| -> Result<PathBuf> {
            let c = p
                .canonicalize()
                .map_err(|e| VfsError::InvalidConfig(format!("{what} {}: {e}", p.display())))?;
            if !c.is_dir() {
                return Err(VfsError::InvalidConfig(format!(
                    "{what} {} is not a directory",
                    p.display()
                )));
            }
            Ok(c)
        };
        let root = canon(&self.root, "root")?;
        let mnt = canon(&self.mountpoint, "mountpoint")?;
        if root.starts_with(&mnt) || mnt.starts_with(&root) {
            return Err(VfsError::InvalidConfig(
                "root and mountpoint must not contain each other".into(),
            ));
        }
        Ok(())
    }
}

struct OpenFile {
    file: Box<dyn BackingFile>,
    path: PathBuf,
    identity: (u64, u64),
    flags: OpenFlags,
    state: Option<HandleState>,
    generation: u64,
}

impl OpenFile {
    /// Drop cached reads if the file was written through the mount since.
    fn sync_generation(&mut self, current: u64) {
        if self.generation != current {
            self.generation = current;
            if let Some(s) = &mut self.state {
                s.invalidate_read_cache();
            }
        }
    }
}

type Handle = Arc<Mutex<OpenFile>>;

pub struct Vfs<B: Backend = OsBackend> {
    backend: B,
    root: PathBuf,
    fs_type: FsType,
    policy: Arc<PolicySpec>,
    guard: Option<usize>,
    format_mode: Option<FormatMode>,
    fixed_seed: Option<u64>,
    secret: [u8; 32],
    handles: Mutex<HashMap<u64, Handle>>,
    next_fh: AtomicU64,
    opens: AtomicU64,
    generations: Mutex<HashMap<(u64, u64), u64>>,
}

impl Vfs<OsBackend> {
    /// Build from a mount configuration, loading the policy file if given.
    pub fn new(cfg: &MountConfig) -> Result<Self> {
        let policy = match (&cfg.policy_path, cfg.fs_type) {
            (Some(p), FsType::Dlpfs) => load_policy(p, &PolicyOptions::default())?,
            _ => PolicySpec::empty(),
        };
        Self::with_backend(cfg, policy, OsBackend)
    }
}

impl<B: Backend> Vfs<B> {
    pub fn with_backend(cfg: &MountConfig, policy: PolicySpec, backend: B) -> Result<Self> {
        let root = cfg
            .root
            .canonicalize()
            .map_err(|e| VfsError::InvalidConfig(format!("root {}: {e}", cfg.root.display())))?;
        if !root.is_dir() {
            return Err(VfsError::InvalidConfig(format!("{} is not a directory", root.display())));
        }
        if let Some(g) = cfg.guard {
            GuardConfig::symmetric(g, FormatMode::Raw)?;
        }
        Ok(Vfs {
            backend,
            root,
            fs_type: cfg.fs_type,
            policy: Arc::new(policy),
            guard: cfg.guard,
            format_mode: cfg.format_mode,
            fixed_seed: cfg.seed,
            secret: rand::random(),
            handles: Mutex::new(HashMap::new()),
            next_fh: AtomicU64::new(1),
            opens: AtomicU64::new(0),
            generations: Mutex::new(HashMap::new()),
        })
    }

    pub fn fs_type(&self) -> FsType {
        self.fs_type
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn policy(&self) -> &Arc<PolicySpec> {
        &self.policy
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    fn real(&self, path: &Path, follow: bool) -> Result<PathBuf> {
        path::resolve(&self.backend, &self.root, path, follow)
    }

    fn guard_for(&self, path: &Path) -> GuardConfig {
        let mode = self.format_mode.unwrap_or_else(|| FormatMode::for_path(path));
        match self.guard {
            Some(g) => GuardConfig {
                left_guard: g,
                right_guard: g,
                format_mode: mode,
            },
            None => GuardConfig::default_for(&self.policy, mode),
        }
    }

    fn seed_for(&self, identity: (u64, u64)) -> u64 {
        if let Some(s) = self.fixed_seed {
            return s;
        }
        let counter = self.opens.fetch_add(1, Ordering::Relaxed);
        let mut h = Sha256::new();
        h.update(self.secret);
        h.update(identity.0.to_le_bytes());
        h.update(identity.1.to_le_bytes());
        h.update(counter.to_le_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    fn generation(&self, identity: (u64, u64)) -> u64 {
        *self.generations.lock().unwrap().get(&identity).unwrap_or(&0)
    }

    fn bump_generation(&self, identity: (u64, u64)) {
        *self.generations.lock().unwrap().entry(identity).or_insert(0) += 1;
    }

    fn handle(&self, fh: u64) -> Result<Handle> {
        self.handles
            .lock()
            .unwrap()
            .get(&fh)
            .cloned()
            .ok_or(VfsError::BadHandle(fh))
    }

    /// Settle pending writes of every handle open on `identity`.
    fn settle_file(&self, identity: (u64, u64)) -> Result<()> {
        let handles: Vec<Handle> = self.handles.lock().unwrap().values().cloned().collect();
        for h in handles {
            let mut of = h.lock().unwrap();
            if of.identity == identity {
                let of = &mut *of;
                if let Some(s) = &mut of.state {
                    s.settle(&*of.file)?;
                }
            }
        }
        Ok(())
    }

    pub fn getattr(&self, path: &Path) -> Result<FileAttr> {
        Ok(self.backend.lstat(&self.real(path, false)?)?)
    }

    pub fn fgetattr(&self, fh: u64) -> Result<FileAttr> {
        let h = self.handle(fh)?;
        let of = h.lock().unwrap();
        Ok(of.file.attr()?)
    }

    pub fn readdir(&self, path: &Path) -> Result<Vec<DirEntry>> {
        Ok(self.backend.read_dir(&self.real(path, true)?)?)
    }

    pub fn readlink(&self, path: &Path) -> Result<PathBuf> {
        Ok(self.backend.read_link(&self.real(path, false)?)?)
    }

    pub fn open(&self, path: &Path, flags: OpenFlags) -> Result<u64> {
        self.open_with_mode(path, flags, 0o644)
    }

    pub fn create(&self, path: &Path, flags: OpenFlags, mode: u32) -> Result<u64> {
        let flags = OpenFlags {
            create: true,
            write: true,
            ..flags
        };
        self.open_with_mode(path, flags, mode)
    }

    fn open_with_mode(&self, path: &Path, flags: OpenFlags, mode: u32) -> Result<u64> {
        // A final symlink is followed; a missing final name is created.
        let real = self.real(path, true)?;
        let file = self.backend.open(&real, flags, mode)?;
        let attr = file.attr()?;
        if attr.kind == FileKind::Directory {
            return Err(VfsError::Io(io::Error::from_raw_os_error(libc::EISDIR)));
        }
        let identity = (attr.dev, attr.ino);
        if flags.truncate && flags.write {
            self.bump_generation(identity);
        }
        let state = match self.fs_type {
            FsType::Loopback => None,
            FsType::Dlpfs => Some(HandleState::new(
                identity,
                self.seed_for(identity),
                Arc::clone(&self.policy),
                self.guard_for(path),
            )),
        };
        let fh = self.next_fh.fetch_add(1, Ordering::Relaxed);
        let of = OpenFile {
            file,
            path: path.to_path_buf(),
            identity,
            flags,
            state,
            generation: self.generation(identity),
        };
        self.handles
            .lock()
            .unwrap()
            .insert(fh, Arc::new(Mutex::new(of)));
        Ok(fh)
    }

    /// Seed of a dlpfs handle, for reproducing its output offline.
    pub fn handle_seed(&self, fh: u64) -> Result<Option<u64>> {
        let h = self.handle(fh)?;
        let of = h.lock().unwrap();
        Ok(of.state.as_ref().map(|s| s.rng_seed))
    }

    pub fn handle_path(&self, fh: u64) -> Result<PathBuf> {
        Ok(self.handle(fh)?.lock().unwrap().path.clone())
    }

    pub fn read(&self, fh: u64, offset: u64, size: usize) -> Result<Vec<u8>> {
        let h = self.handle(fh)?;
        let mut of = h.lock().unwrap();
        if !of.flags.read {
            return Err(VfsError::Io(io::Error::from_raw_os_error(libc::EBADF)));
        }
        let gen = self.generation(of.identity);
        of.sync_generation(gen);
        let of = &mut *of;
        match &mut of.state {
            None => {
                let mut buf = vec![0; size];
                let n = of.file.read_full_at(&mut buf, offset)?;
                buf.truncate(n);
                Ok(buf)
            }
            Some(s) => {
                if s.pending_end().is_some() {
                    s.settle(&*of.file)?;
                }
                Ok(s.protected_read(&*of.file, offset, size)?)
            }
        }
    }

    pub fn write(&self, fh: u64, offset: u64, data: &[u8]) -> Result<usize> {
        let h = self.handle(fh)?;
        let mut of = h.lock().unwrap();
        if !of.flags.write {
            return Err(VfsError::Io(io::Error::from_raw_os_error(libc::EBADF)));
        }
        let of = &mut *of;
        let offset = if of.flags.append {
            let size = of.file.size()?;
            of.state
                .as_ref()
                .and_then(HandleState::pending_end)
                .map_or(size, |p| p.max(size))
        } else {
            offset
        };
        let n = match &mut of.state {
            None => {
                of.file.write_all_at(data, offset)?;
                data.len()
            }
            Some(s) => s.protected_write(&*of.file, offset, data)?,
        };
        self.bump_generation(of.identity);
        of.generation = self.generation(of.identity);
        Ok(n)
    }

    /// Settle pending writes; reports deferred write errors.
    pub fn flush(&self, fh: u64) -> Result<()> {
        let h = self.handle(fh)?;
        let mut of = h.lock().unwrap();
        let of = &mut *of;
        if let Some(s) = &mut of.state {
            s.settle(&*of.file)?;
            self.bump_generation(of.identity);
        }
        Ok(())
    }

    pub fn fsync(&self, fh: u64) -> Result<()> {
        self.flush(fh)?;
        let h = self.handle(fh)?;
        let of = h.lock().unwrap();
        Ok(of.file.sync()?)
    }

    /// Settle and drop the handle. The id is invalid afterwards, even when
    /// the final flush fails.
    pub fn release(&self, fh: u64) -> Result<()> {
        let h = self
            .handles
            .lock()
            .unwrap()
            .remove(&fh)
            .ok_or(VfsError::BadHandle(fh))?;
        let mut of = h.lock().unwrap();
        let of = &mut *of;
        if let Some(s) = &mut of.state {
            s.settle(&*of.file)?;
            self.bump_generation(of.identity);
        }
        Ok(())
    }

    /// Settle every open handle, e.g. before unmounting.
    pub fn settle_all(&self) -> Result<()> {
        let handles: Vec<Handle> = self.handles.lock().unwrap().values().cloned().collect();
        let mut first_err = None;
        for h in handles {
            let mut of = h.lock().unwrap();
            let of = &mut *of;
            if let Some(s) = &mut of.state {
                if let Err(e) = s.settle(&*of.file) {
                    first_err.get_or_insert(e);
                }
            }
        }
        first_err.map_or(Ok(()), |e| Err(e.into()))
    }

    pub fn open_handles(&self) -> usize {
        self.handles.lock().unwrap().len()
    }

    /// Page-level mapping would bypass the engine, so dlpfs declines it.
    pub fn mmap(&self, fh: u64) -> Result<()> {
        self.handle(fh)?;
        match self.fs_type {
            FsType::Loopback => Ok(()),
            FsType::Dlpfs => Err(VfsError::NotSupported("mmap")),
        }
    }

    pub fn mkdir(&self, path: &Path, mode: u32) -> Result<()> {
        Ok(self.backend.mkdir(&self.real(path, false)?, mode)?)
    }

    pub fn rmdir(&self, path: &Path) -> Result<()> {
        Ok(self.backend.rmdir(&self.real(path, false)?)?)
    }

    pub fn unlink(&self, path: &Path) -> Result<()> {
        Ok(self.backend.unlink(&self.real(path, false)?)?)
    }

    pub fn rename(&self, from: &Path, to: &Path) -> Result<()> {
        let from = self.real(from, false)?;
        let to = self.real(to, false)?;
        Ok(self.backend.rename(&from, &to)?)
    }

    pub fn symlink(&self, target: &Path, link: &Path) -> Result<()> {
        Ok(self.backend.symlink(target, &self.real(link, false)?)?)
    }

    pub fn truncate(&self, path: &Path, len: u64) -> Result<()> {
        let real = self.real(path, true)?;
        let attr = self.backend.lstat(&real)?;
        let identity = (attr.dev, attr.ino);
        self.settle_file(identity)?;
        self.backend.truncate(&real, len)?;
        self.bump_generation(identity);
        Ok(())
    }

    pub fn ftruncate(&self, fh: u64, len: u64) -> Result<()> {
        let identity = self.handle(fh)?.lock().unwrap().identity;
        self.settle_file(identity)?;
        self.handle(fh)?.lock().unwrap().file.set_len(len)?;
        self.bump_generation(identity);
        Ok(())
    }

    pub fn chmod(&self, path: &Path, mode: u32) -> Result<()> {
        Ok(self.backend.chmod(&self.real(path, true)?, mode)?)
    }

    pub fn chown(&self, path: &Path, uid: Option<u32>, gid: Option<u32>) -> Result<()> {
        Ok(self.backend.chown(&self.real(path, false)?, uid, gid)?)
    }

    pub fn utimens(
        &self,
        path: &Path,
        atime: Option<SystemTime>,
        mtime: Option<SystemTime>,
    ) -> Result<()> {
        Ok(self.backend.set_times(&self.real(path, false)?, atime, mtime)?)
    }

    pub fn getxattr(&self, path: &Path, name: &OsStr) -> Result<Option<Vec<u8>>> {
        Ok(self.backend.get_xattr(&self.real(path, true)?, name)?)
    }

    pub fn setxattr(&self, path: &Path, name: &OsStr, value: &[u8]) -> Result<()> {
        Ok(self.backend.set_xattr(&self.real(path, true)?, name, value)?)
    }

    pub fn listxattr(&self, path: &Path) -> Result<Vec<OsString>> {
        Ok(self.backend.list_xattr(&self.real(path, true)?)?)
    }

    pub fn removexattr(&self, path: &Path, name: &OsStr) -> Result<()> {
        Ok(self.backend.remove_xattr(&self.real(path, true)?, name)?)
    }
}

impl<B: Backend> Drop for Vfs<B> {
    fn drop(&mut self) {
        if let Err(e) = self.settle_all() {
            log::error!("settling handles on shutdown failed: {e}");
        }
    }
}
