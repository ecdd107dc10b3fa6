//! Kernel binding: serves a [`Vfs`] through FUSE. Each callback maps inode
//! numbers to mount paths and forwards to the matching vfs operation.

use std::collections::HashMap;
use std::ffi::OsStr;
use std::io;
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use fuser::{
    FileType, Filesystem, MountOption, ReplyAttr, ReplyCreate, ReplyData, ReplyDirectory,
    ReplyEmpty, ReplyEntry, ReplyOpen, ReplyWrite, ReplyXattr, Request, TimeOrNow,
};
use thiserror::Error;

use crate::vfs::{FileAttr, FileKind, FsType, MountConfig, OpenFlags, Vfs, VfsError};

const TTL: Duration = Duration::from_secs(1);
const ROOT_INO: u64 = fuser::FUSE_ROOT_ID;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdapterOptions {
    /// Serve on the calling thread until unmounted.
    pub foreground: bool,
    pub allow_other: bool,
    /// Refuse concurrent kernel requests (debugging aid).
    pub single_threaded: bool,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("user-space filesystems unavailable: {0}")]
    MountUnavailable(io::Error),
    #[error("mountpoint busy: {0}")]
    MountBusy(io::Error),
    #[error(transparent)]
    Vfs(#[from] VfsError),
}

fn classify(e: io::Error) -> AdapterError {
    match e.raw_os_error() {
        Some(libc::EBUSY) => AdapterError::MountBusy(e),
        _ => AdapterError::MountUnavailable(e),
    }
}

/// Bidirectional inode/path table. Inodes are assigned on first lookup and
/// follow renames.
#[derive(Debug)]
struct Inodes {
    paths: HashMap<u64, PathBuf>,
    inos: HashMap<PathBuf, u64>,
    next: u64,
}

impl Inodes {
    fn new() -> Self {
        let mut t = Inodes {
            paths: HashMap::new(),
            inos: HashMap::new(),
            next: ROOT_INO + 1,
        };
        t.paths.insert(ROOT_INO, PathBuf::from("/"));
        t.inos.insert(PathBuf::from("/"), ROOT_INO);
        t
    }

    fn path(&self, ino: u64) -> Option<PathBuf> {
        self.paths.get(&ino).cloned()
    }

    fn intern(&mut self, path: &Path) -> u64 {
        if let Some(&i) = self.inos.get(path) {
            return i;
        }
        let i = self.next;
        self.next += 1;
        self.paths.insert(i, path.to_path_buf());
        self.inos.insert(path.to_path_buf(), i);
        i
    }

    fn remove(&mut self, path: &Path) {
        if let Some(i) = self.inos.remove(path) {
            self.paths.remove(&i);
        }
    }

    fn rename(&mut self, from: &Path, to: &Path) {
        self.remove(to);
        let moved: Vec<(PathBuf, u64)> = self
            .inos
            .iter()
            .filter(|(p, _)| p.starts_with(from))
            .map(|(p, &i)| (p.clone(), i))
            .collect();
        for (old, i) in moved {
            let new = to.join(old.strip_prefix(from).expect("filtered by prefix"));
            self.inos.remove(&old);
            self.inos.insert(new.clone(), i);
            self.paths.insert(i, new);
        }
    }
}

/// The FUSE filesystem.
pub struct Adapter {
    vfs: Arc<Vfs>,
    inodes: Inodes,
}

fn file_type(k: FileKind) -> FileType {
    match k {
        FileKind::File => FileType::RegularFile,
        FileKind::Directory => FileType::Directory,
        FileKind::Symlink => FileType::Symlink,
        FileKind::Other => FileType::NamedPipe,
    }
}

fn fuse_attr(ino: u64, a: &FileAttr) -> fuser::FileAttr {
    fuser::FileAttr {
        ino,
        size: a.size,
        blocks: a.blocks,
        atime: a.atime,
        mtime: a.mtime,
        ctime: a.ctime,
        crtime: UNIX_EPOCH,
        kind: file_type(a.kind),
        perm: a.perm,
        nlink: a.nlink,
        uid: a.uid,
        gid: a.gid,
        rdev: a.rdev,
        blksize: a.blksize,
        flags: 0,
    }
}

fn time(t: TimeOrNow) -> SystemTime {
    match t {
        TimeOrNow::SpecificTime(t) => t,
        TimeOrNow::Now => SystemTime::now(),
    }
}

impl Adapter {
    pub fn new(vfs: Arc<Vfs>) -> Self {
        Adapter {
            vfs,
            inodes: Inodes::new(),
        }
    }

    fn child(&self, parent: u64, name: &OsStr) -> Result<PathBuf, i32> {
        Ok(self.inodes.path(parent).ok_or(libc::ENOENT)?.join(name))
    }

    fn path(&self, ino: u64) -> Result<PathBuf, i32> {
        self.inodes.path(ino).ok_or(libc::ENOENT)
    }

    fn entry(&mut self, path: &Path, reply: ReplyEntry) {
        match self.vfs.getattr(path) {
            Ok(a) => {
                let ino = self.inodes.intern(path);
                reply.entry(&TTL, &fuse_attr(ino, &a), 0);
            }
            Err(e) => reply.error(e.errno()),
        }
    }

    fn open_reply_flags(&self) -> u32 {
        // Bypass the page cache so every read and write reaches the engine.
        match self.vfs.fs_type() {
            FsType::Dlpfs => fuser::consts::FOPEN_DIRECT_IO,
            FsType::Loopback => 0,
        }
    }
}

macro_rules! tri {
    ($reply:ident, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(errno) => return $reply.error(errno),
        }
    };
}

fn errno(e: VfsError) -> i32 {
    e.errno()
}

impl Filesystem for Adapter {
    fn destroy(&mut self) {
        if let Err(e) = self.vfs.settle_all() {
            log::error!("settling on unmount: {e}");
        }
    }

    fn lookup(&mut self, _req: &Request<'_>, parent: u64, name: &OsStr, reply: ReplyEntry) {
        let path = tri!(reply, self.child(parent, name));
        self.entry(&path, reply);
    }

    fn getattr(&mut self, _req: &Request<'_>, ino: u64, fh: Option<u64>, reply: ReplyAttr) {
        let attr = match fh {
            Some(fh) => self.vfs.fgetattr(fh),
            None => {
                let path = tri!(reply, self.path(ino));
                self.vfs.getattr(&path)
            }
        };
        match attr {
            Ok(a) => reply.attr(&TTL, &fuse_attr(ino, &a)),
            Err(e) => reply.error(e.errno()),
        }
    }

    fn setattr(
        &mut self,
        _req: &Request<'_>,
        ino: u64,
        mode: Option<u32>,
        uid: Option<u32>,
        gid: Option<u32>,
        size: Option<u64>,
        atime: Option<TimeOrNow>,
        mtime: Option<TimeOrNow>,
        _ctime: Option<SystemTime>,
        fh: Option<u64>,
        _crtime: Option<SystemTime>,
        _chgtime: Option<SystemTime>,
        _bkuptime: Option<SystemTime>,
        _flags: Option<u32>,
        reply: ReplyAttr,
    ) {
        let path = tri!(reply, self.path(ino));
        if let Some(m) = mode {
            tri!(reply, self.vfs.chmod(&path, m).map_err(errno));
        }
        if uid.is_some() || gid.is_some() {
            tri!(reply, self.vfs.chown(&path, uid, gid).map_err(errno));
        }
        if let Some(len) = size {
            let r = match fh {
                Some(fh) => self.vfs.ftruncate(fh, len),
                None => self.vfs.truncate(&path, len),
            };
            tri!(reply, r.map_err(errno));
        }
        if atime.is_some() || mtime.is_some() {
            let r = self.vfs.utimens(&path, atime.map(time), mtime.map(time));
            tri!(reply, r.map_err(errno));
        }
        let a = tri!(reply, self.vfs.getattr(&path).map_err(errno));
        reply.attr(&TTL, &fuse_attr(ino, &a));
    }

    fn readlink(&mut self, _req: &Request<'_>, ino: u64, reply: ReplyData) {
        let path = tri!(reply, self.path(ino));
        let target = tri!(reply, self.vfs.readlink(&path).map_err(errno));
        reply.data(target.as_os_str().as_bytes());
    }

    fn mkdir(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        name: &OsStr,
        mode: u32,
        umask: u32,
        reply: ReplyEntry,
    ) {
        let path = tri!(reply, self.child(parent, name));
        tri!(reply, self.vfs.mkdir(&path, mode & !umask).map_err(errno));
        self.entry(&path, reply);
    }

    fn unlink(&mut self, _req: &Request<'_>, parent: u64, name: &OsStr, reply: ReplyEmpty) {
        let path = tri!(reply, self.child(parent, name));
        tri!(reply, self.vfs.unlink(&path).map_err(errno));
        self.inodes.remove(&path);
        reply.ok();
    }

    fn rmdir(&mut self, _req: &Request<'_>, parent: u64, name: &OsStr, reply: ReplyEmpty) {
        let path = tri!(reply, self.child(parent, name));
        tri!(reply, self.vfs.rmdir(&path).map_err(errno));
        self.inodes.remove(&path);
        reply.ok();
    }

    fn symlink(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        link_name: &OsStr,
        target: &Path,
        reply: ReplyEntry,
    ) {
        let path = tri!(reply, self.child(parent, link_name));
        tri!(reply, self.vfs.symlink(target, &path).map_err(errno));
        self.entry(&path, reply);
    }

    fn rename(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        name: &OsStr,
        newparent: u64,
        newname: &OsStr,
        flags: u32,
        reply: ReplyEmpty,
    ) {
        if flags != 0 {
            return reply.error(libc::EINVAL);
        }
        let from = tri!(reply, self.child(parent, name));
        let to = tri!(reply, self.child(newparent, newname));
        tri!(reply, self.vfs.rename(&from, &to).map_err(errno));
        self.inodes.rename(&from, &to);
        reply.ok();
    }

    fn open(&mut self, _req: &Request<'_>, ino: u64, flags: i32, reply: ReplyOpen) {
        let path = tri!(reply, self.path(ino));
        let fh = tri!(reply, self.vfs.open(&path, OpenFlags::from_libc(flags)).map_err(errno));
        reply.opened(fh, self.open_reply_flags());
    }

    fn read(
        &mut self,
        _req: &Request<'_>,
        _ino: u64,
        fh: u64,
        offset: i64,
        size: u32,
        _flags: i32,
        _lock_owner: Option<u64>,
        reply: ReplyData,
    ) {
        let offset = tri!(reply, u64::try_from(offset).map_err(|_| libc::EINVAL));
        let data = tri!(reply, self.vfs.read(fh, offset, size as usize).map_err(errno));
        reply.data(&data);
    }

    fn write(
        &mut self,
        _req: &Request<'_>,
        _ino: u64,
        fh: u64,
        offset: i64,
        data: &[u8],
        _write_flags: u32,
        _flags: i32,
        _lock_owner: Option<u64>,
        reply: ReplyWrite,
    ) {
        let offset = tri!(reply, u64::try_from(offset).map_err(|_| libc::EINVAL));
        let n = tri!(reply, self.vfs.write(fh, offset, data).map_err(errno));
        reply.written(n as u32);
    }

    fn flush(&mut self, _req: &Request<'_>, _ino: u64, fh: u64, _lock_owner: u64, reply: ReplyEmpty) {
        tri!(reply, self.vfs.flush(fh).map_err(errno));
        reply.ok();
    }

    fn release(
        &mut self,
        _req: &Request<'_>,
        _ino: u64,
        fh: u64,
        _flags: i32,
        _lock_owner: Option<u64>,
        _flush: bool,
        reply: ReplyEmpty,
    ) {
        tri!(reply, self.vfs.release(fh).map_err(errno));
        reply.ok();
    }

    fn fsync(&mut self, _req: &Request<'_>, _ino: u64, fh: u64, _datasync: bool, reply: ReplyEmpty) {
        tri!(reply, self.vfs.fsync(fh).map_err(errno));
        reply.ok();
    }

    fn readdir(
        &mut self,
        _req: &Request<'_>,
        ino: u64,
        _fh: u64,
        offset: i64,
        mut reply: ReplyDirectory,
    ) {
        let path = tri!(reply, self.path(ino));
        let entries = tri!(reply, self.vfs.readdir(&path).map_err(errno));
        let parent = path.parent().map_or(ROOT_INO, |p| self.inodes.intern(p));
        let mut all = vec![
            (ino, FileType::Directory, OsStr::new(".").to_os_string()),
            (parent, FileType::Directory, OsStr::new("..").to_os_string()),
        ];
        for e in entries {
            let child = self.inodes.intern(&path.join(&e.name));
            all.push((child, file_type(e.kind), e.name));
        }
        for (i, (ino, kind, name)) in all.into_iter().enumerate().skip(offset.max(0) as usize) {
            if reply.add(ino, (i + 1) as i64, kind, name) {
                break;
            }
        }
        reply.ok();
    }

    fn create(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        name: &OsStr,
        mode: u32,
        umask: u32,
        flags: i32,
        reply: ReplyCreate,
    ) {
        let path = tri!(reply, self.child(parent, name));
        let fh = tri!(
            reply,
            self.vfs
                .create(&path, OpenFlags::from_libc(flags), mode & !umask)
                .map_err(errno)
        );
        match self.vfs.fgetattr(fh) {
            Ok(a) => {
                let ino = self.inodes.intern(&path);
                reply.created(&TTL, &fuse_attr(ino, &a), 0, fh, self.open_reply_flags());
            }
            Err(e) => {
                let _ = self.vfs.release(fh);
                reply.error(e.errno());
            }
        }
    }

    fn setxattr(
        &mut self,
        _req: &Request<'_>,
        ino: u64,
        name: &OsStr,
        value: &[u8],
        _flags: i32,
        _position: u32,
        reply: ReplyEmpty,
    ) {
        let path = tri!(reply, self.path(ino));
        tri!(reply, self.vfs.setxattr(&path, name, value).map_err(errno));
        reply.ok();
    }

    fn getxattr(&mut self, _req: &Request<'_>, ino: u64, name: &OsStr, size: u32, reply: ReplyXattr) {
        let path = tri!(reply, self.path(ino));
        let value = tri!(reply, self.vfs.getxattr(&path, name).map_err(errno));
        let value = tri!(reply, value.ok_or(libc::ENODATA));
        xattr_reply(reply, &value, size);
    }

    fn listxattr(&mut self, _req: &Request<'_>, ino: u64, size: u32, reply: ReplyXattr) {
        let path = tri!(reply, self.path(ino));
        let names = tri!(reply, self.vfs.listxattr(&path).map_err(errno));
        let mut buf = Vec::new();
        for n in names {
            buf.extend_from_slice(n.as_bytes());
            buf.push(0);
        }
        xattr_reply(reply, &buf, size);
    }

    fn removexattr(&mut self, _req: &Request<'_>, ino: u64, name: &OsStr, reply: ReplyEmpty) {
        let path = tri!(reply, self.path(ino));
        tri!(reply, self.vfs.removexattr(&path, name).map_err(errno));
        reply.ok();
    }
}

fn xattr_reply(reply: ReplyXattr, value: &[u8], size: u32) {
    if size == 0 {
        reply.size(value.len() as u32);
    } else if value.len() > size as usize {
        reply.error(libc::ERANGE);
    } else {
        reply.data(value);
    }
}

/// A live mount. Dropping it settles every handle and unmounts.
pub struct MountSession {
    vfs: Arc<Vfs>,
    session: Option<fuser::BackgroundSession>,
}

impl MountSession {
    pub fn vfs(&self) -> &Arc<Vfs> {
        &self.vfs
    }

    /// True once the kernel side has gone away (e.g. unmounted externally).
    pub fn is_finished(&self) -> bool {
        self.session.as_ref().map_or(true, |s| s.guard.is_finished())
    }

    pub fn unmount(mut self) -> Result<(), VfsError> {
        self.detach()
    }

    fn detach(&mut self) -> Result<(), VfsError> {
        let settled = self.vfs.settle_all();
        if let Some(s) = self.session.take() {
            s.join();
        }
        settled
    }
}

impl Drop for MountSession {
    fn drop(&mut self) {
        if let Err(e) = self.detach() {
            log::error!("settling on unmount: {e}");
        }
    }
}

fn mount_options(cfg: &MountConfig, opts: &AdapterOptions) -> Vec<MountOption> {
    let mut o = vec![
        MountOption::FSName(cfg.root.display().to_string()),
        MountOption::Subtype(
            match cfg.fs_type {
                FsType::Dlpfs => "dlpfs",
                FsType::Loopback => "loopback",
            }
            .into(),
        ),
        MountOption::DefaultPermissions,
    ];
    if opts.allow_other {
        o.push(MountOption::AllowOther);
    }
    o
}

/// Mount `cfg` and serve it. In the foreground this blocks until the
/// filesystem is unmounted and returns `None`; otherwise requests are served
/// on a background thread owned by the returned session.
pub fn mount(cfg: &MountConfig, opts: AdapterOptions) -> Result<Option<MountSession>, AdapterError> {
    cfg.validate()?;
    let vfs = Arc::new(Vfs::new(cfg)?);
    if opts.single_threaded {
        // The session loop dispatches one request at a time already.
        log::debug!("serving requests on a single thread");
    }
    let options = mount_options(cfg, &opts);
    let fs = Adapter::new(Arc::clone(&vfs));
    if opts.foreground {
        fuser::mount2(fs, &cfg.mountpoint, &options).map_err(classify)?;
        vfs.settle_all()?;
        return Ok(None);
    }
    let session = fuser::spawn_mount2(fs, &cfg.mountpoint, &options).map_err(classify)?;
    Ok(Some(MountSession {
        vfs,
        session: Some(session),
    }))
}

/// Whether this process can mount user-space filesystems at all.
pub fn fuse_available() -> bool {
    std::fs::OpenOptions::new()
        .read(true)
        .write(true)
        .open("/dev/fuse")
        .is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inode_table_follows_renames() {
        let mut t = Inodes::new();
        let a = t.intern(Path::new("/d"));
        let b = t.intern(Path::new("/d/f"));
        assert_eq!(t.intern(Path::new("/d")), a);
        t.rename(Path::new("/d"), Path::new("/e"));
        assert_eq!(t.path(a).unwrap(), Path::new("/e"));
        assert_eq!(t.path(b).unwrap(), Path::new("/e/f"));
        assert_eq!(t.path(ROOT_INO).unwrap(), Path::new("/"));
        t.remove(Path::new("/e/f"));
        assert!(t.path(b).is_none());
    }

    #[test]
    fn busy_is_classified() {
        let e = classify(io::Error::from_raw_os_error(libc::EBUSY));
        assert!(matches!(e, AdapterError::MountBusy(_)));
        let e = classify(io::Error::from_raw_os_error(libc::ENODEV));
        assert!(matches!(e, AdapterError::MountUnavailable(_)));
    }
}
