mod common;

use std::ffi::{OsStr, OsString};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::SystemTime;

use dlpfs::vfs::{BackingFile, Backend, DirEntry, FileAttr, FsType, MountConfig, OpenFlags, OsBackend, Vfs};
use dlpfs::PolicySpec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Passes through to the host filesystem, remembering every path it is given.
#[derive(Default)]
struct Recording {
    seen: Mutex<Vec<PathBuf>>,
}

impl Recording {
    fn note(&self, p: &Path) {
        self.seen.lock().unwrap().push(p.to_path_buf());
    }

    fn outside(&self, root: &Path) -> Vec<PathBuf> {
        self.seen.lock().unwrap().iter().filter(|p| !p.starts_with(root)).cloned().collect()
    }
}

impl Backend for Recording {
    fn lstat(&self, path: &Path) -> io::Result<FileAttr> {
        self.note(path);
        OsBackend.lstat(path)
    }
    fn read_link(&self, path: &Path) -> io::Result<PathBuf> {
        self.note(path);
        OsBackend.read_link(path)
    }
    fn read_dir(&self, path: &Path) -> io::Result<Vec<DirEntry>> {
        self.note(path);
        OsBackend.read_dir(path)
    }
    fn open(&self, path: &Path, flags: OpenFlags, mode: u32) -> io::Result<Box<dyn BackingFile>> {
        self.note(path);
        OsBackend.open(path, flags, mode)
    }
    fn mkdir(&self, path: &Path, mode: u32) -> io::Result<()> {
        self.note(path);
        OsBackend.mkdir(path, mode)
    }
    fn rmdir(&self, path: &Path) -> io::Result<()> {
        self.note(path);
        OsBackend.rmdir(path)
    }
    fn unlink(&self, path: &Path) -> io::Result<()> {
        self.note(path);
        OsBackend.unlink(path)
    }
    fn rename(&self, from: &Path, to: &Path) -> io::Result<()> {
        self.note(from);
        self.note(to);
        OsBackend.rename(from, to)
    }
    fn truncate(&self, path: &Path, len: u64) -> io::Result<()> {
        self.note(path);
        OsBackend.truncate(path, len)
    }
    fn symlink(&self, target: &Path, link: &Path) -> io::Result<()> {
        self.note(link);
        OsBackend.symlink(target, link)
    }
    fn chmod(&self, path: &Path, mode: u32) -> io::Result<()> {
        self.note(path);
        OsBackend.chmod(path, mode)
    }
    fn chown(&self, path: &Path, uid: Option<u32>, gid: Option<u32>) -> io::Result<()> {
        self.note(path);
        OsBackend.chown(path, uid, gid)
    }
    fn set_times(&self, path: &Path, atime: Option<SystemTime>, mtime: Option<SystemTime>) -> io::Result<()> {
        self.note(path);
        OsBackend.set_times(path, atime, mtime)
    }
    fn get_xattr(&self, path: &Path, name: &OsStr) -> io::Result<Option<Vec<u8>>> {
        self.note(path);
        OsBackend.get_xattr(path, name)
    }
    fn set_xattr(&self, path: &Path, name: &OsStr, value: &[u8]) -> io::Result<()> {
        self.note(path);
        OsBackend.set_xattr(path, name, value)
    }
    fn list_xattr(&self, path: &Path) -> io::Result<Vec<OsString>> {
        self.note(path);
        OsBackend.list_xattr(path)
    }
    fn remove_xattr(&self, path: &Path, name: &OsStr) -> io::Result<()> {
        self.note(path);
        OsBackend.remove_xattr(path, name)
    }
}

fn recording_vfs(root: &Path) -> Vfs<Recording> {
    let cfg = MountConfig::new(FsType::Loopback, root, root);
    Vfs::with_backend(&cfg, PolicySpec::empty(), Recording::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loopback_tracks_the_host(seed in any::<u64>(), n in 1usize..60) {
        let via = tempfile::tempdir().unwrap();
        let direct = tempfile::tempdir().unwrap();
        let vfs = recording_vfs(via.path());
        let ops = common::random_ops(&mut ChaCha8Rng::seed_from_u64(seed), n);
        if let Err(e) = common::compare_sequence(&vfs, via.path(), direct.path(), &ops) {
            return Err(TestCaseError::fail(e));
        }
        prop_assert!(vfs.backend().outside(via.path()).is_empty());
    }
}

#[test]
fn hostile_links_stay_inside_the_root() {
    let outer = tempfile::tempdir().unwrap();
    let root = outer.path().join("root");
    std::fs::create_dir(&root).unwrap();
    let secret = outer.path().join("secret");
    std::fs::write(&secret, b"keep").unwrap();
    std::os::unix::fs::symlink(&secret, root.join("abs")).unwrap();
    std::os::unix::fs::symlink("../secret", root.join("rel")).unwrap();
    std::os::unix::fs::symlink("../../../../..", root.join("up")).unwrap();

    let vfs = recording_vfs(&root);
    for p in ["/abs", "/rel", "/up/secret", "/../secret"] {
        let p = Path::new(p);
        assert!(vfs.open(p, OpenFlags::read_only()).is_err(), "{p:?}");
        assert!(vfs.create(p, OpenFlags::write_only(), 0o644).is_err(), "{p:?}");
        assert!(vfs.truncate(p, 0).is_err(), "{p:?}");
    }
    // The links themselves are visible and readable as links.
    assert_eq!(vfs.readlink(Path::new("/rel")).unwrap(), PathBuf::from("../secret"));
    assert_eq!(std::fs::read(&secret).unwrap(), b"keep");
    assert_eq!(vfs.backend().outside(&root), Vec::<PathBuf>::new());
}

#[test]
fn links_inside_the_root_resolve() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("d")).unwrap();
    std::fs::write(dir.path().join("d/f"), b"hello").unwrap();
    std::os::unix::fs::symlink(dir.path().join("d"), dir.path().join("abs")).unwrap();
    std::os::unix::fs::symlink("d/../d/f", dir.path().join("rel")).unwrap();
    let vfs = recording_vfs(dir.path());
    for p in ["/abs/f", "/rel"] {
        let fh = vfs.open(Path::new(p), OpenFlags::read_only()).unwrap();
        assert_eq!(vfs.read(fh, 0, 100).unwrap(), b"hello");
        vfs.release(fh).unwrap();
    }
}

