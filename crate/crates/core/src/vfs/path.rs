//! Mapping mount-relative paths onto the backing root without ever leaving it.

use std::collections::VecDeque;
use std::ffi::OsString;
use std::io;
use std::path::{Component, Path, PathBuf};

use super::backend::{Backend, FileKind};
use super::VfsError;

/// Symlink expansions allowed during one resolution, as in Linux.
pub const MAX_SYMLINKS: usize = 40;

enum Comp {
    Parent,
    Name(OsString),
}

fn push_components(dst: &mut VecDeque<Comp>, path: &Path) {
    let mut comps: Vec<Comp> = Vec::new();
    for c in path.components() {
        match c {
            Component::Normal(n) => comps.push(Comp::Name(n.to_os_string())),
            Component::ParentDir => comps.push(Comp::Parent),
            Component::CurDir | Component::RootDir | Component::Prefix(_) => {}
        }
    }
    for c in comps.into_iter().rev() {
        dst.push_front(c);
    }
}

/// Lexically normalise a mount path. `..` above the root is an escape.
pub fn normalize(path: &Path) -> Result<Vec<OsString>, VfsError> {
    let mut out = Vec::new();
    for c in path.components() {
        match c {
            Component::Normal(n) => out.push(n.to_os_string()),
            Component::ParentDir => {
                if out.pop().is_none() {
                    return Err(VfsError::PathEscape(path.to_path_buf()));
                }
            }
            Component::CurDir | Component::RootDir | Component::Prefix(_) => {}
        }
    }
    Ok(out)
}

fn dangling() -> VfsError {
    VfsError::Io(io::Error::from_raw_os_error(libc::ENOENT))
}

/// Resolve `path` to a backing path under `root`. Symlinks are expanded
/// inside the root only; a link whose target lies outside behaves as dangling.
/// With `follow_final == false` the last component is left unexpanded.
pub fn resolve<B: Backend + ?Sized>(
    backend: &B,
    root: &Path,
    path: &Path,
    follow_final: bool,
) -> Result<PathBuf, VfsError> {
    let mut pending: VecDeque<Comp> = normalize(path)?.into_iter().map(Comp::Name).collect();
    let mut resolved: Vec<OsString> = Vec::new();
    let mut links = 0;
    while let Some(c) = pending.pop_front() {
        let name = match c {
            Comp::Parent => {
                if resolved.pop().is_none() {
                    return Err(dangling());
                }
                continue;
            }
            Comp::Name(n) => n,
        };
        if pending.is_empty() && !follow_final {
            resolved.push(name);
            break;
        }
        let mut candidate = root.to_path_buf();
        candidate.extend(&resolved);
        candidate.push(&name);
        match backend.lstat(&candidate) {
            Ok(attr) if attr.kind == FileKind::Symlink => {
                links += 1;
                if links > MAX_SYMLINKS {
                    return Err(VfsError::Io(io::Error::from_raw_os_error(libc::ELOOP)));
                }
                let target = backend.read_link(&candidate)?;
                if target.is_absolute() {
                    let inside = target.strip_prefix(root).map_err(|_| dangling())?;
                    resolved.clear();
                    push_components(&mut pending, inside);
                } else {
                    push_components(&mut pending, &target);
                }
            }
            Ok(attr) if attr.kind != FileKind::Directory && !pending.is_empty() => {
                return Err(VfsError::Io(io::Error::from_raw_os_error(libc::ENOTDIR)));
            }
            Ok(_) => resolved.push(name),
            // Only the last component may be missing.
            Err(e) if e.kind() == io::ErrorKind::NotFound && pending.is_empty() => resolved.push(name),
            Err(e) => return Err(VfsError::Io(e)),
        }
    }
    let mut out = root.to_path_buf();
    out.extend(&resolved);
    Ok(out)
}
