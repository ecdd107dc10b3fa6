#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::os::unix::fs::{DirBuilderExt, FileExt, OpenOptionsExt, PermissionsExt};
use std::path::{Path, PathBuf};

use dlpfs::datagen::{self, DatasetSpec};
use dlpfs::vfs::{Backend, OpenFlags, Vfs};
use dlpfs::{parse_policy, PolicySpec};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};

pub const EMAIL_RE: &str = r"(?:\w|\.)+@(?:\w|\.|-)+\.\w{2,4}";
pub const AMOUNT_RE: &str = r"\$(\d+\.\d{2})";

fn random_rule<R: Rng>(rng: &mut R) -> Value {
    let ch = *["*", "#", "X"].choose(rng).unwrap();
    match rng.gen_range(0..7) {
        0 => json!({"patterns": [{"type": "re", "spec": EMAIL_RE}],
                    "transformation": {"type": "redact", "char": ch}}),
        1 => json!({"patterns": [{"type": "dict", "spec": ["RareKeyword", "FrequentKeyword"]}],
                    "transformation": {"type": "redact", "char": ch}}),
        2 => json!({"patterns": [{"type": "re", "spec": datagen::ICD_REGEX}],
                    "transformation": {"type": "mask", "domain": "icd10"}}),
        3 => {
            let mut t = json!({"type": "diff_priv", "mechanism": "laplace",
                               "e": *[0.1, 1.0, 5.0].choose(rng).unwrap(), "d": 0.0});
            if rng.gen_bool(0.5) {
                t["clamp"] = json!([0.0, 1000.0]);
            }
            json!({"patterns": [{"type": "re", "spec": AMOUNT_RE}], "transformation": t})
        }
        4 => json!({"patterns": [{"type": "re", "spec": EMAIL_RE}],
                    "transformation": {"type": "mask", "domain": "email"}}),
        5 => json!({"patterns": [{"type": "dict", "spec": ["lorem", "ipsum", "dolor"], "case_sensitive": false}],
                    "transformation": {"type": "generalize", "hierarchy": {"lorem": "L", "*": "W"}}}),
        _ => json!({"patterns": [{"type": "re", "spec": r"\d{3}"}],
                    "transformation": {"type": "redact", "char": ch}}),
    }
}

/// A random valid policy over the generated corpus, with its JSON text.
pub fn random_policy<R: Rng>(rng: &mut R, do_read: bool, do_write: bool) -> (String, PolicySpec) {
    let n = rng.gen_range(1..=3);
    let rules: Vec<Value> = (0..n).map(|_| random_rule(rng)).collect();
    let doc = json!({"do_read": do_read, "do_write": do_write, "rules": rules}).to_string();
    let p = parse_policy(doc.as_bytes()).unwrap_or_else(|e| panic!("{doc}: {e}"));
    (doc, p)
}

/// A generated dataset with boosted hit rates, optionally cut mid-row.
pub fn random_dataset<R: Rng>(rng: &mut R, max_rows: usize) -> Vec<u8> {
    let spec = DatasetSpec {
        rows: rng.gen_range(1..=max_rows),
        seed: rng.gen(),
        p_icd: rng.gen_range(0.0..0.5),
        p_kw1: rng.gen_range(0.0..0.3),
        p_kw2: rng.gen_range(0.0..0.5),
        p_email: rng.gen_range(0.0..0.5),
        header: rng.gen_bool(0.5),
        ..Default::default()
    };
    let mut data = datagen::generate(&spec);
    if rng.gen_bool(0.2) && data.len() > 1 {
        let cut = rng.gen_range(1..data.len());
        data.truncate(cut);
    }
    data
}

/// Filesystem operations on mount-relative paths.
#[derive(Debug, Clone)]
pub enum Op {
    Write { path: String, offset: u64, data: Vec<u8> },
    Append { path: String, data: Vec<u8> },
    Truncate { path: String, len: u64 },
    Mkdir { path: String },
    Rmdir { path: String },
    Unlink { path: String },
    Rename { from: String, to: String },
    Symlink { target: String, link: String },
    Chmod { path: String, mode: u32 },
    Read { path: String },
    ReadDir { path: String },
}

const NAMES: [&str; 8] = ["a", "b", "d", "d/x", "d/y", "e", "e/z", "d/e"];

/// Link targets that stay inside the root from any depth, so a link still
/// cannot escape after being renamed elsewhere.
fn link_target<R: Rng>(rng: &mut R, link: &str) -> String {
    let top = ["a", "b", "d", "nowhere", "d/x", "d/../e"];
    let nested = ["x", "y", "x/../y", "e/../x", "e"];
    if link.contains('/') {
        nested.choose(rng).unwrap().to_string()
    } else {
        top.choose(rng).unwrap().to_string()
    }
}

fn bytes<R: Rng>(rng: &mut R) -> Vec<u8> {
    let n = rng.gen_range(0..40);
    (0..n).map(|_| rng.gen_range(b'a'..=b'z')).collect()
}

pub fn random_op<R: Rng>(rng: &mut R) -> Op {
    let path = NAMES.choose(rng).unwrap().to_string();
    match rng.gen_range(0..14) {
        0..=2 => Op::Write {
            path,
            offset: rng.gen_range(0..50),
            data: bytes(rng),
        },
        3 => Op::Append { path, data: bytes(rng) },
        4 => Op::Truncate {
            path,
            len: rng.gen_range(0..60),
        },
        5 | 6 => Op::Mkdir { path },
        7 => Op::Rmdir { path },
        8 => Op::Unlink { path },
        9 => Op::Rename {
            from: path,
            to: NAMES.choose(rng).unwrap().to_string(),
        },
        10 => Op::Symlink {
            target: link_target(rng, &path),
            link: path,
        },
        11 => Op::Chmod {
            path,
            mode: *[0o600, 0o644, 0o755, 0o700].choose(rng).unwrap(),
        },
        12 => Op::Read { path },
        _ => Op::ReadDir { path },
    }
}

pub fn random_ops<R: Rng>(rng: &mut R, n: usize) -> Vec<Op> {
    (0..n).map(|_| random_op(rng)).collect()
}

pub type OpResult = Result<Vec<u8>, i32>;

fn errno(e: io::Error) -> i32 {
    e.raw_os_error().unwrap_or(-1)
}

fn sorted_names(mut v: Vec<String>) -> Vec<u8> {
    v.sort();
    v.join("\n").into_bytes()
}

/// Execute `op` directly on the host under `root`.
pub fn apply_direct(root: &Path, op: &Op) -> OpResult {
    let p = |s: &str| root.join(s);
    let r: io::Result<Vec<u8>> = (|| {
        match op {
            Op::Write { path, offset, data } => {
                let f = fs::OpenOptions::new()
                    .write(true)
                    .create(true)
                    .truncate(false)
                    .mode(0o644)
                    .open(p(path))?;
                f.write_all_at(data, *offset)?;
            }
            Op::Append { path, data } => {
                let mut f = fs::OpenOptions::new().append(true).open(p(path))?;
                io::Write::write_all(&mut f, data)?;
            }
            Op::Truncate { path, len } => {
                fs::OpenOptions::new().write(true).open(p(path))?.set_len(*len)?;
            }
            Op::Mkdir { path } => fs::DirBuilder::new().mode(0o755).create(p(path))?,
            Op::Rmdir { path } => fs::remove_dir(p(path))?,
            Op::Unlink { path } => fs::remove_file(p(path))?,
            Op::Rename { from, to } => fs::rename(p(from), p(to))?,
            Op::Symlink { target, link } => std::os::unix::fs::symlink(target, p(link))?,
            Op::Chmod { path, mode } => fs::set_permissions(p(path), fs::Permissions::from_mode(*mode))?,
            Op::Read { path } => return fs::read(p(path)),
            Op::ReadDir { path } => {
                let names = fs::read_dir(p(path))?
                    .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
                    .collect::<io::Result<Vec<_>>>()?;
                return Ok(sorted_names(names));
            }
        }
        Ok(Vec::new())
    })();
    r.map_err(errno)
}

fn vfs_read_all<B: Backend>(vfs: &Vfs<B>, fh: u64) -> dlpfs::vfs::Result<Vec<u8>> {
    let mut out = Vec::new();
    loop {
        let chunk = vfs.read(fh, out.len() as u64, 4096)?;
        if chunk.is_empty() {
            return Ok(out);
        }
        out.extend_from_slice(&chunk);
    }
}

/// Execute `op` through the vfs.
pub fn apply_vfs<B: Backend>(vfs: &Vfs<B>, op: &Op) -> OpResult {
    let m = |s: &str| PathBuf::from("/").join(s);
    let with_handle = |fh: u64, f: &dyn Fn(u64) -> dlpfs::vfs::Result<Vec<u8>>| {
        let r = f(fh);
        let released = vfs.release(fh);
        let out = r?;
        released?;
        Ok(out)
    };
    let r: dlpfs::vfs::Result<Vec<u8>> = (|| {
        match op {
            Op::Write { path, offset, data } => {
                let fh = vfs.create(&m(path), OpenFlags::write_only(), 0o644)?;
                with_handle(fh, &|fh| vfs.write(fh, *offset, data).map(|_| Vec::new()))?;
            }
            Op::Append { path, data } => {
                let flags = OpenFlags {
                    append: true,
                    ..OpenFlags::write_only()
                };
                let fh = vfs.open(&m(path), flags)?;
                with_handle(fh, &|fh| vfs.write(fh, 0, data).map(|_| Vec::new()))?;
            }
            Op::Truncate { path, len } => vfs.truncate(&m(path), *len)?,
            Op::Mkdir { path } => vfs.mkdir(&m(path), 0o755)?,
            Op::Rmdir { path } => vfs.rmdir(&m(path))?,
            Op::Unlink { path } => vfs.unlink(&m(path))?,
            Op::Rename { from, to } => vfs.rename(&m(from), &m(to))?,
            Op::Symlink { target, link } => vfs.symlink(Path::new(target), &m(link))?,
            Op::Chmod { path, mode } => vfs.chmod(&m(path), *mode)?,
            Op::Read { path } => {
                let fh = vfs.open(&m(path), OpenFlags::read_only())?;
                return with_handle(fh, &|fh| vfs_read_all(vfs, fh));
            }
            Op::ReadDir { path } => {
                let names = vfs
                    .readdir(&m(path))?
                    .into_iter()
                    .map(|e| e.name.to_string_lossy().into_owned())
                    .collect();
                return Ok(sorted_names(names));
            }
        }
        Ok(Vec::new())
    })();
    r.map_err(|e| e.errno())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    File { perm: u32, data: Vec<u8> },
    Dir { perm: u32 },
    Link { target: PathBuf },
}

/// Everything under `root` that the operations can affect.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Node> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Node>) {
        for e in fs::read_dir(dir).unwrap() {
            let e = e.unwrap();
            let path = e.path();
            let rel = path.strip_prefix(root).unwrap().to_path_buf();
            let md = fs::symlink_metadata(&path).unwrap();
            let perm = md.permissions().mode() & 0o7777;
            if md.file_type().is_symlink() {
                out.insert(rel, Node::Link { target: fs::read_link(&path).unwrap() });
            } else if md.is_dir() {
                out.insert(rel, Node::Dir { perm });
                walk(root, &path, out);
            } else {
                out.insert(rel, Node::File { perm, data: fs::read(&path).unwrap() });
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Run `ops` through a loopback vfs over `via` and directly over `direct`;
/// returns a description of the first divergence.
pub fn compare_sequence<B: Backend>(vfs: &Vfs<B>, via: &Path, direct: &Path, ops: &[Op]) -> Result<(), String> {
    for (i, op) in ops.iter().enumerate() {
        let a = apply_vfs(vfs, op);
        let b = apply_direct(direct, op);
        if a != b {
            return Err(format!("op {i} {op:?}: vfs {a:?} direct {b:?}"));
        }
    }
    let (sa, sb) = (snapshot(via), snapshot(direct));
    if sa != sb {
        return Err(format!("final state differs:\n vfs {sa:?}\n direct {sb:?}"));
    }
    Ok(())
}
