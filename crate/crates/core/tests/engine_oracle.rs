mod common;

use std::path::Path;

use dlpfs::datagen::{self, DatasetSpec};
use dlpfs::engine::scrub;
use dlpfs::vfs::{FsType, MountConfig, OpenFlags, OsBackend, Vfs};
use dlpfs::{parse_policy, PolicySpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::bytes::{Captures, Regex};
use serde_json::json;

fn redact_policy(re: &str, ch: &str, do_read: bool, do_write: bool) -> PolicySpec {
    let doc = json!({"do_read": do_read, "do_write": do_write, "rules": [
        {"patterns": [{"type": "re", "spec": re}], "transformation": {"type": "redact", "char": ch}}]});
    parse_policy(doc.to_string().as_bytes()).unwrap()
}

fn replace_oracle(re: &str, ch: u8, data: &[u8]) -> Vec<u8> {
    Regex::new(re)
        .unwrap()
        .replace_all(data, |c: &Captures| vec![ch; c[0].len()])
        .into_owned()
}

fn corpus(rows: usize, seed: u64) -> Vec<u8> {
    datagen::generate(&DatasetSpec::with_rows(rows, seed))
}

fn vfs(root: &Path, policy: PolicySpec, guard: Option<usize>, seed: u64) -> Vfs {
    let mut cfg = MountConfig::new(FsType::Dlpfs, root, root);
    cfg.guard = guard;
    cfg.seed = Some(seed);
    Vfs::with_backend(&cfg, policy, OsBackend).unwrap()
}

fn read_all(v: &Vfs, path: &str, chunk: usize) -> Vec<u8> {
    let fh = v.open(Path::new(path), OpenFlags::read_only()).unwrap();
    let mut out = Vec::new();
    loop {
        let got = v.read(fh, out.len() as u64, chunk).unwrap();
        if got.is_empty() {
            break;
        }
        out.extend_from_slice(&got);
    }
    v.release(fh).unwrap();
    out
}

#[test]
fn scrub_redaction_equals_regex_replacement() {
    let data = corpus(2000, 11);
    for (re, ch) in [(common::EMAIL_RE, b'*'), (r"\d{3}", b'#'), (datagen::ICD_REGEX, b'X')] {
        let p = redact_policy(re, &(ch as char).to_string(), true, true);
        assert_eq!(scrub(&data, &p, 0), replace_oracle(re, ch, &data), "{re}");
    }
}

#[test]
fn small_reads_through_the_filesystem_equal_regex_replacement() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(500, 12);
    std::fs::write(dir.path().join("d.csv"), &data).unwrap();
    let v = vfs(dir.path(), redact_policy(common::EMAIL_RE, "*", true, false), None, 1);
    for chunk in [1, 7, 100, 4096] {
        assert_eq!(read_all(&v, "/d.csv", chunk), replace_oracle(common::EMAIL_RE, b'*', &data));
    }
}

#[test]
fn disabled_directions_pass_bytes_through() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(300, 13);
    std::fs::write(dir.path().join("in.csv"), &data).unwrap();

    let v = vfs(dir.path(), redact_policy(common::EMAIL_RE, "*", false, true), None, 2);
    assert_eq!(read_all(&v, "/in.csv", 1000), data);

    let v = vfs(dir.path(), redact_policy(common::EMAIL_RE, "*", true, false), None, 2);
    let fh = v.create(Path::new("/out.csv"), OpenFlags::write_only(), 0o644).unwrap();
    v.write(fh, 0, &data).unwrap();
    v.release(fh).unwrap();
    assert_eq!(std::fs::read(dir.path().join("out.csv")).unwrap(), data);
}

#[test]
fn rereading_a_handle_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(400, 14);
    std::fs::write(dir.path().join("d.csv"), &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, p) = common::random_policy(&mut rng, true, false);
    let v = vfs(dir.path(), p, None, 5);
    let fh = v.open(Path::new("/d.csv"), OpenFlags::read_only()).unwrap();
    let first = v.read(fh, 100, 5000).unwrap();
    let _ = v.read(fh, 20_000, 300).unwrap();
    assert_eq!(v.read(fh, 100, 5000).unwrap(), first);
    v.release(fh).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_access_reads_match_scrub(
        seed in any::<u64>(),
        extra in 0usize..64,
        reads in prop::collection::vec((0.0f64..1.1, 1usize..3000), 1..30),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (doc, policy) = common::random_policy(&mut rng, true, false);
        let data = common::random_dataset(&mut rng, 120);
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.csv"), &data).unwrap();
        let guard = policy.max_pattern_extent() + extra;
        let expect = scrub(&data, &policy, seed);
        let v = vfs(dir.path(), policy, Some(guard), seed);
        let fh = v.open(Path::new("/f.csv"), OpenFlags::read_only()).unwrap();
        for (frac, size) in reads {
            let off = ((data.len() as f64) * frac) as usize;
            let got = v.read(fh, off as u64, size).unwrap();
            let lo = off.min(expect.len());
            let hi = (off + size).min(expect.len());
            prop_assert_eq!(got, expect[lo..hi].to_vec(), "offset {} size {} policy {}", off, size, doc);
        }
        v.release(fh).unwrap();
    }

    #[test]
    fn sequential_writes_store_scrub(seed in any::<u64>(), cuts in prop::collection::vec(0.0f64..1.0, 0..25)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (doc, policy) = common::random_policy(&mut rng, false, true);
        let data = common::random_dataset(&mut rng, 120);
        let mut at: Vec<usize> = cuts.iter().map(|f| (f * data.len() as f64) as usize).collect();
        at.extend([0, data.len()]);
        at.sort_unstable();
        at.dedup();
        let dir = tempfile::tempdir().unwrap();
        let expect = scrub(&data, &policy, seed);
        let v = vfs(dir.path(), policy, None, seed);
        let fh = v.create(Path::new("/w.csv"), OpenFlags::write_only(), 0o644).unwrap();
        for w in at.windows(2) {
            prop_assert_eq!(v.write(fh, w[0] as u64, &data[w[0]..w[1]]).unwrap(), w[1] - w[0]);
        }
        v.release(fh).unwrap();
        let stored = std::fs::read(dir.path().join("w.csv")).unwrap();
        prop_assert!(stored == expect, "policy {}", doc);
    }

    #[test]
    fn loopback_is_identity(data in prop::collection::vec(any::<u8>(), 0..5000), chunk in 1usize..700) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MountConfig::new(FsType::Loopback, dir.path(), dir.path());
        let v = Vfs::with_backend(&cfg, PolicySpec::empty(), OsBackend).unwrap();
        let fh = v.create(Path::new("/x"), OpenFlags::read_write(), 0o600).unwrap();
        for (i, piece) in data.chunks(chunk).enumerate() {
            v.write(fh, (i * chunk) as u64, piece).unwrap();
        }
        v.release(fh).unwrap();
        prop_assert_eq!(read_all(&v, "/x", chunk), data);
    }
}
