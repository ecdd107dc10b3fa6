use std::env;
use std::fs;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out = crate_dir.join("include/dlpfs.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).expect("cbindgen.toml");
    let bindings = cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("generating C header");
    let mut text = Vec::new();
    bindings.write(&mut text);
    // Only touch the header when it changes, so dependents don't rebuild.
    if fs::read(&out).ok().as_deref() != Some(&text[..]) {
        fs::create_dir_all(out.parent().unwrap()).unwrap();
        fs::write(&out, text).unwrap();
    }
}
