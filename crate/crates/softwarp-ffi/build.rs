use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("manifest dir"));
    let header = crate_dir.join("include").join("softwarp.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(header);
        }
        // Syntax errors surface through rustc with better messages; do not
        // fail the build twice for them.
        Err(cbindgen::Error::ParseSyntaxError { .. }) => {}
        Err(e) => panic!("header generation failed: {e}"),
    }
}
