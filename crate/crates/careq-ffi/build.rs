//! Regenerates the committed C header from the crate's public items.

use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("cargo sets this"));
    let header = crate_dir.join("include").join("careq.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(header);
        }
        Err(e) => {
            // Keep builds working from a clean checkout even if header
            // generation regresses; the committed header stays in place.
            println!("cargo:warning=cbindgen failed, keeping committed header: {e}");
        }
    }
}
