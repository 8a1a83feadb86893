//! Regenerates the C header from the exported API on every build of this
//! crate. The checked-in copy at include/morphclass.h is the artifact C
//! consumers compile against.

use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("cargo sets manifest dir"));
    let header = crate_dir.join("include").join("morphclass.h");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        // Parse errors must fail the build; a stale header silently
        // drifting from the library is worse than a broken build.
        Err(e) => panic!("cbindgen failed: {e}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
