//! Regenerates the shipped spec files in `specs/` from the built-in
//! presets. Run from the repository root:
//!
//! ```text
//! cargo run --release -p risloc-harness --example generate_specs
//! ```

fn main() {
    let specs = [
        ("specs/full_scale_arc.json", risloc_harness::presets::full_scale_arc()),
        ("specs/desk_arc.json", risloc_harness::presets::desk_arc()),
        ("specs/desk_mobility.json", risloc_harness::presets::desk_mobility()),
        ("specs/desk_bandwidth.json", risloc_harness::presets::desk_bandwidth()),
    ];
    for (path, spec) in specs {
        std::fs::write(path, spec.to_json()).unwrap_or_else(|e| panic!("{path}: {e}"));
        println!("wrote {path}");
    }
}
