//! The whole pipeline on the bundled configuration, written to a temporary
//! directory, followed by a one-run report.

use hermite_kam::pipeline::{report, run, Mode, RunRequest};

fn main() {
    let dir = std::env::temp_dir().join("hkam-example");
    let config = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/full_d1.json");
    let req = RunRequest { mode: Mode::Full, config, out: dir.join("run"), seed: None, threads: Some(2), omega: None };
    let outcome = run(&req);
    let m = outcome.manifest.expect("manifest");
    for s in &m.suites {
        println!("{:<32} {}", s.name, if s.passed { "pass" } else { "FAIL" });
    }
    println!("status {} exit {}", m.status, outcome.exit_code);
    let summary = report(&[dir.join("run")], &dir.join("report")).expect("report");
    println!("report: {} measure rows, merged slope {:?}", summary.measure_rows, summary.measure_slope);
}
