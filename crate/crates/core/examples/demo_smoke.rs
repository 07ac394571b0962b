//! Scratch pipeline driver used during development.

use fmsim_core::harness::{run_ablation, write_results, AblationSpec, CellConfig};
use fmsim_core::policy::StsMode;
use std::time::Instant;

fn main() {
    let spec = AblationSpec::default();
    let t0 = Instant::now();
    let table = run_ablation(&spec, 8, None).unwrap();
    eprintln!("matrix {} cells in {:.1}s", table.cells.len(), t0.elapsed().as_secs_f64());
    let cfg = |fm, sts| CellConfig { fm, sts, wrist: true, rel_pose: true, demos: 20 };
    for (name, c) in [
        ("full (fm+switching)", cfg(true, StsMode::Switching)),
        ("none (nofm+excluded)", cfg(false, StsMode::Excluded)),
        ("nofm+switching", cfg(false, StsMode::Switching)),
        ("fm+visual_only", cfg(true, StsMode::VisualOnly)),
        ("fm+tactile_only", cfg(true, StsMode::TactileOnly)),
        ("fm+excluded", cfg(true, StsMode::Excluded)),
    ] {
        let per: Vec<String> = table.spec.tasks.iter()
            .map(|&t| format!("{:?} {:.0}", t, table.task_mean(t, &c).unwrap_or(-1.0)))
            .collect();
        eprintln!("{name}: across {:.1} [{}]", table.across_task_mean(&c).unwrap_or(-1.0), per.join(", "));
    }
    write_results(&table, std::path::Path::new("/tmp/ablate_out")).unwrap();
}
