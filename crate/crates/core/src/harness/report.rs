//! Report emission: results.json (full provenance), results.csv (one row
//! per cell), and summary.md with across-task means in bold.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{mode_timing_histogram, HarnessError, ResultTable};

#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub results_json: PathBuf,
    pub results_csv: PathBuf,
    pub summary_md: PathBuf,
}

/// results.json payload: the table plus provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultsDoc {
    pub schema: String,
    /// `git describe` of the working tree, or "unknown" outside a repo.
    pub git_describe: String,
    #[serde(flatten)]
    pub table: ResultTable,
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

pub const CSV_HEADER: &str =
    "task,fm,sts,wrist,rel_pose,demos,seed_index,cell_seed,episodes,successes,error";

pub fn to_csv(table: &ResultTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &table.cells {
        let cfg = &c.cell.config;
        out.push_str(&format!(
            "{:?},{},{:?},{},{},{},{},{},{},{},{}\n",
            c.cell.task,
            cfg.fm as u8,
            cfg.sts,
            cfg.wrist as u8,
            cfg.rel_pose as u8,
            cfg.demos,
            c.cell.seed_index,
            c.cell_seed,
            c.episodes,
            c.successes,
            c.error.as_deref().unwrap_or(""),
        ));
    }
    out
}

pub fn to_summary_md(table: &ResultTable) -> String {
    let mut out = String::from("# Ablation summary\n\n");
    out.push_str(&format!(
        "Spec seed {}, {} seeds x {} episodes per cell.\n\n",
        table.spec.seed, table.spec.seeds, table.spec.episodes_per_seed
    ));
    out.push_str("| config |");
    for t in &table.spec.tasks {
        out.push_str(&format!(" {t:?} |"));
    }
    out.push_str(" **across tasks** |\n|---|");
    for _ in 0..table.spec.tasks.len() + 1 {
        out.push_str("---|");
    }
    out.push('\n');
    for config in table.configs() {
        out.push_str(&format!("| {} |", config.id()));
        for &t in &table.spec.tasks {
            match (table.task_mean(t, &config), table.seed_std(t, &config)) {
                (Some(m), Some(s)) => out.push_str(&format!(" {m:.1} ± {s:.1} |")),
                _ => out.push_str(" - |"),
            }
        }
        match table.across_task_mean(&config) {
            Some(m) => out.push_str(&format!(" **{m:.1}** |\n")),
            None => out.push_str(" - |\n"),
        }
    }
    out.push_str("\n## Mode-switch timing (switch step - contact step)\n\n");
    for (task, hist) in mode_timing_histogram(table) {
        let bins: Vec<String> = hist.iter().map(|(b, n)| format!("{b}: {n}")).collect();
        out.push_str(&format!("- {task:?}: {{{}}}\n", bins.join(", ")));
    }
    out
}

/// Writes results.json, results.csv, and summary.md into `dir`.
pub fn write_results(table: &ResultTable, dir: &Path) -> Result<ReportFiles, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let doc = ResultsDoc {
        schema: table.schema.clone(),
        git_describe: git_describe(),
        table: table.clone(),
    };
    let files = ReportFiles {
        results_json: dir.join("results.json"),
        results_csv: dir.join("results.csv"),
        summary_md: dir.join("summary.md"),
    };
    std::fs::write(&files.results_json, serde_json::to_string_pretty(&doc)?)?;
    std::fs::write(&files.results_csv, to_csv(table))?;
    std::fs::write(&files.summary_md, to_summary_md(table))?;
    Ok(files)
}

/// Reads a previously written results.json and re-emits csv + summary.
pub fn report(in_dir: &Path, out_dir: &Path) -> Result<ReportFiles, HarnessError> {
    let text = std::fs::read_to_string(in_dir.join("results.json"))?;
    let doc: ResultsDoc = serde_json::from_str(&text)?;
    write_results(&doc.table, out_dir)
}

/// Success aggregates reconstructed from CSV text alone, for the
/// round-trip check against the JSON table.
pub fn csv_aggregates(csv: &str) -> Vec<(String, f64)> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 11 || !f[10].is_empty() {
            continue;
        }
        let key = format!(
            "{}|{}|{}|{}|{}|{}",
            f[0], f[1], f[2], f[3], f[4], f[5]
        );
        let episodes: usize = f[8].parse().unwrap_or(0);
        let successes: usize = f[9].parse().unwrap_or(0);
        if episodes > 0 {
            groups.entry(key).or_default().push((successes, episodes));
        }
    }
    groups
        .into_iter()
        .map(|(k, v)| {
            let mean = v
                .iter()
                .map(|(s, e)| 100.0 * *s as f64 / *e as f64)
                .sum::<f64>()
                / v.len() as f64;
            (k, mean)
        })
        .collect()
}
