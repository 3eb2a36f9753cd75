//! Markdown summary and side-by-side comparison strips.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use rafe_core::degrade::ImageBuffer;

use crate::io::{hstack, resize, save_image};
use crate::pipeline::load_set;

pub const STRIP_COLUMNS: [&str; 4] = ["clean", "degraded", "restored-2D", "perframe-fit"];
const TABLE_METRICS: [&str; 5] = ["psnr", "ssim", "proxy", "hf_energy", "diversity"];

#[derive(Clone, Debug, Default)]
pub struct ReportSummary {
    pub markdown: String,
    pub strips: Vec<PathBuf>,
    /// Inputs that were absent; the report is emitted regardless.
    pub missing: Vec<String>,
    /// Latent sample columns per strip.
    pub samples: usize,
}

/// `(scene, task) -> metric -> value` from a metrics CSV.
pub fn read_metrics(path: &Path) -> Result<BTreeMap<(String, String), BTreeMap<String, f64>>> {
    let text = fs::read_to_string(path)?;
    let mut out: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            anyhow::bail!("malformed metrics row `{line}`");
        }
        out.entry((f[0].into(), f[1].into()))
            .or_default()
            .insert(f[2].into(), f[3].parse()?);
    }
    Ok(out)
}

fn sample_dirs(out: &Path) -> Vec<PathBuf> {
    (0..)
        .map(|j| out.join("render").join("rafe").join(format!("z{j}")))
        .take_while(|d| d.join("transforms_test.json").exists())
        .collect()
}

/// Builds `<out>/report/report.md` and one strip per test view from the
/// stage outputs under `out`.
pub fn write_report(out: &Path) -> Result<ReportSummary> {
    let dir = out.join("report");
    fs::create_dir_all(&dir)?;
    let mut s = ReportSummary::default();
    let mut md = String::from("# Restoration report\n\n");

    let metrics_path = out.join("eval").join("metrics.csv");
    let table = if metrics_path.exists() {
        read_metrics(&metrics_path)?
    } else {
        s.missing.push(metrics_path.display().to_string());
        BTreeMap::new()
    };
    if table.is_empty() {
        md.push_str("| scene | task | method | psnr | ssim | proxy | hf_energy | diversity |\n");
        md.push_str("|---|---|---|---|---|---|---|---|\n");
        md.push_str("| no data | no data | no data | no data | no data | no data | no data | no data |\n");
    }
    for ((scene, task), m) in &table {
        let _ = writeln!(md, "## {scene} / {task}\n");
        md.push_str("| method | psnr | ssim | proxy | hf_energy | diversity |\n|---|---|---|---|---|---|\n");
        let mut methods: Vec<&str> = m.keys().filter_map(|k| k.split_once('.').map(|(a, _)| a)).collect();
        methods.dedup();
        for method in methods {
            let cells: Vec<String> = TABLE_METRICS
                .iter()
                .map(|k| match m.get(&format!("{method}.{k}")) {
                    Some(v) => format!("{v:.4}"),
                    None => "-".into(),
                })
                .collect();
            let _ = writeln!(md, "| {method} | {} |", cells.join(" | "));
        }
        md.push('\n');
    }

    // Strips: clean | degraded | restored-2D | perframe | z0..z(k-1).
    let sources: Vec<(String, PathBuf)> = vec![
        ("clean".into(), out.join("synth")),
        ("degraded".into(), out.join("degrade")),
        ("restored-2D".into(), out.join("restore-2d")),
        ("perframe-fit".into(), out.join("render").join("perframe")),
    ];
    let samples = sample_dirs(out);
    s.samples = samples.len();
    let mut columns: Vec<Vec<ImageBuffer>> = Vec::new();
    for (name, d) in sources.into_iter().chain(samples.iter().enumerate().map(|(j, d)| (format!("z{j}"), d.clone()))) {
        match load_set(&d, "test") {
            Ok(set) => columns.push(set.images),
            Err(_) => s.missing.push(format!("{name} ({})", d.display())),
        }
    }
    if let Some(first) = columns.first().filter(|_| s.missing.is_empty()) {
        let views = first.len();
        for i in 0..views {
            let (w, h) = (first[i].width, first[i].height);
            let row: Vec<ImageBuffer> = columns.iter().map(|c| resize(&c[i], w, h)).collect();
            let p = dir.join("strips").join(format!("{i:03}.png"));
            save_image(&p, &hstack(&row))?;
            s.strips.push(p);
        }
        md.push_str("## Comparison strips\n\nColumns: ");
        let names: Vec<String> = STRIP_COLUMNS
            .iter()
            .map(|c| c.to_string())
            .chain((0..s.samples).map(|j| format!("z{j}")))
            .collect();
        md.push_str(&names.join(" | "));
        md.push_str("\n\n");
        for p in &s.strips {
            let rel = p.strip_prefix(&dir).unwrap_or(p);
            let _ = writeln!(md, "![{}]({})", rel.display(), rel.display());
        }
        md.push('\n');
    }
    if !s.missing.is_empty() {
        md.push_str("## Missing inputs\n\n");
        for m in &s.missing {
            let _ = writeln!(md, "- {m}");
        }
    }
    fs::write(dir.join("report.md"), &md)?;
    s.markdown = md;
    Ok(s)
}
