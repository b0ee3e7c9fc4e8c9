//! Merges sweep CSVs into one long-format table plus a gnuplot script.

use std::fmt::Write as _;
use std::fs;

use anyhow::{bail, Context, Result};
use noisenet::sweep::parse_sweep_csv;

use crate::ReportArgs;

pub const MERGED_HEADER: &str = "series,sqrt2D,mean_accuracy,stderr";

pub fn run(args: ReportArgs) -> Result<()> {
    let mut merged = format!("{MERGED_HEADER}\n");
    let mut labels = Vec::new();
    for entry in &args.series {
        let Some((label, path)) = entry.split_once('=') else {
            bail!("--series expects LABEL=PATH, got {entry:?}");
        };
        if label.is_empty() || label.contains([',', '"']) {
            bail!("series label {label:?} must be nonempty without commas or quotes");
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        let rows = parse_sweep_csv(&text).with_context(|| format!("parsing {path}"))?;
        for r in rows {
            writeln!(
                merged,
                "{label},{},{},{}",
                r.amplitude, r.mean_accuracy, r.stderr
            )?;
        }
        labels.push(label.to_string());
    }
    fs::write(&args.out, &merged).with_context(|| format!("writing {}", args.out.display()))?;

    let script = gnuplot_script(
        &args.out.display().to_string(),
        &labels,
        args.baseline,
        &args.title,
    );
    fs::write(&args.script, script)
        .with_context(|| format!("writing {}", args.script.display()))?;
    println!(
        "{} series -> {}, {}",
        labels.len(),
        args.out.display(),
        args.script.display()
    );
    Ok(())
}

fn gnuplot_script(csv: &str, labels: &[String], baseline: Option<f64>, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set title \"{}\"", title.replace('"', "'"));
    let _ = writeln!(s, "set xlabel 'noise amplitude sqrt(2D)'");
    let _ = writeln!(s, "set ylabel 'accuracy'");
    let _ = writeln!(s, "set key bottom left");
    let _ = writeln!(s, "set terminal pngcairo size 900,600");
    let _ = writeln!(s, "set output '{}.png'", csv.trim_end_matches(".csv"));
    let mut plots: Vec<String> = labels
        .iter()
        .map(|l| {
            format!(
                "'{csv}' skip 1 using 2:(strcol(1) eq \"{l}\" ? $3 : 1/0):4 with yerrorlines title \"{l}\""
            )
        })
        .collect();
    if let Some(b) = baseline {
        plots.push(format!(
            "{b} with lines dashtype 2 lc rgb 'black' title 'noise-free'"
        ));
    }
    let _ = writeln!(s, "plot \\\n    {}", plots.join(", \\\n    "));
    s
}
