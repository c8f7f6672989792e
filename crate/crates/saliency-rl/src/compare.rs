//! Aggregates run directories into per-variant learning curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use saliency_core::metrics::{mean_std, steps_to_threshold};

use crate::run::read_run_info;

/// One seed's evaluation curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub dir: PathBuf,
    pub variant: String,
    pub seed: u64,
    /// (step, mean evaluation return)
    pub points: Vec<(u64, f64)>,
    pub scripted_return: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Absolute(f64),
    /// Fraction of the scripted policy's return on the same evaluation
    /// episodes, read from each run's `run.json`.
    FractionOfScripted(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveStat {
    pub step: u64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub variant: String,
    pub seed: u64,
    pub threshold: f64,
    pub steps_to_threshold: Option<u64>,
    pub final_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub curves: BTreeMap<String, Vec<CurveStat>>,
    pub outcomes: Vec<SeedOutcome>,
}

/// Reads every seed curve from a run directory.
pub fn read_curves(dir: &Path) -> Result<Vec<Curve>> {
    let path = dir.join("metrics.csv");
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("{} has no {name} column", path.display()));
    let (cs, cv, cseed, cm) = (col("step")?, col("variant")?, col("seed")?, col("eval_return_mean")?);
    let info = read_run_info(dir).ok();
    let mut by_seed: BTreeMap<(String, u64), Vec<(u64, f64)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let step: u64 = rec[cs].parse().with_context(|| format!("bad step {:?}", &rec[cs]))?;
        let seed: u64 = rec[cseed].parse().with_context(|| format!("bad seed {:?}", &rec[cseed]))?;
        let m: f64 = rec[cm].parse().with_context(|| format!("bad return {:?}", &rec[cm]))?;
        by_seed.entry((rec[cv].to_string(), seed)).or_default().push((step, m));
    }
    if by_seed.is_empty() {
        bail!("{} has no rows", path.display());
    }
    Ok(by_seed
        .into_iter()
        .map(|((variant, seed), points)| {
            let scripted_return = info.as_ref().and_then(|i| i.seeds.iter().position(|&s| s == seed).and_then(|k| i.scripted_return.get(k).copied()));
            Curve { dir: dir.to_path_buf(), variant, seed, points, scripted_return }
        })
        .collect())
}

pub fn compare_curves(curves: &[Curve], threshold: Threshold) -> Result<Comparison> {
    let Some(first) = curves.first() else { bail!("no curves to compare") };
    let grid: Vec<u64> = first.points.iter().map(|p| p.0).collect();
    for c in curves {
        if c.points.iter().map(|p| p.0).ne(grid.iter().copied()) {
            bail!("mismatched eval grids: {} seed {} vs {} seed {}", c.dir.display(), c.seed, first.dir.display(), first.seed);
        }
    }
    let mut groups: BTreeMap<String, Vec<&Curve>> = BTreeMap::new();
    for c in curves {
        groups.entry(c.variant.clone()).or_default().push(c);
    }
    let mut stats = BTreeMap::new();
    for (v, cs) in &groups {
        let rows = grid
            .iter()
            .enumerate()
            .map(|(i, &step)| {
                let vals: Vec<f64> = cs.iter().map(|c| c.points[i].1).collect();
                let (mean, std) = mean_std(&vals);
                CurveStat { step, n: vals.len(), mean, std }
            })
            .collect();
        stats.insert(v.clone(), rows);
    }
    let mut outcomes = Vec::new();
    for c in curves {
        let thr = match threshold {
            Threshold::Absolute(t) => t,
            Threshold::FractionOfScripted(f) => match c.scripted_return {
                Some(s) => f * s,
                None => bail!("{} lacks the scripted return needed for a relative threshold", c.dir.display()),
            },
        };
        outcomes.push(SeedOutcome {
            variant: c.variant.clone(),
            seed: c.seed,
            threshold: thr,
            steps_to_threshold: steps_to_threshold(&c.points, thr),
            final_return: c.points.last().map_or(0.0, |p| p.1),
        });
    }
    Ok(Comparison { curves: stats, outcomes })
}

pub fn compare_dirs(dirs: &[PathBuf], threshold: Threshold) -> Result<Comparison> {
    if dirs.is_empty() {
        bail!("no run directories given");
    }
    let mut curves = Vec::new();
    for d in dirs {
        curves.extend(read_curves(d)?);
    }
    compare_curves(&curves, threshold)
}

const COLORS: [&str; 6] = ["#1b6ac9", "#d1495b", "#2a9d5c", "#8e5bd1", "#e08b1b", "#555555"];

/// Mean curves with ±1 std bands.
pub fn render_svg(cmp: &Comparison) -> String {
    let (w, h, pad) = (720.0, 420.0, 50.0);
    let all: Vec<&CurveStat> = cmp.curves.values().flatten().collect();
    let xmax = all.iter().map(|s| s.step).max().unwrap_or(1).max(1) as f64;
    let ymin = all.iter().map(|s| s.mean - s.std).fold(f64::INFINITY, f64::min).min(0.0);
    let mut ymax = all.iter().map(|s| s.mean + s.std).fold(f64::NEG_INFINITY, f64::max).max(ymin + 1e-9);
    if !ymax.is_finite() {
        ymax = 1.0;
    }
    let x = |s: u64| pad + (w - 2.0 * pad) * s as f64 / xmax;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * (v - ymin) / (ymax - ymin);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - pad, w - pad);
    let _ = writeln!(out, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">training step</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(out, r#"<text x="14" y="{}" transform="rotate(-90 14 {0})" text-anchor="middle">evaluation return</text>"#, h / 2.0);
    for (lab, v) in [(format!("{ymin:.2}"), ymin), (format!("{ymax:.2}"), ymax)] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{lab}</text>"#, pad - 4.0, y(v) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, w - pad, h - pad + 16.0, xmax as u64);
    for (i, (name, rows)) in cmp.curves.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let upper: Vec<String> = rows.iter().map(|s| format!("{:.1},{:.1}", x(s.step), y(s.mean + s.std))).collect();
        let lower: Vec<String> = rows.iter().rev().map(|s| format!("{:.1},{:.1}", x(s.step), y(s.mean - s.std))).collect();
        let _ = writeln!(out, r#"<polygon points="{} {}" fill="{c}" fill-opacity="0.15" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        let line: Vec<String> = rows.iter().map(|s| format!("{:.1},{:.1}", x(s.step), y(s.mean))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
        let ly = pad + 16.0 * i as f64;
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" fill="{c}">{name}</text>"#, pad + 10.0);
    }
    out.push_str("</svg>\n");
    out
}

/// Writes summary.csv, steps_to_threshold.csv and curves.svg into `out`.
pub fn write_comparison(cmp: &Comparison, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["variant", "step", "n", "return_mean", "return_std"])?;
    for (v, rows) in &cmp.curves {
        for s in rows {
            w.write_record([v.clone(), s.step.to_string(), s.n.to_string(), s.mean.to_string(), s.std.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("steps_to_threshold.csv"))?;
    w.write_record(["variant", "seed", "threshold", "steps_to_threshold", "final_return"])?;
    for o in &cmp.outcomes {
        w.write_record([o.variant.clone(), o.seed.to_string(), o.threshold.to_string(), o.steps_to_threshold.map_or_else(String::new, |s| s.to_string()), o.final_return.to_string()])?;
    }
    w.flush()?;
    fs::write(out.join("curves.svg"), render_svg(cmp))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(dir: &Path, variant: &str, rows: &[(u64, u64, f64)]) {
        fs::create_dir_all(dir).unwrap();
        let mut text = String::from("step,episode,variant,seed,eval_return_mean,eval_return_std,mean_iou,cat_acc,epsilon,loss_mean\n");
        for &(seed, step, m) in rows {
            text.push_str(&format!("{step},0,{variant},{seed},{m},0,,,1,\n"));
        }
        fs::write(dir.join("metrics.csv"), text).unwrap();
    }

    #[test]
    fn recovers_known_means() {
        let t = tempfile::tempdir().unwrap();
        let a = t.path().join("a");
        synthetic(&a, "oracle", &[(1, 0, 0.0), (1, 100, 2.0), (2, 0, 1.0), (2, 100, 4.0)]);
        let cmp = compare_dirs(&[a], Threshold::Absolute(3.0)).unwrap();
        let rows = &cmp.curves["oracle"];
        assert_eq!(rows[0], CurveStat { step: 0, n: 2, mean: 0.5, std: 0.5 });
        assert_eq!(rows[1], CurveStat { step: 100, n: 2, mean: 3.0, std: 1.0 });
        assert_eq!(cmp.outcomes[0].steps_to_threshold, None);
        assert_eq!(cmp.outcomes[1].steps_to_threshold, Some(100));
        assert!(render_svg(&cmp).contains("<polyline"));
    }

    #[test]
    fn identical_dirs_have_zero_std() {
        let t = tempfile::tempdir().unwrap();
        let a = t.path().join("a");
        synthetic(&a, "baseline", &[(3, 0, 0.25), (3, 50, 1.5)]);
        let cmp = compare_dirs(&[a.clone(), a], Threshold::Absolute(1.0)).unwrap();
        assert!(cmp.curves["baseline"].iter().all(|s| s.std == 0.0 && s.n == 2));
    }

    #[test]
    fn errors() {
        let t = tempfile::tempdir().unwrap();
        assert!(compare_dirs(&[t.path().to_path_buf()], Threshold::Absolute(1.0)).is_err());
        assert!(compare_dirs(&[], Threshold::Absolute(1.0)).is_err());
        let (a, b) = (t.path().join("a"), t.path().join("b"));
        synthetic(&a, "baseline", &[(1, 0, 0.0), (1, 100, 1.0)]);
        synthetic(&b, "oracle", &[(1, 0, 0.0), (1, 200, 1.0)]);
        let err = compare_dirs(&[a.clone(), b], Threshold::Absolute(1.0)).unwrap_err().to_string();
        assert!(err.contains("mismatched eval grids"), "{err}");
        assert!(compare_dirs(&[a], Threshold::FractionOfScripted(0.8)).is_err());
    }
}
