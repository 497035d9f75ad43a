//! Heatmaps of confusion matrices and attention maps.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

use codectrace::evaluation::{EvalReport, REPORT_SCHEMA};

use crate::commands::{AttentionExport, ATTENTION_SCHEMA};
use crate::run::{RunDir, RUN_FILE};
use crate::PlotArgs;

/// Row-major matrix with values in `[0, 1]`.
struct Heat {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colour(v: f64) -> Rgb<u8> {
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

impl Heat {
    fn render(&self, cell: u32) -> RgbImage {
        // Long axes (attention over ~100 frames) get thinner cells.
        let cw = (cell * 16 / self.cols.max(16) as u32).max(1);
        let ch = (cell * 16 / self.rows.max(16) as u32).max(1);
        RgbImage::from_fn(self.cols as u32 * cw, self.rows as u32 * ch, |x, y| {
            let (r, c) = ((y / ch) as usize, (x / cw) as usize);
            colour(self.values[r * self.cols + c])
        })
    }

    fn csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = self.values[r * self.cols..(r + 1) * self.cols].iter().map(|v| format!("{v}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Confusion counts normalized by the number of true items per row.
fn confusion_heat(r: &EvalReport) -> Heat {
    let n = r.confusion.len();
    let mut values = Vec::with_capacity(n * n);
    for row in &r.confusion {
        let total: usize = row.iter().sum();
        values.extend(row.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }));
    }
    Heat { rows: n, cols: n, values }
}

/// Head-averaged weights scaled by their maximum.
fn attention_heat(m: &codectrace::fusion::AttentionMap) -> Heat {
    let mut values = vec![0f64; m.l_q * m.l_k];
    for h in 0..m.heads {
        for q in 0..m.l_q {
            for (k, &w) in m.row(h, q).iter().enumerate() {
                values[q * m.l_k + k] += f64::from(w) / m.heads as f64;
            }
        }
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Heat {
        rows: m.l_q,
        cols: m.l_k,
        values,
    }
}

fn schema_error(path: &Path) -> anyhow::Error {
    codectrace::Error::Schema {
        context: path.display().to_string(),
        field: "schema".into(),
    }
    .into()
}

/// JSON files under `inputs`. Explicit files must carry a known schema;
/// files found by walking a directory are kept only when they do.
fn collect(inputs: &[PathBuf]) -> Result<Vec<(PathBuf, serde_json::Value)>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let p = e?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != RUN_FILE) {
                out.push(p);
            }
        }
        Ok(())
    }
    let known = |v: &serde_json::Value| matches!(v.get("schema").and_then(|s| s.as_str()), Some(REPORT_SCHEMA | ATTENTION_SCHEMA));
    let read = |p: &Path| -> Result<serde_json::Value> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut files = Vec::new();
            walk(input, &mut files)?;
            files.sort();
            for f in files {
                let v = read(&f)?;
                if known(&v) {
                    out.push((f, v));
                }
            }
        } else if input.exists() {
            let v = read(input)?;
            if !known(&v) {
                return Err(schema_error(input));
            }
            out.push((input.clone(), v));
        } else {
            return Err(codectrace::Error::MissingArtifact(input.clone()).into());
        }
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn plot(a: PlotArgs) -> Result<()> {
    let inputs = collect(&a.inputs)?;
    let mut run = RunDir::create(&a.out.out, "plot", a.out.force)?;
    let mut figures: Vec<(String, Heat)> = Vec::new();
    for (path, v) in inputs {
        run.input(&path)?;
        let parse_err = |e: serde_json::Error| codectrace::Error::Schema {
            context: path.display().to_string(),
            field: e.to_string(),
        };
        if v["schema"] == REPORT_SCHEMA {
            let r: EvalReport = serde_json::from_value(v).map_err(parse_err)?;
            let name = format!("{}_{}_confusion", stem(&path), r.variant);
            figures.push((name, confusion_heat(&r)));
        } else {
            let e: AttentionExport = serde_json::from_value(v).map_err(parse_err)?;
            for m in &e.maps {
                figures.push((format!("{}_{}_layer{}", e.key, m.stage, m.layer_index), attention_heat(m)));
            }
        }
    }
    for (name, heat) in &figures {
        run.write_text(&format!("{name}.csv"), &heat.csv())?;
        let png = run.join(format!("{name}.png"));
        heat.render(a.cell).save(&png).with_context(|| format!("writing {}", png.display()))?;
    }
    log::info!("{} figures written to {}", figures.len(), run.path.display());
    let digest = codectrace::digest::json_digest(&figures.iter().map(|(n, _)| n).collect::<Vec<_>>());
    run.finish(digest, 0)?;
    Ok(())
}
