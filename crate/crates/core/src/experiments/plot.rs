//! Minimal deterministic SVG charts rendered from the report CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::synthdata::Subset;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Relative padding added on each side of the data range.
pub const AXIS_MARGIN: f64 = 0.05;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Fixed color per subset, in legend order.
pub fn subset_color(s: Subset) -> &'static str {
    match s {
        Subset::Unpermuted => PALETTE[0],
        Subset::Permuted => PALETTE[1],
        Subset::Restored => PALETTE[2],
        Subset::Test => PALETTE[3],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    if span > 0.0 {
        (lo - AXIS_MARGIN * span, hi + AXIS_MARGIN * span)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { lo.abs() * AXIS_MARGIN };
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LineChart {
    /// `((x_min, x_max), (y_min, y_max))` including the margin; `None`
    /// when there is no finite point.
    pub fn axis_ranges(&self) -> Option<((f64, f64), (f64, f64))> {
        let pts = self
            .series
            .iter()
            .flat_map(|s| &s.points)
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for &(x, y) in pts {
            b = Some(match b {
                None => (x, x, y, y),
                Some((a, c, d, e)) => (a.min(x), c.max(x), d.min(y), e.max(y)),
            });
        }
        b.map(|(x0, x1, y0, y1)| (padded(x0, x1), padded(y0, y1)))
    }

    /// The chart as an SVG document, or `None` for an empty chart.
    pub fn to_svg(&self) -> Option<String> {
        let ((x0, x1), (y0, y1)) = self.axis_ranges()?;
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                TOP + ph + 16.0,
                tick_label(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(yv) + 4.0,
                tick_label(yv)
            );
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
                LEFT + pw,
                sy(yv),
                sy(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
                    series.color,
                    pts.join(" ")
                );
                for p in &pts {
                    let (cx, cy) = p.split_once(',').unwrap();
                    let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{}"/>"#, series.color);
                }
            }
            let ly = TOP + 12.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{}" stroke-width="3"/>"#,
                lx + 18.0,
                series.color
            );
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&series.name));
        }
        s.push_str("</svg>\n");
        Some(s)
    }
}

/// Colored table of values (e.g. log gradient ratios), diverging around 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatGrid {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl HeatGrid {
    pub fn to_svg(&self) -> Option<String> {
        let max = self
            .values
            .iter()
            .flatten()
            .flatten()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if self.row_labels.is_empty() || self.col_labels.is_empty() {
            return None;
        }
        let cw = 64.0;
        let ch = 28.0;
        let w = LEFT + cw * self.col_labels.len() as f64 + 20.0;
        let h = TOP + 20.0 + ch * self.row_labels.len() as f64 + 20.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="10" y="22" font-size="14">{}</text>"#, escape(&self.title));
        for (j, c) in self.col_labels.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                LEFT + cw * (j as f64 + 0.5),
                TOP + 12.0,
                escape(c)
            );
        }
        for (i, r) in self.row_labels.iter().enumerate() {
            let y = TOP + 20.0 + ch * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + ch / 2.0 + 4.0,
                escape(r)
            );
            for j in 0..self.col_labels.len() {
                let v = self.values.get(i).and_then(|row| row.get(j)).copied().flatten();
                let (fill, text) = match v {
                    Some(v) if v.is_finite() => {
                        let t = if max > 0.0 { (v / max).clamp(-1.0, 1.0) } else { 0.0 };
                        let fade = |c: f64| (255.0 - (255.0 - c) * t.abs()).round() as u8;
                        let fill = if t >= 0.0 {
                            format!("#{:02x}{:02x}{:02x}", fade(214.0), fade(39.0), fade(40.0))
                        } else {
                            format!("#{:02x}{:02x}{:02x}", fade(31.0), fade(119.0), fade(180.0))
                        };
                        (fill, tick_label(v))
                    }
                    _ => ("#eeeeee".to_string(), "n/a".to_string()),
                };
                let x = LEFT + cw * j as f64;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{y:.1}" width="{cw}" height="{ch}" fill="{fill}" stroke="white"/>"#
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{text}</text>"#,
                    x + cw / 2.0,
                    y + ch / 2.0 + 4.0
                );
            }
        }
        s.push_str("</svg>\n");
        Some(s)
    }
}

/// A CSV report loaded as named columns of strings.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn load(path: &Path) -> Result<Option<Table>> {
        if !path.exists() {
            return Ok(None);
        }
        let mut rd = csv::Reader::from_path(path)?;
        let header = rd.headers()?.iter().map(String::from).collect();
        let rows = rd
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Some(Table { header, rows }))
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    }

    fn num(row: &[String], i: usize) -> Option<f64> {
        row[i].parse().ok()
    }
}

/// Result of [`emit_plots`]: written files and skipped charts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutput {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<String>,
}

fn save(out: &mut PlotOutput, dir: &Path, name: &str, svg: Option<String>) -> Result<()> {
    match svg {
        Some(svg) => {
            let path = dir.join(name);
            std::fs::write(&path, svg)?;
            out.written.push(path);
        }
        None => out.skipped.push(format!("{name}: empty series")),
    }
    Ok(())
}

const METRICS: [(&str, &str); 4] = [
    ("alpha_m", "capacity"),
    ("r_m", "radius"),
    ("d_m", "dimension"),
    ("rho_center", "center correlation"),
];

/// Renders every chart whose source CSV exists in `report_dir`
/// (`trace.csv`, `mgm.csv`, `grad.csv`, `rewind.csv`, `width.csv`).
pub fn emit_plots(report_dir: &Path, out_dir: &Path) -> Result<PlotOutput> {
    std::fs::create_dir_all(out_dir)?;
    let mut out = PlotOutput::default();
    let mut best_final: Option<(usize, usize)> = None;

    if let Some(t) = Table::load(&report_dir.join("trace.csv"))? {
        let ep = t.col("epoch")?;
        let mut series = Vec::new();
        let mut train = Vec::new();
        for r in &t.rows {
            if let (Some(e), Some(a)) = (Table::num(r, ep), Table::num(r, t.col("train")?)) {
                train.push((e, a));
            }
        }
        series.push(Series {
            name: "train".into(),
            color: PALETTE[7].into(),
            points: train,
        });
        for s in Subset::ALL {
            let c = t.col(s.name())?;
            series.push(Series {
                name: s.name().into(),
                color: subset_color(s).into(),
                points: t
                    .rows
                    .iter()
                    .filter_map(|r| Some((Table::num(r, ep)?, Table::num(r, c)?)))
                    .collect(),
            });
        }
        let test = t.col("test")?;
        let mut best = (f64::NEG_INFINITY, 0usize);
        let mut last = 0usize;
        for r in &t.rows {
            let e = Table::num(r, ep).unwrap_or(0.0) as usize;
            last = last.max(e);
            if let Some(a) = Table::num(r, test) {
                if a > best.0 {
                    best = (a, e);
                }
            }
        }
        best_final = Some((best.1, last));
        let chart = LineChart {
            title: "Accuracy by example set".into(),
            x_label: "epoch".into(),
            y_label: "accuracy".into(),
            series,
        };
        save(&mut out, out_dir, "accuracy.svg", chart.to_svg())?;
    }

    if let Some(t) = Table::load(&report_dir.join("mgm.csv"))? {
        let (ep, ly, ss) = (t.col("epoch")?, t.col("layer")?, t.col("subset")?);
        let mut epochs: Vec<usize> = t.rows.iter().filter_map(|r| r[ep].parse().ok()).collect();
        epochs.sort_unstable();
        epochs.dedup();
        let mut stages: Vec<(String, usize)> = Vec::new();
        match best_final {
            Some((b, f)) => {
                stages.push(("best".into(), b));
                stages.push(("final".into(), f));
            }
            None => stages.extend(epochs.iter().map(|&e| (format!("epoch{e}"), e))),
        }
        let last_layer = t.rows.iter().filter_map(|r| r[ly].parse::<usize>().ok()).max().unwrap_or(0);
        for (metric, label) in METRICS {
            let mc = t.col(metric)?;
            for (stage, epoch) in &stages {
                let series = Subset::ALL
                    .iter()
                    .map(|&s| Series {
                        name: s.name().into(),
                        color: subset_color(s).into(),
                        points: t
                            .rows
                            .iter()
                            .filter(|r| r[ep].parse() == Ok(*epoch) && r[ss] == s.name())
                            .filter_map(|r| Some((Table::num(r, ly)?, Table::num(r, mc)?)))
                            .collect(),
                    })
                    .collect();
                let chart = LineChart {
                    title: format!("{label} by layer, {stage} epoch ({epoch})"),
                    x_label: "layer".into(),
                    y_label: metric.into(),
                    series,
                };
                save(&mut out, out_dir, &format!("mgm_{metric}_{stage}.svg"), chart.to_svg())?;
            }
            let series = Subset::ALL
                .iter()
                .map(|&s| Series {
                    name: s.name().into(),
                    color: subset_color(s).into(),
                    points: t
                        .rows
                        .iter()
                        .filter(|r| r[ly].parse() == Ok(last_layer) && r[ss] == s.name())
                        .filter_map(|r| Some((Table::num(r, ep)?, Table::num(r, mc)?)))
                        .collect(),
                })
                .collect();
            let chart = LineChart {
                title: format!("{label} over training, layer {last_layer}"),
                x_label: "epoch".into(),
                y_label: metric.into(),
                series,
            };
            save(&mut out, out_dir, &format!("mgm_{metric}_by_epoch.svg"), chart.to_svg())?;
        }
    }

    if let Some(t) = Table::load(&report_dir.join("grad.csv"))? {
        let (ep, ly, ss) = (t.col("epoch")?, t.col("layer")?, t.col("subset")?);
        for (col, title) in [
            ("log_dep_unperm_over_perm", "ln |dep unpermuted| / |dep permuted|"),
            ("log_dep_over_ind", "ln |dep| / |ind| (all examples)"),
        ] {
            let c = t.col(col)?;
            let rows: Vec<&Vec<String>> = t.rows.iter().filter(|r| r[ss] == "all").collect();
            let mut layers: Vec<String> = Vec::new();
            let mut epochs: Vec<usize> = Vec::new();
            let mut cells: BTreeMap<(String, usize), Option<f64>> = BTreeMap::new();
            for r in rows {
                let e: usize = r[ep].parse().unwrap_or(0);
                if !layers.contains(&r[ly]) {
                    layers.push(r[ly].clone());
                }
                if !epochs.contains(&e) {
                    epochs.push(e);
                }
                cells.insert((r[ly].clone(), e), Table::num(r, c));
            }
            epochs.sort_unstable();
            let grid = HeatGrid {
                title: title.into(),
                col_labels: epochs.iter().map(|e| format!("epoch {e}")).collect(),
                values: layers
                    .iter()
                    .map(|l| epochs.iter().map(|&e| cells.get(&(l.clone(), e)).copied().flatten()).collect())
                    .collect(),
                row_labels: layers.iter().map(|l| format!("layer {l}")).collect(),
            };
            save(&mut out, out_dir, &format!("grad_{col}.svg"), grid.to_svg())?;
        }
    }

    if let Some(t) = Table::load(&report_dir.join("rewind.csv"))? {
        let (ly, ep, te) = (t.col("layer")?, t.col("epoch")?, t.col("test")?);
        let mut layers: Vec<usize> = t.rows.iter().filter_map(|r| r[ly].parse().ok()).collect();
        layers.sort_unstable();
        layers.dedup();
        let series = layers
            .iter()
            .enumerate()
            .map(|(i, &l)| Series {
                name: format!("layer {l}"),
                color: PALETTE[i % PALETTE.len()].into(),
                points: t
                    .rows
                    .iter()
                    .filter(|r| r[ly].parse() == Ok(l))
                    .filter_map(|r| Some((Table::num(r, ep)?, Table::num(r, te)?)))
                    .collect(),
            })
            .collect();
        let chart = LineChart {
            title: "Test accuracy after rewinding one layer".into(),
            x_label: "rewind epoch".into(),
            y_label: "test accuracy".into(),
            series,
        };
        save(&mut out, out_dir, "rewind_test_accuracy.svg", chart.to_svg())?;
    }

    if let Some(t) = Table::load(&report_dir.join("width.csv"))? {
        let np = t.col("n_params")?;
        let x = |r: &Vec<String>| Table::num(r, np).filter(|&v| v > 0.0).map(f64::log10);
        let acc_series = ["best_test_accuracy", "final_test_accuracy"]
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let c = t.col(name)?;
                Ok(Series {
                    name: name.replace('_', " "),
                    color: PALETTE[i].into(),
                    points: t.rows.iter().filter_map(|r| Some((x(r)?, Table::num(r, c)?))).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let chart = LineChart {
            title: "Test accuracy versus model size".into(),
            x_label: "log10 parameters".into(),
            y_label: "accuracy".into(),
            series: acc_series,
        };
        save(&mut out, out_dir, "width_accuracy.svg", chart.to_svg())?;
        for (metric, label) in METRICS {
            let series = ["best", "final"]
                .iter()
                .enumerate()
                .map(|(i, stage)| {
                    let c = t.col(&format!("{stage}_{metric}"))?;
                    Ok(Series {
                        name: format!("{stage} epoch"),
                        color: PALETTE[i].into(),
                        points: t.rows.iter().filter_map(|r| Some((x(r)?, Table::num(r, c)?))).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let chart = LineChart {
                title: format!("Test-manifold {label} versus model size"),
                x_label: "log10 parameters".into(),
                y_label: metric.into(),
                series,
            };
            save(&mut out, out_dir, &format!("width_{metric}.svg"), chart.to_svg())?;
        }
    }
    Ok(out)
}
