//! Dependency-free SVG rendering of metrics, rate and trajectory CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

pub const METRICS_SCHEMA: &str = "# schema=metrics/1";
pub const TRAJECTORY_SCHEMA: &str = "# schema=trajectory/1";
pub const GAP_SCHEMA: &str = mftg::nagents::GAP_CSV_SCHEMA;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
/// Fill of a cell holding all of a coalition's mass.
pub const SATURATED: &str = "#67000d";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Reward,
    Exploitability,
    Rate,
    Heatmap,
}

impl std::str::FromStr for PlotKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "reward" => Ok(Self::Reward),
            "exploitability" => Ok(Self::Exploitability),
            "rate" => Ok(Self::Rate),
            "heatmap" => Ok(Self::Heatmap),
            other => Err(CliError::usage(format!(
                "unknown plot kind `{other}` (known: reward, exploitability, rate, heatmap)"
            ))),
        }
    }
}

/// A parsed CSV with a schema comment on its first line.
#[derive(Debug, Clone)]
pub struct Table {
    pub schema: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let schema = first.trim_end_matches('\r').to_string();
        if !schema.starts_with("# schema=") {
            return Err(CliError::usage(format!("{origin}: missing `# schema=` line")));
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| CliError::usage(format!("{origin}: {e}")))?
            .iter()
            .map(String::from)
            .collect::<Vec<_>>();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(CliError::usage(format!("{origin}: missing header row")));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| CliError::usage(format!("{origin}: {e}")))?;
            rows.push(rec.iter().map(String::from).collect());
        }
        Ok(Self { schema, headers, rows })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, names: &[&str], origin: &str) -> CliResult<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.column(n).ok_or_else(|| CliError::usage(format!("{origin}: schema mismatch, no `{n}` column")))
            })
            .collect()
    }

    /// Numeric cell; empty cells are `None`.
    fn number(&self, row: usize, col: usize, origin: &str) -> CliResult<Option<f64>> {
        let cell = self.rows[row].get(col).map(String::as_str).unwrap_or("");
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse().map(Some).map_err(|_| {
            CliError::usage(format!("{origin}: `{cell}` in column `{}` is not a number", self.headers[col]))
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, low, high)` envelope drawn behind the line.
    pub band: Vec<(f64, f64, f64)>,
    pub markers: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Short fixed-format tick label.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Evenly spaced round ticks covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step =
        [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= target as f64).unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).map(|v| if v.abs() < step * 1e-9 { 0.0 } else { v }).collect()
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            let v = if log {
                if v <= 0.0 {
                    continue;
                }
                v.log10()
            } else {
                v
            };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo > hi {
            (lo, hi) = (0.0, 1.0);
        } else if lo == hi {
            let pad = if lo == 0.0 { 0.5 } else { lo.abs() * 0.1 };
            (lo, hi) = (lo - pad, hi + pad);
        } else {
            let pad = (hi - lo) * 0.04;
            (lo, hi) = (lo - pad, hi + pad);
        }
        Self { lo, hi, log }
    }

    fn scaled(&self, v: f64) -> Option<f64> {
        if self.log {
            (v > 0.0).then(|| v.log10())
        } else {
            v.is_finite().then_some(v)
        }
    }

    fn frac(&self, v: f64) -> Option<f64> {
        self.scaled(v).map(|s| (s - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let pows: Vec<f64> = ((self.lo.ceil() as i64)..=(self.hi.floor() as i64)).map(|p| p as f64).collect();
            let at = if pows.len() >= 2 { pows } else { nice_ticks(self.lo, self.hi, 4) };
            at.into_iter().map(|p| (p, fmt_num(10f64.powf(p)))).collect()
        } else {
            nice_ticks(self.lo, self.hi, 6).into_iter().map(|v| (v, fmt_num(v))).collect()
        }
    }
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0).chain(s.band.iter().map(|b| b.0)));
        let ys =
            self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1).chain(s.band.iter().flat_map(|b| [b.1, b.2])));
        let ax = Axis::fit(xs, self.log_x);
        let ay = Axis::fit(ys, self.log_y);
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let px = |f: f64| LEFT + f * pw;
        let py = |f: f64| TOP + (1.0 - f) * ph;
        let to_xy = |x: f64, y: f64| Some((px(ax.frac(x)?), py(ay.frac(y)?)));

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(svg, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
        for (v, label) in ax.ticks() {
            let x = px((v - ax.lo) / (ax.hi - ax.lo));
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##,
                TOP + ph,
                TOP + ph + 5.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph + 18.0,
                escape(&label)
            );
        }
        for (v, label) in ay.ticks() {
            let y = py((v - ay.lo) / (ay.hi - ay.lo));
            let _ =
                writeln!(svg, r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/>"##, LEFT - 5.0);
            let _ =
                writeln!(svg, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                y + 4.0,
                escape(&label)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let upper: Vec<(f64, f64)> = s.band.iter().filter_map(|b| to_xy(b.0, b.2)).collect();
            let lower: Vec<(f64, f64)> = s.band.iter().rev().filter_map(|b| to_xy(b.0, b.1)).collect();
            if upper.len() >= 2 && upper.len() + lower.len() == 2 * s.band.len() {
                let pts: Vec<String> = upper.iter().chain(&lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.join(" ")
                );
            }
            let pts: Vec<(f64, f64)> = s.points.iter().filter_map(|&(x, y)| to_xy(x, y)).collect();
            if pts.len() >= 2 {
                let list: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    list.join(" ")
                );
            }
            if s.markers || pts.len() == 1 {
                for (x, y) in &pts {
                    let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
                }
            }
            let ly = TOP + 12.0 + 18.0 * k as f64;
            let lx = LEFT + pw + 14.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/>"#,
                lx + 18.0
            );
            let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.label));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// One distribution snapshot laid out on its grid.
#[derive(Debug, Clone)]
pub struct Panel {
    pub width: usize,
    pub height: usize,
    /// Mass per cell, row-major from the top.
    pub cells: Vec<f64>,
}

/// Distribution snapshots, one coalition per row and one time per column.
#[derive(Debug, Clone, Default)]
pub struct Heatmap {
    pub title: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub panels: Vec<Vec<Option<Panel>>>,
}

/// White-to-dark-red shade for a mass in [0, 1].
pub fn shade(mass: f64) -> String {
    let m = mass.clamp(0.0, 1.0);
    let mix = |target: f64| (255.0 + (target - 255.0) * m).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(103.0), mix(0.0), mix(13.0))
}

impl Heatmap {
    pub fn to_svg(&self) -> String {
        let (gw, gh) =
            self.panels.iter().flatten().flatten().fold((1, 1), |(w, h), p| (w.max(p.width), h.max(p.height)));
        let cell = (96.0 / gw.max(gh) as f64).floor().clamp(2.0, 40.0);
        let (panel_w, panel_h) = (cell * gw as f64, cell * gh as f64);
        let gap = 12.0;
        let (left, top) = (110.0, 60.0);
        let ncols = self.col_labels.len().max(1);
        let nrows = self.row_labels.len().max(1);
        let width = left + ncols as f64 * (panel_w + gap) + 20.0;
        let height = top + nrows as f64 * (panel_h + gap) + 40.0;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{left}" y="22" font-size="15">{}</text>"#, escape(&self.title));
        for (c, label) in self.col_labels.iter().enumerate() {
            let x = left + c as f64 * (panel_w + gap) + panel_w / 2.0;
            let _ =
                writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, top - 8.0, escape(label));
        }
        for (r, label) in self.row_labels.iter().enumerate() {
            let y0 = top + r as f64 * (panel_h + gap);
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                left - 10.0,
                y0 + panel_h / 2.0 + 4.0,
                escape(label)
            );
            for (c, panel) in self.panels.get(r).into_iter().flatten().enumerate() {
                let Some(p) = panel else { continue };
                let x0 = left + c as f64 * (panel_w + gap);
                for (k, &m) in p.cells.iter().enumerate() {
                    let (cx, cy) = (k % p.width, k / p.width);
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{:.2}" y="{:.2}" width="{cell}" height="{cell}" fill="{}"/>"#,
                        x0 + cx as f64 * cell,
                        y0 + cy as f64 * cell,
                        shade(m)
                    );
                }
                let _ = writeln!(
                    svg,
                    r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
                    cell * p.width as f64,
                    cell * p.height as f64
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{left}" y="{:.2}">shade: mass from 0 (white) to 1 (dark red)</text>"#,
            height - 14.0
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Mean over replicate tables of column `col` against `x_col`, with a ±1 std band
/// when there is more than one replicate.
fn replicate_series(tables: &[(Table, String)], x_col: &str, col: &str, label: String) -> CliResult<Series> {
    let mut by_x: Vec<(f64, Vec<f64>)> = Vec::new();
    for (t, origin) in tables {
        let (xi, ci) = match (t.column(x_col), t.column(col)) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        for r in 0..t.rows.len() {
            let (Some(x), Some(y)) = (t.number(r, xi, origin)?, t.number(r, ci, origin)?) else { continue };
            match by_x.iter_mut().find(|e| e.0 == x) {
                Some(e) => e.1.push(y),
                None => by_x.push((x, vec![y])),
            }
        }
    }
    by_x.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut s = Series { label, ..Series::default() };
    for (x, ys) in by_x {
        let (m, sd) = mean_std(&ys);
        s.points.push((x, m));
        if tables.len() > 1 {
            s.band.push((x, m - sd, m + sd));
        }
    }
    Ok(s)
}

fn indexed_columns(t: &Table, prefix: &str) -> Vec<String> {
    let mut cols: Vec<(usize, String)> = t
        .headers
        .iter()
        .filter_map(|h| h.strip_prefix(prefix).and_then(|i| i.parse().ok()).map(|i: usize| (i, h.clone())))
        .collect();
    cols.sort();
    cols.into_iter().map(|c| c.1).collect()
}

fn check_schema(t: &Table, expected: &str, origin: &str) -> CliResult<()> {
    if t.schema != expected {
        return Err(CliError::usage(format!("{origin}: schema mismatch, expected `{expected}`, found `{}`", t.schema)));
    }
    Ok(())
}

fn has_values(tables: &[(Table, String)], col: &str) -> bool {
    tables
        .iter()
        .any(|(t, _)| t.column(col).is_some_and(|c| t.rows.iter().any(|r| r.get(c).is_some_and(|v| !v.is_empty()))))
}

pub fn reward_plot(tables: &[(Table, String)]) -> CliResult<LinePlot> {
    let (first, origin) = &tables[0];
    for (t, o) in tables {
        check_schema(t, METRICS_SCHEMA, o)?;
        t.require(&["episode"], o)?;
    }
    let test_cols = indexed_columns(first, "test_return_");
    let use_test = test_cols.iter().any(|c| has_values(tables, c));
    let cols = if use_test { test_cols } else { indexed_columns(first, "return_") };
    if cols.is_empty() {
        return Err(CliError::usage(format!("{origin}: schema mismatch, no return columns")));
    }
    let series = cols
        .iter()
        .map(|c| replicate_series(tables, "episode", c, format!("coalition {}", c.rsplit('_').next().unwrap_or("?"))))
        .collect::<CliResult<_>>()?;
    Ok(LinePlot {
        title: if use_test { "Test reward".into() } else { "Training reward".into() },
        x_label: "episode".into(),
        y_label: "discounted return".into(),
        series,
        ..LinePlot::default()
    })
}

pub fn exploitability_plot(tables: &[(Table, String)]) -> CliResult<LinePlot> {
    for (t, o) in tables {
        check_schema(t, METRICS_SCHEMA, o)?;
        t.require(&["episode", "exploitability_total"], o)?;
    }
    let mut series = vec![replicate_series(tables, "episode", "exploitability_total", "total".into())?];
    for c in indexed_columns(&tables[0].0, "exploitability_") {
        let label = format!("coalition {}", c.rsplit('_').next().unwrap_or("?"));
        series.push(replicate_series(tables, "episode", &c, label)?);
    }
    Ok(LinePlot {
        title: "Exploitability".into(),
        x_label: "episode".into(),
        y_label: "exploitability".into(),
        series,
        ..LinePlot::default()
    })
}

/// Log-log mean gap against N at time `t` (latest time when `None`), one series per file.
pub fn rate_plot(tables: &[(Table, String)], t: Option<usize>) -> CliResult<LinePlot> {
    let mut series = Vec::new();
    let mut shown_t = t;
    for (table, origin) in tables {
        check_schema(table, GAP_SCHEMA, origin)?;
        let cols = table.require(&["N", "t", "gap_mean", "gap_std"], origin)?;
        let mut rows = Vec::new();
        for r in 0..table.rows.len() {
            let vals: Vec<f64> = cols
                .iter()
                .map(|&c| table.number(r, c, origin).map(|v| v.unwrap_or(f64::NAN)))
                .collect::<CliResult<_>>()?;
            rows.push(vals);
        }
        let at = t.or_else(|| {
            rows.iter()
                .map(|v| v[1])
                .filter(|v| v.is_finite())
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
                .map(|v| v as usize)
        });
        shown_t = shown_t.or(at);
        let mut s = Series {
            label: Path::new(origin).file_stem().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            markers: true,
            ..Series::default()
        };
        let mut pts: Vec<&Vec<f64>> = rows.iter().filter(|v| at.is_some_and(|a| v[1] == a as f64)).collect();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for v in pts {
            s.points.push((v[0], v[2]));
            s.band.push((v[0], (v[2] - v[3]).max(v[2] * 0.01), v[2] + v[3]));
        }
        series.push(s);
    }
    Ok(LinePlot {
        title: match shown_t {
            Some(t) => format!("Mean-field gap at t = {t}"),
            None => "Mean-field gap".into(),
        },
        x_label: "N (agents per coalition)".into(),
        y_label: "mean L1 gap".into(),
        log_x: true,
        log_y: true,
        series,
    })
}

pub fn heatmap(table: &Table, origin: &str, test_index: usize) -> CliResult<Heatmap> {
    check_schema(table, TRAJECTORY_SCHEMA, origin)?;
    let cols = table.require(&["test_index", "t", "coalition", "x", "y", "mass"], origin)?;
    let mut entries = Vec::new();
    for r in 0..table.rows.len() {
        let v: Vec<f64> = cols
            .iter()
            .map(|&c| {
                table
                    .number(r, c, origin)?
                    .ok_or_else(|| CliError::usage(format!("{origin}: empty cell on row {}", r + 1)))
            })
            .collect::<CliResult<_>>()?;
        if v[0] == test_index as f64 {
            entries.push(v);
        }
    }
    let as_idx = |v: f64| v.max(0.0) as usize;
    let coalitions = entries.iter().map(|v| as_idx(v[2]) + 1).max().unwrap_or(0);
    let times = entries.iter().map(|v| as_idx(v[1]) + 1).max().unwrap_or(0);
    let gw = entries.iter().map(|v| as_idx(v[3]) + 1).max().unwrap_or(1);
    let gh = entries.iter().map(|v| as_idx(v[4]) + 1).max().unwrap_or(1);
    let mut panels: Vec<Vec<Option<Panel>>> = vec![vec![None; times]; coalitions];
    for v in &entries {
        let slot = &mut panels[as_idx(v[2])][as_idx(v[1])];
        let p = slot.get_or_insert_with(|| Panel { width: gw, height: gh, cells: vec![0.0; gw * gh] });
        p.cells[as_idx(v[4]) * gw + as_idx(v[3])] += v[5];
    }
    Ok(Heatmap {
        title: format!("Distributions, test {test_index}"),
        row_labels: (0..coalitions).map(|i| format!("coalition {i}")).collect(),
        col_labels: (0..times).map(|t| format!("t = {t}")).collect(),
        panels,
    })
}

/// Renders `inputs` as `kind`; several inputs are replicates (reward,
/// exploitability) or separate series (rate).
pub fn render(kind: PlotKind, inputs: &[&Path], t: Option<usize>, test_index: usize) -> CliResult<String> {
    if inputs.is_empty() {
        return Err(CliError::usage("no input CSV given"));
    }
    let tables: Vec<(Table, String)> =
        inputs.iter().map(|p| Ok((Table::read(p)?, p.display().to_string()))).collect::<CliResult<_>>()?;
    Ok(match kind {
        PlotKind::Reward => reward_plot(&tables)?.to_svg(),
        PlotKind::Exploitability => exploitability_plot(&tables)?.to_svg(),
        PlotKind::Rate => rate_plot(&tables, t)?.to_svg(),
        PlotKind::Heatmap => {
            if tables.len() != 1 {
                return Err(CliError::usage("heatmap takes exactly one trajectory CSV"));
            }
            heatmap(&tables[0].0, &tables[0].1, test_index)?.to_svg()
        }
    })
}
