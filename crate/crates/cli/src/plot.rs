//! `plot`: static SVG figures from the CSV tables the other commands write.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 45.0;

/// A CSV file read as named string columns.
pub struct Table {
    pub source: PathBuf,
    pub digest: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::Analysis(format!("{}: {e}", path.display())))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let schema = |e: csv::Error| CliError::Analysis(format!("{}: {e}", path.display()));
        let header: Vec<String> = r.headers().map_err(schema)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(schema)?;
        if rows.is_empty() {
            return Err(CliError::Analysis(format!("{}: empty table, nothing to plot", path.display())));
        }
        Ok(Self { source: path.to_path_buf(), digest, header, rows })
    }

    pub fn has(&self, cols: &[&str]) -> bool {
        cols.iter().all(|c| self.header.iter().any(|h| h == c))
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Analysis(format!("{}: missing column `{name}`", self.source.display())))
    }

    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let c = self.col(name)?;
        Ok(self.rows.iter().map(|r| r.get(c).cloned().unwrap_or_default()).collect())
    }

    /// Column parsed as numbers; empty cells become NaN.
    pub fn num(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.col(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = r.get(c).map(String::as_str).unwrap_or("");
                if s.is_empty() {
                    return Ok(f64::NAN);
                }
                s.parse::<f64>().map_err(|_| {
                    CliError::Analysis(format!("{}: column `{name}` row {}: `{s}` is not a number", self.source.display(), i + 1))
                })
            })
            .collect()
    }
}

struct Canvas {
    w: f64,
    h: f64,
    body: String,
}

impl Canvas {
    fn new(w: f64, h: f64) -> Self {
        Self { w, h, body: String::new() }
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let s = s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{s}</text>"#
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dash: bool) {
        let d = if dash { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}"{d}/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.5" points="{}"/>"#,
            p.join(" ")
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="{fill}"/>"#);
    }

    fn finish(self, sources: &[&Table]) -> String {
        let prov: Vec<String> = sources
            .iter()
            .map(|t| format!("{} sha256:{}", t.source.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()), t.digest))
            .collect();
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <metadata>source: {p}</metadata>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{b}</svg>\n",
            w = self.w,
            h = self.h,
            p = prov.join("; "),
            b = self.body
        )
    }
}

/// Axes-box mapping data coordinates into one panel.
struct Panel {
    x0: f64,
    y0: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        let span = (self.xr.1 - self.xr.0).max(1e-12);
        self.x0 + MARGIN + (x - self.xr.0) / span * (PANEL_W - MARGIN - 10.0)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.yr.1 - self.yr.0).max(1e-12);
        self.y0 + PANEL_H - MARGIN + 10.0 - (y - self.yr.0) / span * (PANEL_H - MARGIN - 20.0)
    }

    fn axes(&self, c: &mut Canvas, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r) = (self.px(self.xr.0), self.px(self.xr.1));
        let (b, t) = (self.py(self.yr.0), self.py(self.yr.1));
        c.line(l, b, r, b, "black", false);
        c.line(l, b, l, t, "black", false);
        c.text((l + r) / 2.0, self.y0 + 14.0, 12.0, "middle", title);
        c.text((l + r) / 2.0, b + 30.0, 10.0, "middle", xlabel);
        c.text(self.x0 + 10.0, (b + t) / 2.0, 10.0, "start", ylabel);
        for (v, y) in [(self.yr.0, b), (self.yr.1, t)] {
            c.text(l - 4.0, y + 3.0, 9.0, "end", &fmt_tick(v));
        }
        for (v, x) in [(self.xr.0, l), (self.xr.1, r)] {
            c.text(x, b + 14.0, 9.0, "middle", &fmt_tick(v));
        }
    }

    fn legend(&self, c: &mut Canvas, names: &[String]) {
        for (i, n) in names.iter().enumerate() {
            let y = self.y0 + 28.0 + 12.0 * i as f64;
            let x = self.x0 + PANEL_W - 90.0;
            c.line(x, y - 3.0, x + 14.0, y - 3.0, PALETTE[i % PALETTE.len()], false);
            c.text(x + 18.0, y, 9.0, "start", n);
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn range(series: &Series) -> (f64, f64) {
    let xs = series.values().flatten().map(|p| p.0).filter(|v| v.is_finite());
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo.is_finite() { (lo, hi.max(lo + 1.0)) } else { (0.0, 1.0) }
}

fn draw_lines(c: &mut Canvas, p: &Panel, series: &Series) {
    for (i, pts) in series.values().enumerate() {
        let mapped: Vec<(f64, f64)> =
            pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| (p.px(x), p.py(y))).collect();
        c.polyline(&mapped, PALETTE[i % PALETTE.len()]);
    }
    p.legend(c, &series.keys().cloned().collect::<Vec<_>>());
}

/// Averages y over duplicate x within each series.
fn mean_series(raw: BTreeMap<String, BTreeMap<i64, (f64, usize)>>) -> Series {
    raw.into_iter()
        .map(|(k, pts)| (k, pts.into_iter().map(|(x, (s, n))| (x as f64, s / n as f64)).collect()))
        .collect()
}

fn add(raw: &mut BTreeMap<String, BTreeMap<i64, (f64, usize)>>, key: String, x: f64, y: f64) {
    let e = raw.entry(key).or_default().entry(x as i64).or_insert((0.0, 0));
    e.0 += y;
    e.1 += 1;
}

/// Accuracy per position against global epoch, one panel per evaluated
/// experience, with dashed experience boundaries.
pub fn accuracy_curves(t: &Table) -> Result<String> {
    let k = t.num("global_epoch")?;
    let trained = t.num("experience_trained")?;
    let exp = t.num("eval_experience")?;
    let pos = t.num("position")?;
    let acc = t.num("accuracy")?;
    let n_exp = exp.iter().cloned().fold(0.0, f64::max) as usize;
    let boundaries: Vec<f64> = {
        let mut last = BTreeMap::new();
        for (&kk, &tr) in k.iter().zip(&trained) {
            let e = last.entry(tr as i64).or_insert(kk);
            *e = f64::max(*e, kk);
        }
        let mut b: Vec<f64> = last.values().cloned().collect();
        b.pop();
        b
    };
    let mut c = Canvas::new(PANEL_W * n_exp as f64, PANEL_H);
    for e in 1..=n_exp {
        let mut raw = BTreeMap::new();
        for i in 0..k.len() {
            if exp[i] as usize == e {
                add(&mut raw, format!("a_{}", pos[i] as usize), k[i], acc[i]);
            }
        }
        let s = mean_series(raw);
        let p = Panel { x0: PANEL_W * (e - 1) as f64, y0: 0.0, xr: range(&s), yr: (0.0, 1.0) };
        p.axes(&mut c, &format!("experience {e}"), "epoch", "acc");
        for &b in &boundaries {
            c.line(p.px(b + 0.5), p.py(0.0), p.px(b + 0.5), p.py(1.0), "#999999", true);
        }
        draw_lines(&mut c, &p, &s);
    }
    Ok(c.finish(&[t]))
}

/// One series per input metrics table for a fixed position and experience.
pub fn overlay(tables: &[Table], position: usize, experience: usize) -> Result<String> {
    let mut s = Series::new();
    for t in tables {
        let k = t.num("global_epoch")?;
        let exp = t.num("eval_experience")?;
        let pos = t.num("position")?;
        let acc = t.num("accuracy")?;
        let mut raw = BTreeMap::new();
        let name = t
            .source
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| t.source.display().to_string(), |n| n.to_string_lossy().into_owned());
        for i in 0..k.len() {
            if exp[i] as usize == experience && pos[i] as usize == position {
                add(&mut raw, name.clone(), k[i], acc[i]);
            }
        }
        s.extend(mean_series(raw));
    }
    if s.is_empty() {
        return Err(CliError::Analysis(format!("no rows for a_{position} on experience {experience}")));
    }
    let mut c = Canvas::new(PANEL_W * 1.5, PANEL_H);
    let p = Panel { x0: 0.0, y0: 0.0, xr: range(&s), yr: (0.0, 1.0) };
    p.axes(&mut c, &format!("a_{position}, experience {experience}"), "epoch", "acc");
    draw_lines(&mut c, &p, &s);
    Ok(c.finish(&tables.iter().collect::<Vec<_>>()))
}

fn heat_color(v: f64, lo: f64, hi: f64) -> String {
    if !v.is_finite() {
        return "#dddddd".into();
    }
    let t = ((v - lo) / (hi - lo).max(1e-12)).clamp(0.0, 1.0);
    let (r, g, b) = (68.0 + t * (253.0 - 68.0), 1.0 + t * (231.0 - 1.0), 84.0 + t * (37.0 - 84.0));
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Layers by heads heat tables of each metric, one row of panels per family.
pub fn sweep_heatmaps(t: &Table) -> Result<String> {
    let fam = t.text("family")?;
    let layers = t.num("layers")?;
    let heads = t.num("heads")?;
    let metrics = [("TA", (0.0, 1.0)), ("GA", (0.0, 1.0)), ("log10_ft", (-1.0, 1.0)), ("PM_corrected", (-1.0, 0.0))];
    let families: Vec<String> = {
        let mut f = fam.clone();
        f.sort();
        f.dedup();
        f
    };
    let mut ls: Vec<i64> = layers.iter().map(|&v| v as i64).collect();
    ls.sort();
    ls.dedup();
    let mut hs: Vec<i64> = heads.iter().map(|&v| v as i64).collect();
    hs.sort();
    hs.dedup();
    let mut c = Canvas::new(PANEL_W * metrics.len() as f64, PANEL_H * families.len() as f64);
    for (fi, f) in families.iter().enumerate() {
        for (mi, (m, (lo, hi))) in metrics.iter().enumerate() {
            let vals = t.num(m)?;
            let (x0, y0) = (PANEL_W * mi as f64, PANEL_H * fi as f64);
            c.text(x0 + PANEL_W / 2.0, y0 + 14.0, 12.0, "middle", &format!("{f} {m}"));
            let cw = (PANEL_W - 2.0 * MARGIN) / hs.len() as f64;
            let ch = (PANEL_H - 2.0 * MARGIN) / ls.len() as f64;
            for (li, l) in ls.iter().enumerate() {
                c.text(x0 + MARGIN - 4.0, y0 + MARGIN + ch * (li as f64 + 0.6), 9.0, "end", &format!("L{l}"));
                for (hi_, h) in hs.iter().enumerate() {
                    let v = (0..fam.len())
                        .find(|&i| &fam[i] == f && layers[i] as i64 == *l && heads[i] as i64 == *h)
                        .map_or(f64::NAN, |i| vals[i]);
                    let (x, y) = (x0 + MARGIN + cw * hi_ as f64, y0 + MARGIN + ch * li as f64);
                    c.rect(x, y, cw - 1.0, ch - 1.0, &heat_color(v, *lo, *hi));
                    if v.is_finite() {
                        c.text(x + cw / 2.0, y + ch / 2.0 + 3.0, 8.0, "middle", &format!("{v:.2}"));
                    }
                }
            }
            for (hi_, h) in hs.iter().enumerate() {
                c.text(x0 + MARGIN + cw * (hi_ as f64 + 0.5), y0 + PANEL_H - MARGIN + 12.0, 9.0, "middle", &format!("H{h}"));
            }
        }
    }
    Ok(c.finish(&[t]))
}

/// Per-layer score, one series per `group_by` combination, seed-averaged.
fn per_layer(t: &Table, value: &str, group_by: &[&str], title: &str) -> Result<String> {
    let layer = t.num("layer")?;
    let v = t.num(value)?;
    let keys: Vec<Vec<String>> = group_by.iter().map(|g| t.text(g)).collect::<Result<_>>()?;
    let mut raw = BTreeMap::new();
    for i in 0..layer.len() {
        let key = group_by.iter().zip(&keys).map(|(g, k)| format!("{g}={}", k[i])).collect::<Vec<_>>().join(" ");
        add(&mut raw, key, layer[i], v[i]);
    }
    let s = mean_series(raw);
    let mut c = Canvas::new(PANEL_W * 1.5, PANEL_H);
    let p = Panel { x0: 0.0, y0: 0.0, xr: range(&s), yr: (0.0, 1.0) };
    p.axes(&mut c, title, "layer", value);
    draw_lines(&mut c, &p, &s);
    Ok(c.finish(&[t]))
}

/// Mass on the first clause by input clause, one panel per family and
/// checkpoint, one series per layer.
pub fn first_clause(t: &Table) -> Result<String> {
    let fam = t.text("family")?;
    let after = t.num("after_experience")?;
    let layer = t.num("layer")?;
    let clause = t.num("clause")?;
    let score = t.num("score")?;
    let mut panels: BTreeMap<(String, i64), BTreeMap<String, BTreeMap<i64, (f64, usize)>>> = BTreeMap::new();
    for i in 0..fam.len() {
        let raw = panels.entry((fam[i].clone(), after[i] as i64)).or_default();
        add(raw, format!("layer {}", layer[i] as i64), clause[i], score[i]);
    }
    let mut c = Canvas::new(PANEL_W * panels.len() as f64, PANEL_H);
    for (pi, ((f, a), raw)) in panels.into_iter().enumerate() {
        let s = mean_series(raw);
        let p = Panel { x0: PANEL_W * pi as f64, y0: 0.0, xr: range(&s), yr: (0.0, 1.0) };
        p.axes(&mut c, &format!("{f} after exp {a}"), "clause", "mass");
        draw_lines(&mut c, &p, &s);
    }
    Ok(c.finish(&[t]))
}

/// Bars of seed-averaged values of `value` per `category`.
fn bars(t: &Table, category: &str, value: &str, title: &str, yr: (f64, f64)) -> Result<String> {
    let cats = t.text(category)?;
    let v = t.num(value)?;
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (c, x) in cats.iter().zip(&v) {
        if x.is_finite() {
            let e = acc.entry(c.clone()).or_insert((0.0, 0));
            e.0 += x;
            e.1 += 1;
        }
    }
    if acc.is_empty() {
        return Err(CliError::Analysis(format!("{}: no finite `{value}` values", t.source.display())));
    }
    let mut c = Canvas::new(PANEL_W * 1.5, PANEL_H);
    let p = Panel { x0: 0.0, y0: 0.0, xr: (0.0, acc.len() as f64), yr };
    p.axes(&mut c, title, category, value);
    let base = p.py(yr.0.max(0.0).min(yr.1));
    for (i, (name, (s, n))) in acc.iter().enumerate() {
        let y = p.py(s / *n as f64);
        let (x0, x1) = (p.px(i as f64 + 0.15), p.px(i as f64 + 0.85));
        c.rect(x0, y.min(base), x1 - x0, (y - base).abs(), PALETTE[i % PALETTE.len()]);
        c.text((x0 + x1) / 2.0, p.py(yr.0) + 22.0, 9.0, "middle", name);
    }
    Ok(c.finish(&[t]))
}

/// Chooses a figure for `t` from its columns.
pub fn render(t: &Table) -> Result<String> {
    if t.has(&["global_epoch", "experience_trained", "eval_experience", "position", "accuracy"]) {
        accuracy_curves(t)
    } else if t.has(&["family", "layers", "heads", "TA", "GA", "log10_ft", "PM_corrected"]) {
        sweep_heatmaps(t)
    } else if t.has(&["after_experience", "layer", "clause", "score"]) {
        first_clause(t)
    } else if t.has(&["after_experience", "layer", "score"]) {
        per_layer(t, "score", &["family", "after_experience"], "preceding-clause attention")
    } else if t.has(&["replay_fraction", "layer", "cosine"]) {
        per_layer(t, "cosine", &["family", "replay_fraction"], "attention cosine similarity")
    } else if t.has(&["position", "accuracy"]) && !t.has(&["global_epoch"]) {
        bars(t, "position", "accuracy", "full-task accuracy", (0.0, 1.0))
    } else if t.has(&["family", "PM_corrected", "TA"]) {
        bars(t, "family", "TA", "task accuracy", (0.0, 1.0))
    } else {
        Err(CliError::Analysis(format!(
            "{}: unrecognized table with columns {}",
            t.source.display(),
            t.header.join(",")
        )))
    }
}

/// Writes one SVG per table into `out`, plus an overlay when several
/// metrics tables are given. Returns the written paths.
pub fn cmd_plot(tables: &[PathBuf], out: &Path, position: usize, experience: usize) -> Result<Vec<PathBuf>> {
    if tables.is_empty() {
        return Err(CliError::Analysis("no tables given".into()));
    }
    fs::create_dir_all(out).map_err(|e| CliError::Analysis(format!("{}: {e}", out.display())))?;
    let loaded: Vec<Table> = tables.iter().map(|p| Table::read(p)).collect::<Result<_>>()?;
    let mut written = Vec::new();
    let mut used = BTreeMap::new();
    for t in &loaded {
        let stem = t.source.file_stem().map_or_else(|| "plot".into(), |s| s.to_string_lossy().into_owned());
        let n = used.entry(stem.clone()).or_insert(0usize);
        *n += 1;
        let name = if *n == 1 { format!("{stem}.svg") } else { format!("{stem}-{n}.svg") };
        let p = out.join(name);
        fs::write(&p, render(t)?).map_err(|e| CliError::Analysis(format!("{}: {e}", p.display())))?;
        written.push(p);
    }
    let metric_tables: Vec<Table> = loaded.into_iter().filter(|t| t.has(&["global_epoch", "position"])).collect();
    if metric_tables.len() > 1 {
        let p = out.join("overlay.svg");
        fs::write(&p, overlay(&metric_tables, position, experience)?)
            .map_err(|e| CliError::Analysis(format!("{}: {e}", p.display())))?;
        written.push(p);
    }
    Ok(written)
}
