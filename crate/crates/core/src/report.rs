//! Post-training analysis: the per-layer `P` table, activation curves over
//! chosen input ranges, and a two-slope LeakyReLU fit of each learned
//! activation near the origin.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::mixture::{mixture_forward, Basis, MixtureWeights};
use crate::model::Model;

/// Input ranges sampled by default: `[-3, 3]` plus `[-1, 1]`, `[-10, 10]`
/// and `[-100, 100]`.
pub const DEFAULT_RANGES: [(f64, f64); 4] =
    [(-3.0, 3.0), (-1.0, 1.0), (-10.0, 10.0), (-100.0, 100.0)];
pub const DEFAULT_CURVE_POINTS: usize = 601;
pub const DEFAULT_FIT_POINTS: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub layer: String,
    pub p: [f64; 3],
}

impl WeightRow {
    pub fn dominant(&self) -> Basis {
        let mut best = 0;
        for i in 1..3 {
            if self.p[i] > self.p[best] {
                best = i;
            }
        }
        Basis::DEFAULT_ORDER[best]
    }
}

pub fn weight_table(m: &Model) -> Vec<WeightRow> {
    m.mixtures()
        .iter()
        .map(|w| WeightRow {
            layer: w.layer_name().to_string(),
            p: w.normalize().p(),
        })
        .collect()
}

/// Fixed-width text table with four decimals per coefficient.
pub fn format_weight_table(rows: &[WeightRow]) -> String {
    let mut s = String::from("layer      P1(relu)  P2(tanh)  P3(sin)\n");
    for r in rows {
        writeln!(
            s,
            "{:<10} {:.4}    {:.4}    {:.4}",
            r.layer, r.p[0], r.p[1], r.p[2]
        )
        .unwrap();
    }
    s
}

/// Reads back the output of [`format_weight_table`].
pub fn parse_weight_table(text: &str) -> Result<Vec<WeightRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("layer") => {}
        _ => return Err(Error::Config("weight table: missing header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let fields: Vec<&str> = l.split_whitespace().collect();
            let [layer, a, b, c] = fields.as_slice() else {
                return Err(Error::Config(format!("weight table: bad row `{l}`")));
            };
            let mut p = [0.0; 3];
            for (slot, v) in p.iter_mut().zip([a, b, c]) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::Config(format!("weight table: bad number `{v}`")))?;
            }
            Ok(WeightRow {
                layer: layer.to_string(),
                p,
            })
        })
        .collect()
}

/// Compares the table with the qualitative pattern "first layer mostly
/// relu, deeper layers mostly bounded bases". Purely informational.
pub fn trend_annotation(rows: &[WeightRow]) -> String {
    let mut s = String::new();
    for r in rows {
        writeln!(
            s,
            "{}: dominant basis {} (P = {:.4})",
            r.layer,
            r.dominant().name(),
            r.p.iter().cloned().fold(f64::MIN, f64::max)
        )
        .unwrap();
    }
    if let Some(first) = rows.first() {
        let verdict = if first.dominant() == Basis::Relu {
            "agrees"
        } else {
            "disagrees"
        };
        writeln!(
            s,
            "first layer relu-dominated: {verdict} (P1 = {:.4})",
            first.p[0]
        )
        .unwrap();
    }
    if rows.len() > 1 {
        let deeper_bounded = rows[1..].iter().all(|r| r.dominant().is_bounded());
        let verdict = if deeper_bounded {
            "agrees"
        } else {
            "disagrees"
        };
        let masses: Vec<String> = rows[1..]
            .iter()
            .map(|r| format!("{} {:.4}", r.layer, r.p[1] + r.p[2]))
            .collect();
        writeln!(
            s,
            "deeper layers dominated by bounded bases: {verdict} (tanh+sin mass: {})",
            masses.join(", ")
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub layer: String,
    pub range: (f64, f64),
    pub points: Vec<(f64, f64)>,
}

fn grid(x_min: f64, x_max: f64, n: usize) -> Vec<f64> {
    let span = x_max - x_min;
    let last = (n - 1) as f64;
    let mut xs: Vec<f64> = (0..n).map(|i| x_min + span * (i as f64 / last)).collect();
    xs[n - 1] = x_max;
    xs
}

fn check_range(x_min: f64, x_max: f64, n: usize) -> Result<()> {
    if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
        return Err(Error::Config(format!("invalid range [{x_min}, {x_max}]")));
    }
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 sample points, got {n}"
        )));
    }
    Ok(())
}

/// `A(x)` at `n` evenly spaced points over `[x_min, x_max]`, endpoints included.
pub fn sample_curve(w: &MixtureWeights, x_min: f64, x_max: f64, n: usize) -> Result<CurveSample> {
    check_range(x_min, x_max, n)?;
    let xs = grid(x_min, x_max, n);
    let ys = mixture_forward(&Tensor::from_slice(&xs), w);
    Ok(CurveSample {
        layer: w.layer_name().to_string(),
        range: (x_min, x_max),
        points: xs.into_iter().zip(ys.into_data()).collect(),
    })
}

/// Slopes of `A(x) ≈ h1·x` for `x ≥ 0` and `A(x) ≈ h2·x` for `x < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakyFit {
    pub h1: f64,
    pub h2: f64,
    /// Root-mean-square error of the two-slope fit over all sample points.
    pub residual: f64,
}

/// Least-squares slope through the origin on each side of zero,
/// `h = Σ x·A(x) / Σ x²`, over `n` evenly spaced samples.
pub fn fit_leaky_relu(w: &MixtureWeights, x_min: f64, x_max: f64, n: usize) -> Result<LeakyFit> {
    let curve = sample_curve(w, x_min, x_max, n)?;
    let side = |pos: bool| -> Result<f64> {
        let (mut xy, mut xx) = (0.0, 0.0);
        for &(x, a) in curve.points.iter().filter(|(x, _)| (*x >= 0.0) == pos) {
            xy += x * a;
            xx += x * x;
        }
        if xx == 0.0 {
            return Err(Error::Config(format!(
                "range [{x_min}, {x_max}] has no nonzero samples with x {} 0",
                if pos { ">=" } else { "<" }
            )));
        }
        Ok(xy / xx)
    };
    let h1 = side(true)?;
    let h2 = side(false)?;
    let sq: f64 = curve
        .points
        .iter()
        .map(|&(x, a)| {
            let fit = if x >= 0.0 { h1 * x } else { h2 * x };
            (a - fit).powi(2)
        })
        .sum();
    Ok(LeakyFit {
        h1,
        h2,
        residual: (sq / curve.points.len() as f64).sqrt(),
    })
}

pub fn curve_file_stem(layer: &str, x_min: f64, x_max: f64) -> String {
    format!("{layer}_{x_min}_{x_max}")
}

/// CSV with header `x,A` and both columns at 12 significant digits.
pub fn curve_csv(sample: &CurveSample) -> String {
    let mut s = String::from("x,A\n");
    for (x, a) in &sample.points {
        writeln!(s, "{x:.11e},{a:.11e}").unwrap();
    }
    s
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines();
    if lines.next() != Some("x,A") {
        return Err(Error::Config(
            "curve CSV must start with header `x,A`".into(),
        ));
    }
    lines
        .map(|line| {
            let (x, a) = line
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("bad curve line `{line}`")))?;
            let parse = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad number `{v}`")))
            };
            Ok((parse(x)?, parse(a)?))
        })
        .collect()
}

/// Minimal SVG polyline of the curve, for eyeballing.
pub fn curve_svg(sample: &CurveSample) -> String {
    const W: f64 = 400.0;
    const H: f64 = 300.0;
    let (x0, x1) = sample.range;
    let (mut y0, mut y1) = sample
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, a)| {
            (lo.min(a), hi.max(a))
        });
    if y1 - y0 < 1e-12 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let px = |x: f64| (x - x0) / (x1 - x0) * W;
    let py = |y: f64| H - (y - y0) / (y1 - y0) * H;
    let points: Vec<String> = sample
        .points
        .iter()
        .map(|&(x, a)| format!("{:.2},{:.2}", px(x), py(a)))
        .collect();
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    if (y0..=y1).contains(&0.0) {
        writeln!(
            s,
            r##"<line x1="0" y1="{0:.2}" x2="{W}" y2="{0:.2}" stroke="#bbb"/>"##,
            py(0.0)
        )
        .unwrap();
    }
    if (x0..=x1).contains(&0.0) {
        writeln!(
            s,
            r##"<line x1="{0:.2}" y1="0" x2="{0:.2}" y2="{H}" stroke="#bbb"/>"##,
            px(0.0)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<polyline fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#,
        points.join(" ")
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="4" y="14" font-size="12">{} on [{x0}, {x1}]</text>"#,
        sample.layer
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Writes `<layer>_<xmin>_<xmax>.csv` and `.svg` for every sample; returns
/// the CSV paths.
pub fn export_curves(samples: &[CurveSample], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(samples.len());
    for s in samples {
        let stem = curve_file_stem(&s.layer, s.range.0, s.range.1);
        let csv = out_dir.join(format!("{stem}.csv"));
        fs::write(&csv, curve_csv(s))?;
        fs::write(out_dir.join(format!("{stem}.svg")), curve_svg(s))?;
        written.push(csv);
    }
    Ok(written)
}
