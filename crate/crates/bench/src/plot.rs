//! Log-log fits of median sub-optimality against K, a companion table and a
//! static SVG chart.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::experiment::ResultRow;

/// Median and mean sub-optimality of one `(algorithm, K)` group over the
/// rows that completed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Point {
    pub algorithm: String,
    pub k: usize,
    pub runs: usize,
    pub median: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub algorithm: String,
    /// Points used by the fit: positive medians only.
    pub points: usize,
    pub slope: Option<f64>,
    pub stderr: Option<f64>,
    pub intercept: Option<f64>,
    pub note: String,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Groups rows by algorithm (first-seen order) and K (ascending).
pub fn summarize(rows: &[ResultRow]) -> Vec<Point> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for row in rows {
        let a = match order.iter().position(|x| *x == row.algorithm) {
            Some(a) => a,
            None => {
                order.push(row.algorithm.clone());
                order.len() - 1
            }
        };
        let entry = groups.entry((a, row.k)).or_default();
        if let (true, Some(v)) = (row.failures.is_empty(), row.suboptimality_value()) {
            entry.push(v);
        }
    }
    groups
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|((a, k), mut v)| Point {
            algorithm: order[a].clone(),
            k,
            runs: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: median(&mut v),
        })
        .collect()
}

/// Ordinary least squares of `ln y` on `ln x`; returns `(slope, stderr,
/// intercept)`. The standard error needs at least three points.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 3 || n != ys.len() {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (ssr / (n - 2) as f64 / sxx).sqrt();
    Some((slope, stderr, intercept))
}

pub fn fit_slopes(points: &[Point]) -> Vec<SlopeFit> {
    let mut algorithms: Vec<&str> = Vec::new();
    for p in points {
        if !algorithms.contains(&p.algorithm.as_str()) {
            algorithms.push(&p.algorithm);
        }
    }
    algorithms
        .into_iter()
        .map(|alg| {
            let usable: Vec<&Point> = points.iter().filter(|p| p.algorithm == alg && p.median > 0.0).collect();
            let xs: Vec<f64> = usable.iter().map(|p| p.k as f64).collect();
            let ys: Vec<f64> = usable.iter().map(|p| p.median).collect();
            let dropped = points.iter().filter(|p| p.algorithm == alg).count() - usable.len();
            let mut note = String::new();
            if dropped > 0 {
                note = format!("{dropped} nonpositive medians skipped");
            }
            match fit_loglog(&xs, &ys) {
                Some((slope, stderr, intercept)) => SlopeFit {
                    algorithm: alg.to_string(),
                    points: usable.len(),
                    slope: Some(slope),
                    stderr: Some(stderr),
                    intercept: Some(intercept),
                    note,
                },
                None => SlopeFit {
                    algorithm: alg.to_string(),
                    points: usable.len(),
                    slope: None,
                    stderr: None,
                    intercept: None,
                    note: if note.is_empty() { "fewer than 3 K points; slope omitted".into() } else { format!("{note}; fewer than 3 K points, slope omitted") },
                },
            }
        })
        .collect()
}

/// Rows are `true` when the medians never increase with K.
pub fn medians_nonincreasing(points: &[Point], algorithm: &str) -> bool {
    let m: Vec<f64> = points.iter().filter(|p| p.algorithm == algorithm).map(|p| p.median).collect();
    m.windows(2).all(|w| w[1] <= w[0])
}

pub fn points_csv(points: &[Point]) -> String {
    let mut out = String::from("algorithm,k,runs,median,mean\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{}", p.algorithm, p.k, p.runs, p.median, p.mean);
    }
    out
}

pub fn slopes_csv(fits: &[SlopeFit]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("algorithm,points,slope,stderr,intercept,note\n");
    for f in fits {
        let _ = writeln!(out, "{},{},{},{},{},{}", f.algorithm, f.points, opt(f.slope), opt(f.stderr), opt(f.intercept), f.note);
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Log-log chart of the medians with the fitted lines.
pub fn svg(points: &[Point], fits: &[SlopeFit]) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let usable: Vec<&Point> = points.iter().filter(|p| p.median > 0.0).collect();
    let mut out = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if usable.is_empty() {
        out.push_str("<text x=\"20\" y=\"40\">no positive medians to plot</text>\n</svg>\n");
        return out;
    }
    let lx = |k: f64| k.log2();
    let ly = |v: f64| v.log10();
    let (x0, x1) = usable.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(lx(p.k as f64)), b.max(lx(p.k as f64))));
    let (y0, y1) = usable.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(ly(p.median)), b.max(ly(p.median))));
    let (x1, y0, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, y0.floor(), if y1.ceil() > y0.floor() { y1.ceil() } else { y0.floor() + 1.0 });
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let _ = writeln!(out, "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - pad, w - pad, h - pad);
    let _ = writeln!(out, "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>", h - pad);
    let mut e = x0.ceil();
    while e <= x1 {
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">2^{}</text>", px(e), h - pad + 18.0, e);
        e += 1.0;
    }
    let mut d = y0;
    while d <= y1 {
        let _ = writeln!(out, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">1e{}</text>", pad - 6.0, py(d) + 4.0, d);
        d += 1.0;
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">K (episodes)</text>", w / 2.0, h - 15.0);
    let _ = writeln!(out, "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">median sub-optimality</text>", h / 2.0, h / 2.0);
    for (n, fit) in fits.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let series: Vec<&&Point> = usable.iter().filter(|p| p.algorithm == fit.algorithm).collect();
        let path: Vec<String> = series.iter().map(|p| format!("{:.1},{:.1}", px(lx(p.k as f64)), py(ly(p.median)))).collect();
        let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>", path.join(" "));
        for p in &series {
            let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", px(lx(p.k as f64)), py(ly(p.median)));
        }
        if let (Some(s), Some(c)) = (fit.slope, fit.intercept) {
            let at = |x2: f64| (c + s * x2 * std::f64::consts::LN_2) / std::f64::consts::LN_10;
            let _ = writeln!(
                out,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-dasharray=\"4 3\"/>",
                px(x0), py(at(x0)), px(x1), py(at(x1))
            );
        }
        let label = match (fit.slope, fit.stderr) {
            (Some(s), Some(se)) => format!("{} slope {s:.3} ± {se:.3}", fit.algorithm),
            _ => format!("{} (no fit)", fit.algorithm),
        };
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>", w - pad - 200.0, pad + 16.0 * n as f64);
    }
    out.push_str("</svg>\n");
    out
}
