//! Comparison reports: per-method, per-N summaries of certificate,
//! out-of-sample cost and reliability, written as JSON, CSV and SVG.

use std::fmt::Write as _;
use std::path::Path;

use bnwdro::pipeline::Method;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report has no trials")]
    EmptyReport,
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialise report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Mean with the 10% and 90% quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub q10: f64,
    pub q90: f64,
}

impl Band {
    /// `None` for an empty sample. Quantiles interpolate linearly between
    /// order statistics.
    pub fn of(values: &[f64]) -> Option<Band> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (s.len() - 1) as f64;
            let (lo, frac) = (h.floor() as usize, h - h.floor());
            if lo + 1 < s.len() {
                s[lo] + frac * (s[lo + 1] - s[lo])
            } else {
                s[lo]
            }
        };
        Some(Band {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            q10: q(0.1),
            q90: q(0.9),
        })
    }

    /// Coverage `k/n` with an 80% Wilson score interval, the binomial analogue
    /// of the 10%–90% band.
    pub fn coverage(k: usize, n: usize) -> Option<Band> {
        if n == 0 {
            return None;
        }
        const Z: f64 = 1.281_551_565_544_600_5;
        let (nf, p) = (n as f64, k as f64 / n as f64);
        let denom = 1.0 + Z * Z / nf;
        let centre = (p + Z * Z / (2.0 * nf)) / denom;
        let half = Z / denom * (p * (1.0 - p) / nf + Z * Z / (4.0 * nf * nf)).sqrt();
        Some(Band {
            mean: p,
            // the interval touches 0 (1) exactly when no (every) trial is covered
            q10: if k == 0 { 0.0 } else { centre - half },
            q90: if k == n { 1.0 } else { centre + half },
        })
    }

    pub fn brackets_mean(&self) -> bool {
        self.q10 <= self.mean && self.mean <= self.q90
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub method: Method,
    pub n: usize,
    pub trial: usize,
    pub certificate: Option<f64>,
    pub true_cost: Option<f64>,
    pub covered: bool,
    pub decision: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
    pub certificate: Option<Band>,
    pub out_of_sample: Option<Band>,
    pub reliability: Option<Band>,
}

/// True cost of the decision that is optimal for a large sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub samples: usize,
    pub mc_samples: usize,
    pub decision: Vec<f64>,
    pub cost: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub experiment: String,
    pub seed: u64,
    pub beta: f64,
    pub sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub reference: Option<Reference>,
    pub rows: Vec<ComparisonRow>,
    pub trials: Vec<TrialRow>,
    pub warnings: Vec<String>,
}

impl ComparisonReport {
    /// Summarises `trials` per (method, N) in the order given by `methods` and
    /// `sizes`. Failed trials count against reliability.
    pub fn assemble(
        experiment: &str,
        seed: u64,
        beta: f64,
        sizes: &[usize],
        methods: &[Method],
        reference: Option<Reference>,
        trials: Vec<TrialRow>,
    ) -> Self {
        let mut rows = Vec::new();
        let mut warnings = Vec::new();
        for &method in methods {
            for &n in sizes {
                let group: Vec<&TrialRow> = trials.iter().filter(|r| r.method == method && r.n == n).collect();
                let ok: Vec<&&TrialRow> = group.iter().filter(|r| r.error.is_none()).collect();
                let failures = group.len() - ok.len();
                if failures > 0 {
                    warnings.push(format!("{} N={n}: {failures} of {} trials failed", method.name(), group.len()));
                }
                let row = ComparisonRow {
                    method,
                    n,
                    trials: group.len(),
                    failures,
                    certificate: Band::of(&ok.iter().filter_map(|r| r.certificate).collect::<Vec<_>>()),
                    out_of_sample: Band::of(&ok.iter().filter_map(|r| r.true_cost).collect::<Vec<_>>()),
                    reliability: Band::coverage(group.iter().filter(|r| r.covered).count(), group.len()),
                };
                for (name, band) in [("certificate", row.certificate), ("out-of-sample cost", row.out_of_sample)] {
                    if band.is_some_and(|b| !b.brackets_mean()) {
                        warnings.push(format!("{} N={n} {name}: mean outside the 10%-90% band (heavy tail)", method.name()));
                    }
                }
                rows.push(row);
            }
        }
        Self {
            experiment: experiment.to_string(),
            seed,
            beta,
            sizes: sizes.to_vec(),
            methods: methods.to_vec(),
            reference,
            rows,
            trials,
            warnings,
        }
    }

    pub fn row(&self, method: Method, n: usize) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Certificate,
    OutOfSample,
    Reliability,
}

impl Panel {
    pub const ALL: [Panel; 3] = [Panel::Certificate, Panel::OutOfSample, Panel::Reliability];

    pub fn file_stem(self) -> &'static str {
        match self {
            Panel::Certificate => "certificate",
            Panel::OutOfSample => "out_of_sample",
            Panel::Reliability => "reliability",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Panel::Certificate => "Certificate",
            Panel::OutOfSample => "Out-of-sample cost",
            Panel::Reliability => "Reliability",
        }
    }

    fn band(self, row: &ComparisonRow) -> Option<Band> {
        match self {
            Panel::Certificate => row.certificate,
            Panel::OutOfSample => row.out_of_sample,
            Panel::Reliability => row.reliability,
        }
    }
}

/// `n,mean,q10,q90` rows for one method and panel.
pub fn series_csv(report: &ComparisonReport, method: Method, panel: Panel) -> String {
    let mut out = String::from("n,mean,q10,q90\n");
    for row in report.rows.iter().filter(|r| r.method == method) {
        if let Some(b) = panel.band(row) {
            let _ = writeln!(out, "{},{},{},{}", row.n, b.mean, b.q10, b.q90);
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per trial.
pub fn trials_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("method,n,trial,certificate,true_cost,covered,error\n");
    for r in &report.trials {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method.name(),
            r.n,
            r.trial,
            opt(r.certificate),
            opt(r.true_cost),
            r.covered,
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    out
}

fn colour(method: Method) -> &'static str {
    match method {
        Method::Bnwdro => "#d62728",
        Method::Wdro => "#1f77b4",
        Method::Mdro => "#2ca02c",
        Method::Saa => "#7f7f7f",
    }
}

/// Line-plus-band chart: dashed mean and a shaded 10%–90% band per method,
/// against N on evenly spaced ticks. The out-of-sample panel also draws the
/// reference cost.
pub fn render_svg(report: &ComparisonReport, panel: Panel) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 500.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 350.0;
    let sizes = &report.sizes;
    let xs = |k: usize| {
        if sizes.len() <= 1 {
            (LEFT + RIGHT) / 2.0
        } else {
            LEFT + (RIGHT - LEFT) * k as f64 / (sizes.len() - 1) as f64
        }
    };
    let reference = match panel {
        Panel::OutOfSample => report.reference.as_ref().map(|r| r.cost),
        _ => None,
    };
    let bands: Vec<(Method, Vec<(usize, Band)>)> = report
        .methods
        .iter()
        .map(|&m| {
            let pts = sizes
                .iter()
                .enumerate()
                .filter_map(|(k, &n)| report.row(m, n).and_then(|r| panel.band(r)).map(|b| (k, b)))
                .collect();
            (m, pts)
        })
        .collect();
    let values = bands.iter().flat_map(|(_, p)| p.iter().flat_map(|(_, b)| [b.q10, b.mean, b.q90])).chain(reference);
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo, hi) = (lo - pad, hi + pad);
    let ys = |v: f64| BOTTOM - (BOTTOM - TOP) * (v - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{} ({})</text>"#,
        (LEFT + RIGHT) / 2.0,
        panel.title(),
        report.experiment
    );
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT:.2},{TOP:.2} L{LEFT:.2},{BOTTOM:.2} L{RIGHT:.2},{BOTTOM:.2}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = ys(v);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, LEFT - 8.0, y + 4.0);
    }
    for (k, n) in sizes.iter().enumerate() {
        let x = xs(k);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{BOTTOM:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, BOTTOM + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#, BOTTOM + 20.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">N</text>"#, (LEFT + RIGHT) / 2.0, BOTTOM + 40.0);
    for (m, pts) in &bands {
        if pts.is_empty() {
            continue;
        }
        let c = colour(*m);
        let upper = pts.iter().map(|(k, b)| format!("{:.2},{:.2}", xs(*k), ys(b.q90)));
        let lower = pts.iter().rev().map(|(k, b)| format!("{:.2},{:.2}", xs(*k), ys(b.q10)));
        let ring: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, ring.join(" "));
        let mean: Vec<String> = pts.iter().map(|(k, b)| format!("{:.2},{:.2}", xs(*k), ys(b.mean))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2" stroke-dasharray="6 4"/>"#,
            mean.join(" ")
        );
    }
    if let Some(r) = reference {
        let y = ys(r);
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{RIGHT:.2}" y2="{y:.2}" stroke="black" stroke-dasharray="2 3"/>"#
        );
    }
    let mut y = TOP + 10.0;
    for (m, _) in &bands {
        let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="14" height="10" fill="{}"/>"#, RIGHT + 20.0, y - 9.0, colour(*m));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, RIGHT + 40.0, m.name());
        y += 18.0;
    }
    if reference.is_some() {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="2 3"/>"#,
            RIGHT + 20.0,
            y - 4.0,
            RIGHT + 34.0,
            y - 4.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y:.2}">reference</text>"#, RIGHT + 40.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.json`, `trials.csv`, per-method `<method>_<panel>.csv`
/// series and one SVG per panel into `dir`.
pub fn emit_report(report: &ComparisonReport, dir: &Path) -> Result<(), ReportError> {
    if report.trials.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("trials.csv"), trials_csv(report))?;
    for &m in &report.methods {
        for p in Panel::ALL {
            std::fs::write(dir.join(format!("{}_{}.csv", m.name(), p.file_stem())), series_csv(report, m, p))?;
        }
    }
    for p in Panel::ALL {
        std::fs::write(dir.join(format!("{}.svg", p.file_stem())), render_svg(report, p))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let b = Band::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(b.mean, 3.0);
        assert!((b.q10 - 1.4).abs() < 1e-12 && (b.q90 - 4.6).abs() < 1e-12);
        assert_eq!(Band::of(&[]), None);
        let one = Band::of(&[7.0]).unwrap();
        assert_eq!((one.q10, one.mean, one.q90), (7.0, 7.0, 7.0));
    }

    #[test]
    fn wilson_interval() {
        let b = Band::coverage(19, 20).unwrap();
        assert_eq!(b.mean, 0.95);
        assert!(b.q10 < 0.95 && 0.95 < b.q90 && b.q90 <= 1.0);
        let all = Band::coverage(20, 20).unwrap();
        assert_eq!(all.q90, 1.0);
        assert!(all.q10 < 1.0);
        // closed form at p = 1: n / (n + z²)
        let z2 = 1.281_551_565_544_600_5f64.powi(2);
        assert!((all.q10 - 20.0 / (20.0 + z2)).abs() < 1e-12);
    }

    #[test]
    fn heavy_tail_is_a_warning() {
        let mut trials: Vec<TrialRow> = (0..10)
            .map(|t| TrialRow {
                method: Method::Saa,
                n: 5,
                trial: t,
                certificate: Some(0.0),
                true_cost: Some(0.0),
                covered: true,
                decision: vec![],
                error: None,
            })
            .collect();
        trials[9].certificate = Some(1e6);
        let r = ComparisonReport::assemble("t", 0, 0.95, &[5], &[Method::Saa], None, trials);
        assert!(r.warnings.iter().any(|w| w.contains("heavy tail")), "{:?}", r.warnings);
    }

    #[test]
    fn empty_report_is_refused() {
        let r = ComparisonReport::assemble("t", 0, 0.95, &[5], &[Method::Saa], None, vec![]);
        let dir = std::env::temp_dir();
        assert!(matches!(emit_report(&r, &dir), Err(ReportError::EmptyReport)));
    }
}
