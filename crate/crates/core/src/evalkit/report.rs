use std::fmt::Write;

use super::metrics::{AggregateMetrics, Histogram, PhraseMetrics, ThresholdSweep};

pub const AGGREGATE_LABEL: &str = "aggregate";

fn det_rows(out: &mut String, label: &str, s: &ThresholdSweep) {
    for k in 0..s.len() {
        writeln!(out, "{label},{:.2},{:.6},{:.6}", s.thresholds()[k], s.far()[k], s.frr()[k]).unwrap();
    }
}

/// `phrase,threshold,far,frr`, per phrase then the aggregate curve.
pub fn det_csv(phrases: &[PhraseMetrics], agg: &AggregateMetrics) -> String {
    let mut out = String::from("phrase,threshold,far,frr\n");
    for p in phrases {
        det_rows(&mut out, &p.phrase, &p.det);
    }
    det_rows(&mut out, AGGREGATE_LABEL, &agg.det);
    out
}

/// `phrase,auc,eer`, per phrase then the aggregate means.
pub fn metrics_csv(phrases: &[PhraseMetrics], agg: &AggregateMetrics) -> String {
    let mut out = String::from("phrase,auc,eer\n");
    for p in phrases {
        writeln!(out, "{},{:.6},{:.6}", p.phrase, p.auc, p.eer).unwrap();
    }
    writeln!(out, "{AGGREGATE_LABEL},{:.6},{:.6}", agg.auc, agg.eer).unwrap();
    out
}

/// `phrase,bin_low,pos_prob,neg_prob`; the underflow bin is listed with
/// `bin_low` -1.00 and the exact-1.0 bin with 1.00.
pub fn histogram_csv(hists: &[&Histogram]) -> String {
    let mut out = String::from("phrase,bin_low,pos_prob,neg_prob\n");
    for h in hists {
        let (p, n) = (&h.positives, &h.negatives);
        writeln!(out, "{},-1.00,{:.6},{:.6}", h.phrase, p.underflow, n.underflow).unwrap();
        for k in 0..p.bins.len() {
            writeln!(out, "{},{:.2},{:.6},{:.6}", h.phrase, k as f64 / 100.0, p.bins[k], n.bins[k]).unwrap();
        }
        writeln!(out, "{},1.00,{:.6},{:.6}", h.phrase, p.overflow, n.overflow).unwrap();
    }
    out
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, xml(title)).unwrap();
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (x0 + x1) / 2.0, H - 12.0).unwrap();
    writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    )
    .unwrap();
    for v in [0.0, 0.5, 1.0] {
        let (x, y) = (px(v), py(v));
        writeln!(out, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{v:.1}</text>"#, y0 + 16.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, y + 4.0).unwrap();
    }
}

fn px(v: f64) -> f64 {
    PAD + v * (W - 1.5 * PAD)
}

fn py(v: f64) -> f64 {
    (H - PAD) - v * (H - 2.0 * PAD)
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// FRR against FAR on linear axes, one polyline per curve.
pub fn det_svg(title: &str, curves: &[(&str, &ThresholdSweep)]) -> String {
    let mut out = String::new();
    frame(&mut out, title, "FAR", "FRR");
    for (i, (label, s)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .far()
            .iter()
            .zip(s.frr())
            .map(|(a, r)| format!("{:.2},{:.2}", px(*a), py(*r)))
            .collect();
        writeln!(out, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, pts.join(" ")).unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            W - 1.5 * PAD - 60.0,
            PAD + 14.0 * (i as f64 + 1.0),
            xml(label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Positive and negative score distributions as overlaid bars.
pub fn histogram_svg(h: &Histogram) -> String {
    let mut out = String::new();
    frame(&mut out, &format!("{} scores", h.phrase), "score bin", "probability");
    let peak = h
        .positives
        .bins
        .iter()
        .chain(&h.negatives.bins)
        .chain([h.positives.underflow, h.positives.overflow, h.negatives.underflow, h.negatives.overflow].iter())
        .fold(0.0f64, |m, v| m.max(*v))
        .max(1e-12);
    let bar = |out: &mut String, slot: usize, p: f64, color: &str| {
        if p > 0.0 {
            // slot 0 is underflow, 1..=100 the grid bins, 101 the exact-1.0 bin
            let x = px(slot as f64 / 102.0);
            let w = px(1.0 / 102.0) - px(0.0);
            let top = py(p / peak);
            writeln!(
                out,
                r#"<rect x="{x:.2}" y="{top:.2}" width="{w:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                py(0.0) - top
            )
            .unwrap();
        }
    };
    for (d, color) in [(&h.negatives, COLORS[1]), (&h.positives, COLORS[0])] {
        bar(&mut out, 0, d.underflow, color);
        for (k, p) in d.bins.iter().enumerate() {
            bar(&mut out, k + 1, *p, color);
        }
        bar(&mut out, 101, d.overflow, color);
    }
    out.push_str("</svg>\n");
    out
}
