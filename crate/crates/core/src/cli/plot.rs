//! Self-contained SVG figures: success-rate curves over a log epsilon axis
//! and per-algorithm SIR histograms.

use std::fmt::Write;

use crate::simbench::{Algorithm, Background, ExperimentResult};

const PALETTE: [&str; 12] = [
    "#000000", "#7f7f7f", "#1f77b4", "#ff7f0e", "#2ca02c", "#17becf", "#bcbd22", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#393b79",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn header(out: &mut String, width: f64, height: f64, digest: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, "<!-- manifest={digest} -->");
    let _ = writeln!(out, "<metadata>manifest={digest}</metadata>");
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

/// Horizontal position of each epsilon level in decades; a zero level sits
/// one decade left of the smallest positive one.
fn log_positions(eps: &[f64]) -> Vec<f64> {
    let min_pos = eps.iter().copied().filter(|e| *e > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if min_pos.is_finite() { min_pos.log10() - 1.0 } else { 0.0 };
    eps.iter().map(|&e| if e > 0.0 { e.log10() } else { floor }).collect()
}

fn eps_label(e: f64) -> String {
    if e <= 0.0 {
        "0".into()
    } else {
        format!("1e{}", e.log10().round() as i64)
    }
}

/// One panel per background: success rate (%) against `epsilon^2`.
pub fn success_curves(result: &ExperimentResult, digest: &str) -> String {
    let cfg = &result.config;
    let (pw, ph, left, top, legend) = (360.0, 260.0, 55.0, 35.0, 150.0);
    let width = left + cfg.backgrounds.len() as f64 * (pw + left) + legend;
    let height = top + ph + 50.0;
    let mut out = String::new();
    header(&mut out, width, height, digest);
    let xs = log_positions(&cfg.epsilon_sq);
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    for (bi, bg) in cfg.backgrounds.iter().enumerate() {
        let x0 = left + bi as f64 * (pw + left);
        let px = |x: f64| x0 + 10.0 + (x - xmin) / span * (pw - 20.0);
        let py = |rate: f64| top + ph - rate * ph;
        let _ = writeln!(out, r#"<g class="panel" data-background="{}">"#, bg.label());
        let _ = writeln!(out, r#"<rect x="{x0}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{} background</text>"#, x0 + pw / 2.0, top - 12.0, bg.label());
        for tick in 0..=5 {
            let r = tick as f64 / 5.0;
            let _ = writeln!(out, r##"<line x1="{x0}" x2="{}" y1="{y}" y2="{y}" stroke="#dddddd"/>"##, x0 + pw, y = py(r));
            let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, py(r) + 4.0, tick * 20);
        }
        for (&x, &e) in xs.iter().zip(&cfg.epsilon_sq) {
            let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(x), top + ph + 15.0, eps_label(e));
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">initial error epsilon^2</text>"#, x0 + pw / 2.0, top + ph + 35.0);
        for (ai, &alg) in cfg.algorithms.iter().enumerate() {
            let pts: Vec<(f64, f64)> = xs
                .iter()
                .zip(&cfg.epsilon_sq)
                .map(|(&x, &e)| (px(x), py(result.success_rate(alg, *bg, e))))
                .collect();
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                out,
                r#"<polyline data-algorithm="{}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                alg.label(),
                path.join(" "),
                color(ai)
            );
            for (x, y) in pts {
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{}"/>"#, color(ai));
            }
        }
        let _ = writeln!(out, "</g>");
    }
    let lx = width - legend + 10.0;
    let _ = writeln!(out, r#"<text x="{}" y="{}" transform="rotate(-90 {} {})" text-anchor="middle">success rate [%]</text>"#, 15.0, top + ph / 2.0, 15.0, top + ph / 2.0);
    for (ai, alg) in cfg.algorithms.iter().enumerate() {
        let y = top + 10.0 + ai as f64 * 16.0;
        let _ = writeln!(out, r#"<line x1="{lx}" x2="{}" y1="{y}" y2="{y}" stroke="{}" stroke-width="2"/>"#, lx + 18.0, color(ai));
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, y + 4.0, alg.label());
    }
    out.push_str("</svg>\n");
    out
}

/// Grid of SIR histograms for one background: a row per algorithm and a
/// column per `epsilon^2`.
pub fn histograms(result: &ExperimentResult, background: Background, digest: &str) -> String {
    let cfg = &result.config;
    let (cw, ch, left, top, gap) = (170.0, 70.0, 110.0, 40.0, 12.0);
    let width = left + cfg.epsilon_sq.len() as f64 * (cw + gap) + 10.0;
    let height = top + cfg.algorithms.len() as f64 * (ch + gap) + 30.0;
    let mut out = String::new();
    header(&mut out, width, height, digest);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle">output SIR [dB], {} background</text>"#, width / 2.0, background.label());
    for (ei, &e) in cfg.epsilon_sq.iter().enumerate() {
        let x0 = left + ei as f64 * (cw + gap);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">epsilon^2 = {}</text>"#, x0 + cw / 2.0, top - 8.0, eps_label(e));
    }
    for (ai, &alg) in cfg.algorithms.iter().enumerate() {
        let y0 = top + ai as f64 * (ch + gap);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, y0 + ch / 2.0 + 4.0, alg.label());
        for (ei, &e) in cfg.epsilon_sq.iter().enumerate() {
            let x0 = left + ei as f64 * (cw + gap);
            cell(&mut out, result, alg, background, e, x0, y0, cw, ch, color(ai));
        }
    }
    let y = top + cfg.algorithms.len() as f64 * (ch + gap) + 10.0;
    for (ei, _) in cfg.epsilon_sq.iter().enumerate() {
        let x0 = left + ei as f64 * (cw + gap);
        for (v, anchor) in [(-50, "start"), (0, "middle"), (50, "end")] {
            let x = x0 + (v as f64 + 50.0) / 100.0 * cw;
            let _ = writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v}</text>"#);
        }
    }
    out.push_str("</svg>\n");
    out
}

#[allow(clippy::too_many_arguments)]
fn cell(out: &mut String, result: &ExperimentResult, alg: Algorithm, bg: Background, eps: f64, x0: f64, y0: f64, w: f64, h: f64, fill: &str) {
    let hist = result.histogram(alg, bg, Some(eps));
    let peak = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black" stroke-width="0.5"/>"#);
    let zero = x0 + w / 2.0;
    let _ = writeln!(out, r##"<line x1="{zero}" x2="{zero}" y1="{y0}" y2="{}" stroke="#999999" stroke-dasharray="2,2"/>"##, y0 + h);
    let bw = w / hist.counts.len() as f64;
    for (b, &c) in hist.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let bh = c as f64 / peak * (h - 4.0);
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            x0 + b as f64 * bw,
            y0 + h - bh,
            bw,
            bh
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epsilon_sits_left_of_the_log_axis() {
        assert_eq!(log_positions(&[0.0, 1e-2, 1.0]), vec![-3.0, -2.0, 0.0]);
        assert_eq!(eps_label(0.0), "0");
        assert_eq!(eps_label(1e-3), "1e-3");
    }
}
