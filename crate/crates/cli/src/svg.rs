//! Scatter plots and heat tables for eyeballing runs.

use std::fmt::Write;

use s2dm::SampleBatch;

const SIZE: f64 = 512.0;
const MARGIN: f64 = 0.05;
const RADIUS: f64 = 1.5;

/// Axis box covering the first two coordinates of every batch.
fn bounds(batches: &[&SampleBatch]) -> [(f64, f64); 2] {
    let mut b = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for batch in batches {
        for row in batch.rows() {
            for (axis, lim) in b.iter_mut().enumerate() {
                let v = row.get(axis).copied().unwrap_or(0.0);
                lim.0 = lim.0.min(v);
                lim.1 = lim.1.max(v);
            }
        }
    }
    for lim in &mut b {
        if !lim.0.is_finite() {
            *lim = (-1.0, 1.0);
        } else if lim.1 - lim.0 < 1e-12 {
            *lim = (lim.0 - 1.0, lim.1 + 1.0);
        }
    }
    b
}

fn panel(out: &mut String, batch: &SampleBatch, b: [(f64, f64); 2], dx: f64) {
    let inner = SIZE * (1.0 - 2.0 * MARGIN);
    let off = SIZE * MARGIN;
    for row in batch.rows() {
        let x = row.first().copied().unwrap_or(0.0);
        let y = row.get(1).copied().unwrap_or(0.0);
        let px = dx + off + (x - b[0].0) / (b[0].1 - b[0].0) * inner;
        let py = off + (1.0 - (y - b[1].0) / (b[1].1 - b[1].0)) * inner;
        let _ = writeln!(out, r#"<circle cx="{px:.3}" cy="{py:.3}" r="{RADIUS}"/>"#);
    }
}

pub fn scatter(batch: &SampleBatch) -> String {
    strip(std::slice::from_ref(batch))
}

/// Panels side by side, one 512-unit square each, sharing one axis fit.
pub fn strip(batches: &[SampleBatch]) -> String {
    let refs: Vec<&SampleBatch> = batches.iter().collect();
    let b = bounds(&refs);
    let width = SIZE * batches.len().max(1) as f64;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {SIZE}" width="{width}" height="{SIZE}">"#
    );
    s += "\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g fill=\"black\" fill-opacity=\"0.6\">\n";
    for (i, batch) in batches.iter().enumerate() {
        panel(&mut s, batch, b, i as f64 * SIZE);
    }
    s += "</g>\n</svg>\n";
    s
}

/// Colored grid of `values[row][col]`, lower values lighter.
pub fn heat_table(row_labels: &[String], col_labels: &[String], values: &[Vec<f64>], marked: &[(usize, usize)]) -> String {
    let (cw, ch, lw) = (96.0, 32.0, 120.0);
    let w = lw + cw * col_labels.len() as f64;
    let h = ch * (row_labels.len() + 1) as f64;
    let finite: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{w}" height="{h}" font-family="monospace" font-size="12">"#
    );
    s.push('\n');
    for (j, c) in col_labels.iter().enumerate() {
        let x = lw + cw * (j as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x}" y="20" text-anchor="middle">{c}</text>"#);
    }
    for (i, r) in row_labels.iter().enumerate() {
        let y = ch * (i + 1) as f64;
        let _ = writeln!(s, r#"<text x="4" y="{}">{r}</text>"#, y + 20.0);
        for (j, v) in values[i].iter().enumerate() {
            let f = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let shade = (255.0 * (1.0 - 0.8 * f)).round() as u8;
            let x = lw + cw * j as f64;
            let stroke = if marked.contains(&(i, j)) { r#" stroke="black" stroke-width="2""# } else { "" };
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="rgb(255,{shade},{shade})"{stroke}/>"#
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{v:.4}</text>"#,
                x + cw / 2.0,
                y + 20.0
            );
        }
    }
    s += "</svg>\n";
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_point() {
        let b = SampleBatch::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 3.0]]).unwrap();
        let s = scatter(&b);
        assert_eq!(s.matches("<circle").count(), 3);
        assert!(s.contains(r#"viewBox="0 0 512 512""#));
        // extreme points sit on the margin lines
        assert!(s.contains(r#"cx="25.600""#));
        assert!(s.contains(r#"cx="486.400""#));
    }

    #[test]
    fn degenerate_batch_is_drawable() {
        let b = SampleBatch::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(!scatter(&b).contains("NaN"));
        assert!(!scatter(&SampleBatch::zeros(0, 2)).contains("NaN"));
    }
}
