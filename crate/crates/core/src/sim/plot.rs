//! SVG charts of rejection rate against block count.

use std::fmt::Write as _;
use std::io::Write;

use super::{DesignKind, ResultRecord};
use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

/// Cells drawn on one chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotKey {
    pub two_n: usize,
    pub p: usize,
    pub beta_t: f64,
}

impl PlotKey {
    pub fn file_name(&self) -> String {
        format!("rate_2n{}_p{}_betaT{}.svg", self.two_n, self.p, self.beta_t)
    }

    fn matches(&self, r: &ResultRecord) -> bool {
        r.two_n == self.two_n && r.p == self.p && r.beta_t.to_bits() == self.beta_t.to_bits()
    }
}

/// Successful records grouped by `(2n, p, beta_T)`, in order of first appearance.
pub fn plot_groups(records: &[ResultRecord]) -> Vec<(PlotKey, Vec<&ResultRecord>)> {
    let mut groups: Vec<(PlotKey, Vec<&ResultRecord>)> = Vec::new();
    for r in records.iter().filter(|r| r.rate.is_some()) {
        match groups.iter_mut().find(|(k, _)| k.matches(r)) {
            Some((_, members)) => members.push(r),
            None => groups.push((
                PlotKey {
                    two_n: r.two_n,
                    p: r.p,
                    beta_t: r.beta_t,
                },
                vec![r],
            )),
        }
    }
    for (_, members) in &mut groups {
        members.sort_by_key(|r| r.blocks);
    }
    groups
}

/// Step for y-axis ticks covering `[0, top]`.
fn tick_step(top: f64) -> f64 {
    let raw = top / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag)
}

/// Rate with 95% error bars against `B` on evenly spaced positions. Blocked
/// designs are joined by a line; the pairwise-matching cell stands apart.
pub fn write_svg<W: Write>(mut w: W, key: &PlotKey, records: &[&ResultRecord]) -> Result<()> {
    let (blocked, paired): (Vec<&ResultRecord>, Vec<&ResultRecord>) = records
        .iter()
        .filter(|r| r.rate.is_some())
        .partition(|r| r.design != DesignKind::PairwiseMatch);
    let slots = blocked.len() + if paired.is_empty() { 0 } else { paired.len() + 1 };
    let slots = slots.max(1);
    let top_data = records
        .iter()
        .filter_map(|r| r.ci_high.or(r.rate))
        .fold(0.0, f64::max);
    let step = tick_step((top_data * 1.1).max(0.1));
    let y_max = (top_data * 1.1 / step).ceil().max(1.0) * step;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_at = |slot: usize| LEFT + plot_w * (slot as f64 + 0.5) / slots as f64;
    let y_at = |v: f64| TOP + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">2n = {}, p = {}, betaT = {}</text>"#,
        WIDTH / 2.0,
        key.two_n,
        key.p,
        key.beta_t
    );
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP + plot_h, TOP);
    let _ = writeln!(
        s,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    let mut tick = 0.0;
    while tick <= y_max + 1e-12 {
        let y = y_at(tick);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0,
            format_tick(tick)
        );
        tick += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">rejection rate</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">B</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );

    let mut placed: Vec<(usize, &ResultRecord)> = blocked.iter().enumerate().map(|(k, r)| (k, *r)).collect();
    placed.extend(paired.iter().enumerate().map(|(k, r)| (blocked.len() + 1 + k, *r)));

    if blocked.len() > 1 {
        let points: Vec<String> = placed
            .iter()
            .filter(|(_, r)| r.design != DesignKind::PairwiseMatch)
            .map(|&(k, r)| format!("{:.2},{:.2}", x_at(k), y_at(r.rate.unwrap_or(0.0))))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f4e99"/>"##,
            points.join(" ")
        );
    }
    for &(k, r) in &placed {
        let x = x_at(k);
        let rate = r.rate.unwrap_or(0.0);
        let lo = y_at(r.ci_low.unwrap_or(rate));
        let hi = y_at(r.ci_high.unwrap_or(rate));
        let colour = if r.design == DesignKind::PairwiseMatch {
            "#b22222"
        } else {
            "#1f4e99"
        };
        let _ = writeln!(
            s,
            r#"<path d="M{x:.2},{lo:.2} L{x:.2},{hi:.2} M{:.2},{lo:.2} L{:.2},{lo:.2} M{:.2},{hi:.2} L{:.2},{hi:.2}" stroke="{colour}"/>"#,
            x - 4.0,
            x + 4.0,
            x - 4.0,
            x + 4.0
        );
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{:.2}" r="3.5" fill="{colour}"/>"#,
            y_at(rate)
        );
        let label = if r.design == DesignKind::PairwiseMatch {
            format!("PM ({})", r.blocks)
        } else {
            r.blocks.to_string()
        };
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#,
            y0 + 18.0
        );
    }
    s.push_str("</svg>\n");
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn format_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}
