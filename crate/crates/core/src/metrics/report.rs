//! CSV, SVG and text-table rendering. Every function here is a pure
//! formatter: identical inputs give identical bytes.

use std::fmt::Write as _;

use super::bd::BdResult;
use crate::prune::PruneTrace;

pub const TRACE_CSV_HEADER: &str = "iteration,params,psnr_db,infer_time_s,removed_channels,accepted";

/// `1234567 -> "1,234,567"`.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// One row per pruning attempt (the unpruned baseline is not an attempt).
pub fn trace_csv(trace: &PruneTrace) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.6},{},{}",
            r.iteration,
            r.params,
            r.psnr_db,
            r.infer_time_s,
            r.removed_channels(),
            r.accepted
        );
    }
    out
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo { 0.1 * (hi - lo) } else { lo.abs().max(1.0) * 0.05 };
        Axis {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn map(&self, v: f64, top: f64, bottom: f64) -> f64 {
        let v = if v.is_finite() { v } else { self.hi };
        bottom - (v - self.lo) / (self.hi - self.lo) * (bottom - top)
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 570.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 350.0;
const TICKS: usize = 5;
const PSNR_COLOR: &str = "#1f5fa8";
const TIME_COLOR: &str = "#c0392b";

/// PSNR (left axis) and inference time (right axis) against the attempt
/// index, with the unpruned model as attempt 0. Rejected attempts are drawn
/// as hollow markers. `None` for a trace without attempts.
pub fn trace_svg(trace: &PruneTrace) -> Option<String> {
    if trace.records.is_empty() {
        return None;
    }
    let mut xs = vec![0.0];
    let mut psnr = vec![trace.baseline.psnr_db];
    let mut time = vec![trace.baseline.infer_time_s];
    let mut accepted = vec![true];
    for r in &trace.records {
        xs.push(r.iteration as f64);
        psnr.push(r.psnr_db);
        time.push(r.infer_time_s);
        accepted.push(r.accepted);
    }
    let x_max = xs.last().copied().unwrap_or(1.0).max(1.0);
    let px = |x: f64| LEFT + x / x_max * (RIGHT - LEFT);
    let pa = Axis::fit(psnr.iter().copied());
    let ta = Axis::fit(time.iter().copied());

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<path d="M{LEFT} {TOP}V{BOTTOM}H{RIGHT}V{TOP}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let y = BOTTOM - f * (BOTTOM - TOP);
        let pv = pa.lo + f * (pa.hi - pa.lo);
        let tv = ta.lo + f * (ta.hi - ta.lo);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{RIGHT}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end" fill="{PSNR_COLOR}">{pv:.3}</text><text x="{:.2}" y="{:.2}" fill="{TIME_COLOR}">{tv:.4}</text>"##,
            LEFT - 6.0,
            y + 4.0,
            RIGHT + 6.0,
            y + 4.0
        );
    }
    let last = *xs.last().unwrap() as usize;
    let step = last.div_ceil(10).max(1);
    for a in (0..=last).step_by(step) {
        let x = px(a as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{a}</text>"#,
            BOTTOM + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">pruning attempt</text>"#,
        (LEFT + RIGHT) / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle" fill="{PSNR_COLOR}">validation PSNR [dB]</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" transform="rotate(90 {:.2} {:.2})" text-anchor="middle" fill="{TIME_COLOR}">inference time [s]</text>"#,
        W - 14.0,
        (TOP + BOTTOM) / 2.0,
        W - 14.0,
        (TOP + BOTTOM) / 2.0
    );
    for (values, axis, color) in [(&psnr, &pa, PSNR_COLOR), (&time, &ta, TIME_COLOR)] {
        let pts: Vec<String> = xs
            .iter()
            .zip(values.iter())
            .map(|(&x, &v)| format!("{:.2},{:.2}", px(x), axis.map(v, TOP, BOTTOM)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        for ((&x, &v), &ok) in xs.iter().zip(values.iter()).zip(&accepted) {
            let fill = if ok { color } else { "white" };
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{fill}" stroke="{color}"/>"#,
                px(x),
                axis.map(v, TOP, BOTTOM)
            );
        }
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// One model column of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportColumn {
    pub label: String,
    /// `(component, count)`, printed as `Y: 879,681`.
    pub params: Vec<(String, usize)>,
    pub time_s: Option<f64>,
    pub bd: Option<BdResult>,
    /// Mean PSNR of the filtered output per QP.
    pub qp_psnr: Vec<(i32, f64)>,
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|v| v.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| format!("{v:<w$}", w = widths[c]))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

/// Models side by side: BD metrics, per-QP PSNR, parameter counts and time.
/// `degraded` is the per-QP PSNR of the unfiltered input, shown first.
pub fn render_table(columns: &[ReportColumn], degraded: &[(i32, f64)]) -> String {
    let mut header = vec!["metric".to_string()];
    header.extend(columns.iter().map(|c| c.label.clone()));
    let mut rows = vec![header];
    let fmt_opt = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |x| format!("{x:.prec$}"));
    let mut push = |name: String, f: &dyn Fn(&ReportColumn) -> String| {
        let mut row = vec![name];
        row.extend(columns.iter().map(f));
        rows.push(row);
    };
    push("BD-rate [%]".into(), &|c| fmt_opt(c.bd.map(|b| b.bd_rate), 2));
    push("BD-PSNR [dB]".into(), &|c| fmt_opt(c.bd.map(|b| b.bd_psnr), 4));
    for &(qp, deg) in degraded {
        push(format!("PSNR qp {qp} [dB] (input {deg:.4})"), &|c| {
            fmt_opt(c.qp_psnr.iter().find(|(q, _)| *q == qp).map(|(_, p)| *p), 4)
        });
    }
    push("#Par".into(), &|c| {
        c.params
            .iter()
            .map(|(comp, n)| format!("{comp}: {}", thousands(*n)))
            .collect::<Vec<_>>()
            .join(", ")
    });
    push("Time [s]".into(), &|c| fmt_opt(c.time_s, 4));
    aligned(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub svg: Option<String>,
    pub table: String,
}

/// Bundles the trace CSV/SVG with the comparison table. When any column
/// carries a time, a note marks those values as wall-clock measurements.
pub fn render_report(
    trace: Option<&PruneTrace>,
    columns: &[ReportColumn],
    degraded: &[(i32, f64)],
) -> Report {
    let (csv, svg) = match trace {
        Some(t) => (trace_csv(t), trace_svg(t)),
        None => (format!("{TRACE_CSV_HEADER}\n"), None),
    };
    let mut table = render_table(columns, degraded);
    table.push_str("PSNR peak: 1.0 on normalized samples; rates from the DCT entropy proxy\n");
    if columns.iter().any(|c| c.time_s.is_some()) {
        table.push_str("Time values are wall-clock measurements and vary between runs\n");
    }
    Report { csv, svg, table }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::{TraceBaseline, TraceRecord};
    use std::collections::BTreeMap;

    fn trace(n: usize) -> PruneTrace {
        PruneTrace {
            baseline: TraceBaseline {
                params: 1000,
                psnr_db: 35.0,
                infer_time_s: 0.5,
            },
            threshold_db: 34.9,
            records: (1..=n)
                .map(|i| TraceRecord {
                    iteration: i,
                    params: 1000 - 100 * i,
                    psnr_db: 35.0 - 0.01 * i as f64,
                    infer_time_s: 0.5 - 0.02 * i as f64,
                    removed: BTreeMap::new(),
                    accepted: i < n,
                })
                .collect(),
            stop: None,
        }
    }

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(879_681), "879,681");
        assert_eq!(thousands(1_234_567), "1,234,567");
    }

    #[test]
    fn table_prints_parameter_counts() {
        let col = |label: &str, n| ReportColumn {
            label: label.into(),
            params: vec![("Y".into(), n)],
            time_s: None,
            bd: None,
            qp_psnr: vec![],
        };
        let t = render_table(&[col("before", 879_681), col("after", 667_265)], &[]);
        assert!(t.contains("Y: 879,681"));
        assert!(t.contains("Y: 667,265"));
    }

    #[test]
    fn empty_trace_is_header_only() {
        let r = render_report(Some(&trace(0)), &[], &[]);
        assert_eq!(r.csv, format!("{TRACE_CSV_HEADER}\n"));
        assert!(r.svg.is_none());
    }

    #[test]
    fn csv_has_one_row_per_attempt() {
        let csv = trace_csv(&trace(3));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().nth(3).unwrap(), "3,700,34.9700,0.440000,0,false");
    }

    #[test]
    fn deterministic_bytes() {
        let a = render_report(Some(&trace(4)), &[], &[(22, 30.0)]);
        let b = render_report(Some(&trace(4)), &[], &[(22, 30.0)]);
        assert_eq!(a, b);
        let svg = a.svg.unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 10);
    }
}
