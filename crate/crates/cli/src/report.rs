//! Report files: CSV tables, a JSON document and SVG plots.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use oll_core::verifier::VerificationReport;

use crate::config::Format;

pub const INDEX_FILE: &str = "index.txt";
pub const JSON_FILE: &str = "reports.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// 17 significant digits; `inf`, `-inf`, `nan` for the rest.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// File stem for a report name: alphanumerics, `-` and `_` kept, the rest mapped to `_`.
pub fn stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn write_csv(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

/// Per-sample table of one report.
pub fn report_csv(r: &VerificationReport) -> io::Result<Vec<u8>> {
    match &r.table {
        Some(t) => write_csv(&t.header, t.rows.iter().map(|row| row.iter().map(|&x| fmt17(x)).collect())),
        None => write_csv(
            &["lhs".to_string(), "rhs".to_string()],
            r.lhs.iter().zip(&r.rhs).map(|(l, rr)| vec![fmt17(*l), fmt17(*rr)]),
        ),
    }
}

pub fn summary_csv(reports: &[VerificationReport]) -> io::Result<Vec<u8>> {
    let header: Vec<String> =
        ["name", "min_constant", "stability_ratio", "passed", "flagged", "notes"].iter().map(|s| s.to_string()).collect();
    write_csv(
        &header,
        reports.iter().map(|r| {
            vec![
                r.name.clone(),
                fmt17(r.min_constant),
                r.stability_ratio.map_or(String::new(), fmt17),
                r.passed.to_string(),
                r.flagged.to_string(),
                r.notes.join("; "),
            ]
        }),
    )
}

pub fn reports_json(reports: &[VerificationReport]) -> io::Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(reports).map_err(io::Error::from)?;
    v.push(b'\n');
    Ok(v)
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 60.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Log-log line plot of several series against a common abscissa; nonpositive points are dropped.
pub fn loglog_svg(title: &str, xlabel: &str, x: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let pos = |v: f64| v > 0.0 && v.is_finite();
    let xs: Vec<f64> = x.iter().cloned().filter(|v| pos(*v)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.1.iter().cloned()).filter(|v| pos(*v)).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min).log10();
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max).log10();
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let px = |v: f64| M + (v.log10() - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |v: f64| H - M - (v.log10() - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, H - 15.0, escape(xlabel));
    for (k, (label, x_or_y)) in [("x", (x0, x1)), ("y", (y0, y1))].iter().enumerate() {
        let (lo, hi) = *x_or_y;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11">{label}: 1e{lo:.2} .. 1e{hi:.2}</text>"#,
            M,
            H - 40.0 + 12.0 * k as f64
        );
    }
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(ys)
            .filter(|(a, b)| pos(**a) && pos(**b))
            .map(|(a, b)| format!("{:.2},{:.2}", px(*a), py(*b)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            W - M - 80.0,
            M + 16.0 * (i + 1) as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn column(r: &VerificationReport, name: &str) -> Option<Vec<f64>> {
    let t = r.table.as_ref()?;
    let j = t.header.iter().position(|h| h == name)?;
    Some(t.rows.iter().map(|row| row[j]).collect())
}

/// Level-set measures against lambda, or error against h; `None` for other reports.
pub fn report_svg(r: &VerificationReport) -> Option<String> {
    if let Some(lam) = column(r, "lambda") {
        let series: Vec<(&str, Vec<f64>)> =
            ["V1", "V2", "V3", "V", "W"].iter().filter_map(|k| column(r, k).map(|c| (*k, c))).collect();
        return Some(loglog_svg(&format!("{} level sets", r.name), "lambda", &lam, &series));
    }
    if let (Some(h), Some(err)) = (column(r, "h"), column(r, "error")) {
        return Some(loglog_svg(&format!("{} refinement", r.name), "h", &h, &[("error", err)]));
    }
    None
}

/// Writes the requested formats to `dir` and an index of every file written.
pub fn emit_report(reports: &[VerificationReport], formats: &[Format], dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written: Vec<String> = Vec::new();
    let put = |name: String, bytes: &[u8], written: &mut Vec<String>| -> io::Result<()> {
        std::fs::write(dir.join(&name), bytes)?;
        written.push(name);
        Ok(())
    };
    let stems = unique_stems(reports);
    if !reports.is_empty() {
        for f in formats {
            match f {
                Format::Csv => {
                    put(SUMMARY_FILE.into(), &summary_csv(reports)?, &mut written)?;
                    for (r, s) in reports.iter().zip(&stems) {
                        put(format!("{s}.csv"), &report_csv(r)?, &mut written)?;
                    }
                }
                Format::Json => put(JSON_FILE.into(), &reports_json(reports)?, &mut written)?,
                Format::Svg => {
                    for (r, s) in reports.iter().zip(&stems) {
                        if let Some(svg) = report_svg(r) {
                            put(format!("{s}.svg"), svg.as_bytes(), &mut written)?;
                        }
                    }
                }
            }
        }
    }
    written.sort();
    let index: String = written.iter().map(|w| format!("{w}\n")).collect();
    std::fs::write(dir.join(INDEX_FILE), index)?;
    Ok(written.iter().map(|w| dir.join(w)).collect())
}

fn unique_stems(reports: &[VerificationReport]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    reports
        .iter()
        .map(|r| {
            let base = stem(&r.name);
            let mut s = base.clone();
            let mut k = 1;
            while seen.contains(&s) || s == "summary" || s == "index" {
                k += 1;
                s = format!("{base}_{k}");
            }
            seen.push(s.clone());
            s
        })
        .collect()
}

pub fn load_reports(dir: &Path) -> io::Result<Vec<VerificationReport>> {
    let text = std::fs::read_to_string(dir.join(JSON_FILE))?;
    serde_json::from_str(&text).map_err(io::Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use oll_core::verifier::Table;

    fn theorem_a_like() -> VerificationReport {
        let mut r = VerificationReport::new("theorem_a");
        r.push(0.0, 1.0);
        r.table = Some(Table {
            header: "lambda,V1,V2,V3,V,W,minC".split(',').map(String::from).collect(),
            rows: vec![vec![0.1, 2.0, 0.0, 1.0, 0.5, 3.0, 0.0], vec![1.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0]],
        });
        r.finish()
    }

    #[test]
    fn nonfinite_values_survive_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = VerificationReport::new("lorentz");
        r.push(1.0, 0.0);
        r.extra("s", f64::INFINITY);
        r.table = Some(Table { header: vec!["s".into(), "v".into()], rows: vec![vec![f64::INFINITY, f64::NEG_INFINITY]] });
        let r = r.finish();
        emit_report(std::slice::from_ref(&r), &[Format::Json], dir.path()).unwrap();
        let back = load_reports(dir.path()).unwrap();
        assert_eq!(back[0].table, r.table);
        assert_eq!(back[0].get_extra("s"), Some(f64::INFINITY));
        assert_eq!(back[0].min_constant.to_bits(), r.min_constant.to_bits());
    }

    #[test]
    fn seventeen_digits_roundtrip() {
        for x in [0.1, 1.0 / 3.0, 2.5e-300, -7.0, 0.0] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt17(f64::INFINITY), "inf");
    }

    #[test]
    fn empty_list_gives_empty_index() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[], &[Format::Csv, Format::Json, Format::Svg], dir.path()).unwrap();
        assert!(files.is_empty());
        assert_eq!(std::fs::read(dir.path().join(INDEX_FILE)).unwrap(), b"");
    }

    #[test]
    fn theorem_a_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&[theorem_a_like()], &[Format::Csv], dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("theorem_a.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "lambda,V1,V2,V3,V,W,minC");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn csv_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let r = theorem_a_like();
        emit_report(std::slice::from_ref(&r), &[Format::Json, Format::Csv], dir.path()).unwrap();
        let back = load_reports(dir.path()).unwrap();
        assert_eq!(back, vec![r.clone()]);
        let mut rd = csv::Reader::from_path(dir.path().join("theorem_a.csv")).unwrap();
        let rows: Vec<Vec<f64>> = rd.records().map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect()).collect();
        assert_eq!(&rows, &r.table.unwrap().rows);
        let mut sm = csv::Reader::from_path(dir.path().join(SUMMARY_FILE)).unwrap();
        let first = sm.records().next().unwrap().unwrap();
        assert_eq!(first[1].parse::<f64>().unwrap(), back[0].min_constant);
    }

    #[test]
    fn quoting_and_svg() {
        let mut r = VerificationReport::new("odd, \"name\"");
        r.notes.push("a, b".into());
        let bytes = summary_csv(&[r.clone()]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("\"odd, \"\"name\"\"\""));
        assert!(report_svg(&r).is_none());
        let svg = report_svg(&theorem_a_like()).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
        assert_eq!(stem("odd, \"name\""), "odd___name_");
    }
}
