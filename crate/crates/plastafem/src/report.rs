//! Deterministic serialization: number formatting, the run trace CSV,
//! a minimal JSON builder, and SVG renderings of meshes and rate plots.
//!
//! Everything here is plain string building. Output depends only on the
//! values passed in, so reruns with identical inputs produce identical
//! bytes, which the reproducibility checks compare directly.

use std::fmt::Write as _;

use crate::adaptivity::TraceRecord;
use crate::mesh::{BoundaryKind, Mesh};
use crate::Error;

/// Formats with 17 significant digits, enough for `f64` values to survive
/// a round trip through text exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const TRACE_HEADER: &str = "level,n_elements,n_dofs,eta_sq,energy,n_marked,wall_ms";

pub fn write_trace_csv(records: &[TraceRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.level,
            r.n_elements,
            r.n_dofs,
            fmt_f64(r.eta_sq),
            fmt_f64(r.energy),
            r.n_marked,
            r.wall_ms
        );
    }
    s
}

pub fn read_trace_csv(text: &str, path: &str) -> Result<Vec<TraceRecord>, Error> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                message: format!("expected header '{TRACE_HEADER}', found '{h}'"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                message: "empty file".to_string(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: i + 1,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let parse_err = |f: &str| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            message: format!("invalid number '{f}'"),
        };
        out.push(TraceRecord {
            level: fields[0].parse().map_err(|_| parse_err(fields[0]))?,
            n_elements: fields[1].parse().map_err(|_| parse_err(fields[1]))?,
            n_dofs: fields[2].parse().map_err(|_| parse_err(fields[2]))?,
            eta_sq: fields[3].parse().map_err(|_| parse_err(fields[3]))?,
            energy: fields[4].parse().map_err(|_| parse_err(fields[4]))?,
            n_marked: fields[5].parse().map_err(|_| parse_err(fields[5]))?,
            wall_ms: fields[6].parse().map_err(|_| parse_err(fields[6]))?,
        });
    }
    Ok(out)
}

/// JSON value with insertion-ordered object keys, so rendering is stable.
#[derive(Clone, Debug)]
pub enum Json {
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.write(&mut s, 0);
        s.push('\n');
        s
    }

    fn write(&self, s: &mut String, depth: usize) {
        match self {
            Json::Bool(b) => {
                let _ = write!(s, "{b}");
            }
            Json::Int(n) => {
                let _ = write!(s, "{n}");
            }
            Json::Num(x) => {
                // JSON has no non-finite literals; keep those readable as strings
                if x.is_finite() {
                    s.push_str(&fmt_f64(*x));
                } else if x.is_nan() {
                    s.push_str("\"nan\"");
                } else if *x > 0.0 {
                    s.push_str("\"inf\"");
                } else {
                    s.push_str("\"-inf\"");
                }
            }
            Json::Str(v) => write_json_string(s, v),
            Json::Arr(items) => {
                if items.is_empty() {
                    s.push_str("[]");
                    return;
                }
                s.push('[');
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        s.push(',');
                    }
                    s.push('\n');
                    indent(s, depth + 1);
                    item.write(s, depth + 1);
                }
                s.push('\n');
                indent(s, depth);
                s.push(']');
            }
            Json::Obj(entries) => {
                if entries.is_empty() {
                    s.push_str("{}");
                    return;
                }
                s.push('{');
                for (k, (key, value)) in entries.iter().enumerate() {
                    if k > 0 {
                        s.push(',');
                    }
                    s.push('\n');
                    indent(s, depth + 1);
                    write_json_string(s, key);
                    s.push_str(": ");
                    value.write(s, depth + 1);
                }
                s.push('\n');
                indent(s, depth);
                s.push('}');
            }
        }
    }
}

fn indent(s: &mut String, depth: usize) {
    for _ in 0..depth {
        s.push_str("  ");
    }
}

fn write_json_string(s: &mut String, v: &str) {
    s.push('"');
    for c in v.chars() {
        match c {
            '"' => s.push_str("\\\""),
            '\\' => s.push_str("\\\\"),
            '\n' => s.push_str("\\n"),
            '\r' => s.push_str("\\r"),
            '\t' => s.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(s, "\\u{:04x}", c as u32);
            }
            c => s.push(c),
        }
    }
    s.push('"');
}

/// Renders the mesh as an SVG: one path for all interior edges, separate
/// colored paths for the tagged boundary edges.
pub fn mesh_svg(mesh: &Mesh, title: &str) -> String {
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in 0..mesh.n_vertices() {
        let p = mesh.vertex(v);
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-30);
    let width = 760.0;
    let scale = width / span;
    // flip y so the coordinate system is the usual mathematical one
    let px = |x: f64| (x - min_x) * scale + 20.0;
    let py = |y: f64| (max_y - y) * scale + 20.0;

    let mut interior = String::new();
    let mut dirichlet = String::new();
    let mut neumann = String::new();
    for e in mesh.edges() {
        let a = mesh.vertex(e.v.0);
        let b = mesh.vertex(e.v.1);
        let seg = format!(
            "M{:.2} {:.2}L{:.2} {:.2}",
            px(a.x),
            py(a.y),
            px(b.x),
            py(b.y)
        );
        match e.boundary_kind() {
            None => interior.push_str(&seg),
            Some(BoundaryKind::Dirichlet) => dirichlet.push_str(&seg),
            Some(BoundaryKind::Neumann) => neumann.push_str(&seg),
        }
    }
    let h = (max_y - min_y) * scale + 40.0;
    let w = (max_x - min_x) * scale + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{:.0}\" viewBox=\"0 0 {w:.0} {:.0}\">",
        h + 24.0,
        h + 24.0
    );
    let _ = writeln!(s, "<title>{}</title>", xml_escape(title));
    let _ = writeln!(
        s,
        "<path d=\"{interior}\" stroke=\"#9aa4b0\" stroke-width=\"0.5\" fill=\"none\"/>"
    );
    let _ = writeln!(
        s,
        "<path d=\"{dirichlet}\" stroke=\"#b02a2a\" stroke-width=\"2\" fill=\"none\"/>"
    );
    let _ = writeln!(
        s,
        "<path d=\"{neumann}\" stroke=\"#2a62b0\" stroke-width=\"2\" fill=\"none\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"14\">{} ({} elements)</text>",
        h + 16.0,
        xml_escape(title),
        mesh.n_elements()
    );
    s.push_str("</svg>\n");
    s
}

pub struct RateSeries {
    pub label: String,
    pub color: String,
    /// Points (x, y); both must be positive, the plot is log-log.
    pub points: Vec<(f64, f64)>,
}

/// Log-log plot of one or more decreasing series, e.g. the estimator values
/// against element counts, with decade grid lines.
pub fn rates_svg(title: &str, x_label: &str, y_label: &str, series: &[RateSeries]) -> String {
    let (w, h, ml, mb, mt, mr) = (720.0, 480.0, 70.0, 50.0, 30.0, 20.0);
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if x > 0.0 && y > 0.0 {
                pts.push((x.log10(), y.log10()));
            }
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">"
    );
    let _ = writeln!(s, "<title>{}</title>", xml_escape(title));
    if pts.is_empty() {
        let _ = writeln!(
            s,
            "<text x=\"{:.0}\" y=\"{:.0}\" font-family=\"sans-serif\" font-size=\"14\">no positive data</text>",
            w / 2.0 - 50.0,
            h / 2.0
        );
        s.push_str("</svg>\n");
        return s;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mb - mt);

    // decade grid
    for d in (x0.floor() as i64)..=(x1.ceil() as i64) {
        let x = px(d as f64);
        if x < ml - 1.0 || x > w - mr + 1.0 {
            continue;
        }
        let _ = writeln!(
            s,
            "<line x1=\"{x:.1}\" y1=\"{mt:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>",
            h - mb
        );
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">1e{d}</text>",
            h - mb + 16.0
        );
    }
    for d in (y0.floor() as i64)..=(y1.ceil() as i64) {
        let y = py(d as f64);
        if y < mt - 1.0 || y > h - mb + 1.0 {
            continue;
        }
        let _ = writeln!(
            s,
            "<line x1=\"{ml:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>",
            w - mr
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">1e{d}</text>",
            ml - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<rect x=\"{ml:.1}\" y=\"{mt:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#444444\"/>",
        w - ml - mr,
        h - mb - mt
    );

    for (k, ser) in series.iter().enumerate() {
        let mut d = String::new();
        for (i, &(x, y)) in ser.points.iter().filter(|&&(x, y)| x > 0.0 && y > 0.0).enumerate() {
            let _ = write!(
                d,
                "{}{:.1} {:.1}",
                if i == 0 { "M" } else { "L" },
                px(x.log10()),
                py(y.log10())
            );
        }
        let _ = writeln!(
            s,
            "<path d=\"{d}\" stroke=\"{}\" stroke-width=\"1.5\" fill=\"none\"/>",
            ser.color
        );
        let ly = mt + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"3\" fill=\"{}\"/>",
            ml + 10.0,
            ly - 4.0,
            ser.color
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{ly:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            ml + 28.0,
            xml_escape(&ser.label)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (ml + w - mr) / 2.0,
        h - 12.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        xml_escape(y_label)
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(v: &str) -> String {
    v.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_text_file(path: &std::path::Path, content: &str) -> Result<(), Error> {
    std::fs::write(path, content).map_err(Error::io(path.display().to_string()))
}

pub fn read_text_file(path: &std::path::Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(Error::io(path.display().to_string()))
}
