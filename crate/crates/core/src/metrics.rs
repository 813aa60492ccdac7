//! Centerline comparison metrics and CSV interchange.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Centerline2D {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

impl Centerline2D {
    pub fn new(label: impl Into<String>, points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Format {
                path: None,
                message: format!("a centerline needs at least 2 samples, got {}", points.len()),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format {
                path: None,
                message: "centerline has non-finite coordinates".into(),
            });
        }
        Ok(Self {
            label: label.into(),
            points,
        })
    }

    pub fn first(&self) -> [f64; 2] {
        self.points[0]
    }

    pub fn last(&self) -> [f64; 2] {
        *self.points.last().expect("at least 2 points")
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorReport {
    pub tip_error_fraction: f64,
    /// Area between the curves divided by the rod length, m.
    pub area_error: f64,
    pub rod_length: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_length(length: f64) -> Result<()> {
    if length > 0.0 && length.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("rod length must be positive, got {length}")))
    }
}

/// Tip displacement between two curves as a fraction of `length`.
pub fn tip_error(a: &Centerline2D, b: &Centerline2D, length: f64) -> Result<f64> {
    check_length(length)?;
    Ok(dist(a.last(), b.last()) / length)
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Proper crossing of segments `p0p1` and `q0q1` as parameters `(s, u)`.
fn segment_crossing(p0: [f64; 2], p1: [f64; 2], q0: [f64; 2], q1: [f64; 2]) -> Option<(f64, f64)> {
    let r = [p1[0] - p0[0], p1[1] - p0[1]];
    let d = [q1[0] - q0[0], q1[1] - q0[1]];
    let denom = r[0] * d[1] - r[1] * d[0];
    if denom == 0.0 {
        return None;
    }
    let w = [q0[0] - p0[0], q0[1] - p0[1]];
    let s = (w[0] * d[1] - w[1] * d[0]) / denom;
    let u = (w[0] * r[1] - w[1] * r[0]) / denom;
    ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&u)).then_some((s, u))
}

/// Point at fractional polyline parameter `t` (segment index + offset).
fn at(points: &[[f64; 2]], t: f64) -> [f64; 2] {
    let i = (t.floor() as usize).min(points.len() - 2);
    let f = t - i as f64;
    let (p, q) = (points[i], points[i + 1]);
    [p[0] + f * (q[0] - p[0]), p[1] + f * (q[1] - p[1])]
}

/// Polyline from parameter `t0` to `t1` (either direction), endpoints included.
fn sub_path(points: &[[f64; 2]], t0: f64, t1: f64) -> Vec<[f64; 2]> {
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    let interior = (0..points.len()).filter(|&k| (k as f64) > lo && (k as f64) < hi);
    let mut out = vec![at(points, t0)];
    if t0 <= t1 {
        out.extend(interior.map(|k| points[k]));
    } else {
        out.extend(interior.rev().map(|k| points[k]));
    }
    out.push(at(points, t1));
    out
}

/// Area enclosed between two centerlines divided by `length`.
///
/// The region is the polygon `a` forward then `b` backward. Where the
/// curves cross, the polygon is split at the crossings and the absolute
/// lobe areas are summed, so opposite-signed lobes do not cancel.
pub fn area_error(a: &Centerline2D, b: &Centerline2D, length: f64) -> Result<f64> {
    check_length(length)?;
    let (pa, pb) = (&a.points, &b.points);
    let end_a = (pa.len() - 1) as f64;
    let end_b = (pb.len() - 1) as f64;

    let mut crossings: Vec<(f64, f64)> = Vec::new();
    for i in 0..pa.len() - 1 {
        for j in 0..pb.len() - 1 {
            if let Some((s, u)) = segment_crossing(pa[i], pa[i + 1], pb[j], pb[j + 1]) {
                let (ta, tb) = (i as f64 + s, j as f64 + u);
                let at_start = ta < 1e-12 && tb < 1e-12;
                let at_end = ta > end_a - 1e-12 && tb > end_b - 1e-12;
                if !at_start && !at_end {
                    crossings.push((ta, tb));
                }
            }
        }
    }
    crossings.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    crossings.dedup_by(|x, y| (x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);

    let ordered = crossings.windows(2).all(|w| w[1].1 >= w[0].1);
    let area = if crossings.is_empty() || !ordered {
        shoelace(&[pa.as_slice(), &pb.iter().rev().copied().collect::<Vec<_>>()].concat()).abs()
    } else {
        let mut cuts = vec![(0.0, 0.0)];
        cuts.extend(crossings);
        cuts.push((end_a, end_b));
        cuts.windows(2)
            .map(|w| {
                let mut lobe = sub_path(pa, w[0].0, w[1].0);
                lobe.extend(sub_path(pb, w[1].1, w[0].1));
                shoelace(&lobe).abs()
            })
            .sum()
    };
    Ok(area / length)
}

pub fn compare(a: &Centerline2D, b: &Centerline2D, length: f64) -> Result<ErrorReport> {
    Ok(ErrorReport {
        tip_error_fraction: tip_error(a, b, length)?,
        area_error: area_error(a, b, length)?,
        rod_length: length,
    })
}

/// Length unit of coordinates in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthUnit {
    #[default]
    Meters,
    Millimeters,
}

impl LengthUnit {
    pub fn to_meters(self) -> f64 {
        match self {
            LengthUnit::Meters => 1.0,
            LengthUnit::Millimeters => 1e-3,
        }
    }
}

impl std::str::FromStr for LengthUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m" | "meters" => Ok(Self::Meters),
            "mm" | "millimeters" => Ok(Self::Millimeters),
            other => Err(Error::Config(format!("unknown unit {other:?}, expected m or mm"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCenterline {
    pub curve: Centerline2D,
    pub warnings: Vec<String>,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Read `index,x_m,y_m[,z_m]` (index optional). A z column is dropped with
/// a warning; `unit` scales every coordinate to meters.
pub fn read_centerline(path: &Path, unit: LengthUnit) -> Result<LoadedCenterline> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 1, format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect();
    let has_index = headers.first().is_some_and(|h| h == "index");
    let coords = headers.len() - usize::from(has_index);
    if !(2..=3).contains(&coords) {
        return Err(parse_err(
            path,
            1,
            format!("expected columns index,x_m,y_m[,z_m], got {}", headers.join(",")),
        ));
    }
    let mut warnings = Vec::new();
    if coords == 3 {
        let w = format!("{}: 3D samples projected onto the x-y plane (z dropped)", path.display());
        log::warn!("{w}");
        warnings.push(w);
    }

    let scale = unit.to_meters();
    let mut points = Vec::new();
    let mut last_index: Option<i64> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let field = |k: usize| -> Result<f64> {
            record[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("invalid number {:?}", &record[k])))
        };
        let offset = usize::from(has_index);
        if has_index {
            let idx: i64 = record[0]
                .parse()
                .map_err(|_| parse_err(path, line, format!("invalid index {:?}", &record[0])))?;
            if last_index.is_some_and(|prev| idx <= prev) {
                return Err(Error::Format {
                    path: Some(path.to_path_buf()),
                    message: format!("index {idx} on line {line} is not increasing"),
                });
            }
            last_index = Some(idx);
        }
        points.push([field(offset)? * scale, field(offset + 1)? * scale]);
    }
    if points.is_empty() {
        return Err(Error::Format {
            path: Some(path.to_path_buf()),
            message: "no samples".into(),
        });
    }
    if points.len() < 2 {
        return Err(Error::Format {
            path: Some(path.to_path_buf()),
            message: "a centerline needs at least 2 samples".into(),
        });
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LoadedCenterline {
        curve: Centerline2D { label, points },
        warnings,
    })
}

/// Write `index,x_m,y_m` with full round-trip precision.
pub fn write_centerline(curve: &Centerline2D, path: &Path) -> Result<()> {
    write_points(path, curve.points.iter().map(|p| vec![p[0], p[1]]), &["x_m", "y_m"])
}

/// Write `index,x_m,y_m,z_m`.
pub fn write_centerline_3d(points: &[[f64; 3]], path: &Path) -> Result<()> {
    write_points(path, points.iter().map(|p| p.to_vec()), &["x_m", "y_m", "z_m"])
}

fn write_points(path: &Path, rows: impl Iterator<Item = Vec<f64>>, columns: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialize(format!("{other:?}")),
    })?;
    let io = |e: csv::Error| Error::Serialize(e.to_string());
    let mut header = vec!["index"];
    header.extend_from_slice(columns);
    w.write_record(&header).map_err(io)?;
    for (i, row) in rows.enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
