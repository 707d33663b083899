//! ASCII PLY point-cloud reader/writer (x, y, z plus optional RGB).

use nalgebra::Vector3;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("only ascii 1.0 ply files are supported")]
    UnsupportedFormat,
    #[error("vertex element is missing x/y/z properties")]
    MissingCoordinates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyPoint {
    pub position: Vector3<f64>,
    pub color: Option<[u8; 3]>,
}

/// Serialize points; colors are included when every point has one.
pub fn write_points(points: &[PlyPoint]) -> String {
    let with_color = !points.is_empty() && points.iter().all(|p| p.color.is_some());
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if with_color {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    for p in points {
        let _ = write!(out, "{} {} {}", p.position.x, p.position.y, p.position.z);
        if with_color {
            let c = p.color.unwrap();
            let _ = write!(out, " {} {} {}", c[0], c[1], c[2]);
        }
        out.push('\n');
    }
    out
}

/// Parse an ascii PLY, reading the vertex element's x/y/z (and red/green/
/// blue when present). Other properties and elements are skipped.
pub fn parse_points(text: &str) -> Result<Vec<PlyPoint>, PlyError> {
    let mut lines = text.lines().enumerate();
    let err = |line: usize, message: &str| PlyError::Malformed {
        line: line + 1,
        message: message.to_string(),
    };

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        Some((n, _)) => return Err(err(n, "expected 'ply' magic")),
        None => return Err(err(0, "empty file")),
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex_element = false;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut format_seen = false;
    let mut header_end = 0usize;
    let mut trailing_elements = false;
    for (n, line) in lines.by_ref() {
        let line = line.trim();
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                let rest: Vec<&str> = words.collect();
                if rest != ["ascii", "1.0"] {
                    return Err(PlyError::UnsupportedFormat);
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let kind = words.next().ok_or_else(|| err(n, "element needs a name"))?;
                let count: usize = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| err(n, "element needs a count"))?;
                if kind == "vertex" && vertex_count.is_none() {
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    in_vertex_element = false;
                    if count > 0 {
                        trailing_elements = true;
                    }
                }
            }
            Some("property") => {
                if in_vertex_element {
                    let name = line
                        .split_whitespace()
                        .last()
                        .ok_or_else(|| err(n, "property needs a name"))?;
                    vertex_props.push(name.to_string());
                }
            }
            Some("end_header") => {
                header_end = n;
                break;
            }
            Some(other) => return Err(err(n, &format!("unexpected header token '{other}'"))),
            None => {}
        }
    }
    if !format_seen {
        return Err(PlyError::UnsupportedFormat);
    }
    let count = vertex_count.ok_or_else(|| err(header_end, "no vertex element"))?;
    let find = |name: &str| vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(PlyError::MissingCoordinates),
    };
    let color_idx = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };

    let mut points = Vec::with_capacity(count);
    for (n, line) in lines.by_ref() {
        if points.len() == count {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < vertex_props.len() {
            return Err(err(
                n,
                &format!(
                    "vertex row has {} fields, header declares {}",
                    fields.len(),
                    vertex_props.len()
                ),
            ));
        }
        let coord = |i: usize| -> Result<f64, PlyError> {
            fields[i]
                .parse()
                .map_err(|_| err(n, &format!("bad float '{}'", fields[i])))
        };
        let position = Vector3::new(coord(ix)?, coord(iy)?, coord(iz)?);
        let color = match color_idx {
            Some((r, g, b)) => {
                let byte = |i: usize| -> Result<u8, PlyError> {
                    fields[i]
                        .parse()
                        .map_err(|_| err(n, &format!("bad color byte '{}'", fields[i])))
                };
                Some([byte(r)?, byte(g)?, byte(b)?])
            }
            None => None,
        };
        points.push(PlyPoint { position, color });
    }
    if points.len() < count {
        return Err(PlyError::Malformed {
            line: 0,
            message: format!("expected {count} vertices, found {}", points.len()),
        });
    }
    let _ = trailing_elements; // rows of later elements are simply not read
    Ok(points)
}
