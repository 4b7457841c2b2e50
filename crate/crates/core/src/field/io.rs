//! Columnar text format.
//!
//! The first non-comment line names the axes and then the components. Each
//! following line is one grid node in row-major order (last axis fastest):
//! the node coordinates followed by the component values. Numbers are written
//! with the shortest representation that parses back to the same `f64`.

use super::{Axis, AxisRole, FieldError, SampledField};
use std::fmt::Write as _;

/// Default label parser: `t`, `x1..`, `y1..`, `w1..`, and `m` for `x1`.
pub fn parse_label(s: &str) -> Option<AxisRole> {
    if s == "t" {
        return Some(AxisRole::Time);
    }
    if s == "m" {
        return Some(AxisRole::Space(0));
    }
    if s.len() < 2 || !s.is_char_boundary(1) {
        return None;
    }
    let (head, tail) = s.split_at(1);
    let k: usize = tail.parse().ok().filter(|&k: &usize| k >= 1)?;
    match head {
        "x" => Some(AxisRole::Space(k - 1)),
        "y" => Some(AxisRole::Y(k - 1)),
        "w" => Some(AxisRole::W(k - 1)),
        _ => None,
    }
}

pub fn read_columnar(text: &str) -> Result<SampledField, FieldError> {
    read_columnar_with(text, &parse_label)
}

pub fn read_columnar_with(
    text: &str,
    labels: &dyn Fn(&str) -> Option<AxisRole>,
) -> Result<SampledField, FieldError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or(FieldError::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    let naxes = tokens.iter().take_while(|t| labels(t).is_some()).count();
    let roles: Vec<AxisRole> = tokens[..naxes].iter().map(|t| labels(t).unwrap()).collect();
    let names: Vec<String> = tokens[naxes..].iter().map(|s| s.to_string()).collect();
    if names.is_empty() {
        return Err(FieldError::Parse {
            line: hline,
            msg: "header names no components".into(),
        });
    }
    let width = naxes + names.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut row_lines = Vec::new();
    for (ln, l) in lines {
        let row: Result<Vec<f64>, _> = l.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| FieldError::Parse {
            line: ln,
            msg: e.to_string(),
        })?;
        if row.len() != width {
            return Err(FieldError::Parse {
                line: ln,
                msg: format!("expected {width} columns, found {}", row.len()),
            });
        }
        rows.push(row);
        row_lines.push(ln);
    }
    let mut axes = Vec::with_capacity(naxes);
    for (j, &role) in roles.iter().enumerate() {
        let mut nodes: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        nodes.sort_by(|a, b| a.total_cmp(b));
        nodes.dedup();
        axes.push(Axis::new(role, nodes));
    }
    let expected: usize = axes.iter().map(|a| a.len()).product();
    if expected != rows.len() {
        return Err(FieldError::Parse {
            line: hline,
            msg: format!(
                "{} rows do not form a full grid of {} nodes",
                rows.len(),
                expected
            ),
        });
    }
    let mut idx = vec![0usize; naxes];
    for (r, row) in rows.iter().enumerate() {
        for j in 0..naxes {
            if row[j] != axes[j].nodes[idx[j]] {
                return Err(FieldError::Parse {
                    line: row_lines[r],
                    msg: "rows are not in row-major grid order".into(),
                });
            }
        }
        for j in (0..naxes).rev() {
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
    let values = (0..names.len())
        .map(|c| rows.iter().map(|r| r[naxes + c]).collect())
        .collect();
    SampledField::with_names(axes, names, values)
}

pub fn write_columnar(field: &SampledField) -> String {
    write_columnar_with(field, &|r: AxisRole| r.label())
}

pub fn write_columnar_with(field: &SampledField, labels: &dyn Fn(AxisRole) -> String) -> String {
    let mut out = String::new();
    let header: Vec<String> = field
        .axes()
        .iter()
        .map(|a| labels(a.role))
        .chain(field.names().iter().cloned())
        .collect();
    out.push_str(&header.join(" "));
    out.push('\n');
    for flat in 0..field.node_count() {
        let mut first = true;
        for (_, v) in field.node_coords(flat) {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        for c in 0..field.ncomp() {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{}", field.component(c)[flat]);
        }
        out.push('\n');
    }
    out
}
