//! Microphone array geometry, the pinhole camera model and the camera-aligned
//! steering grid.
//!
//! All coordinates are in meters in the camera frame: camera at the origin,
//! `+x` right, `+y` down, `+z` forward. The array plane coincides with the
//! camera plane unless an explicit offset is applied with
//! [`ArrayGeometry::translated`].

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Position = Vector3<f64>;

/// Minimum separation between two microphones.
const MIN_MIC_SEPARATION: f64 = 1e-6;

/// Default geometry bundled with the crate: a 4×4 planar lattice with 42 mm
/// pitch approximating a 16-channel USB array.
pub const DEFAULT_GEOMETRY_XML: &str = include_str!("../data/uma16_4x4.xml");

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    name: String,
    mics: Vec<Position>,
}

impl ArrayGeometry {
    pub fn new(name: impl Into<String>, mics: Vec<Position>) -> Result<Self> {
        if mics.len() < 2 {
            return Err(Error::Validation(format!(
                "array geometry needs at least 2 microphones, got {}",
                mics.len()
            )));
        }
        for (i, p) in mics.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::Validation(format!("mic {i} has a non-finite coordinate")));
            }
            for (j, q) in mics.iter().enumerate().skip(i + 1) {
                if (p - q).norm() <= MIN_MIC_SEPARATION {
                    return Err(Error::Validation(format!(
                        "mics {i} and {j} share the same position"
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            mics,
        })
    }

    /// The bundled 16-channel default.
    pub fn default_uma16() -> Self {
        parse_geometry(DEFAULT_GEOMETRY_XML).expect("bundled geometry is valid")
    }

    /// Square planar lattice centered on the origin in the `z = 0` plane,
    /// channels row-major from the top-left element.
    pub fn planar_lattice(name: impl Into<String>, side: usize, pitch_m: f64) -> Result<Self> {
        let offset = (side as f64 - 1.0) / 2.0;
        let mics = (0..side)
            .flat_map(|r| (0..side).map(move |c| (r, c)))
            .map(|(r, c)| {
                Position::new(
                    (c as f64 - offset) * pitch_m,
                    (r as f64 - offset) * pitch_m,
                    0.0,
                )
            })
            .collect();
        Self::new(name, mics)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mics(&self) -> &[Position] {
        &self.mics
    }

    pub fn len(&self) -> usize {
        self.mics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mics.is_empty()
    }

    /// Largest pairwise distance between microphones.
    pub fn aperture(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, p) in self.mics.iter().enumerate() {
            for q in &self.mics[i + 1..] {
                best = best.max((p - q).norm());
            }
        }
        best
    }

    /// Geometry shifted by a fixed extrinsic offset relative to the camera.
    pub fn translated(&self, offset: Position) -> Self {
        Self {
            name: self.name.clone(),
            mics: self.mics.iter().map(|p| p + offset).collect(),
        }
    }
}

fn parse_coord(node: &roxmltree::Node<'_, '_>, attr: &str, mic: &str) -> Result<f64> {
    let raw = node.attribute(attr).ok_or_else(|| Error::Schema {
        item: format!("mic {mic}"),
        message: format!("missing attribute '{attr}'"),
    })?;
    raw.trim().parse::<f64>().map_err(|_| Error::Schema {
        item: format!("mic {mic}"),
        message: format!("attribute '{attr}' is not numeric: {raw:?}"),
    })
}

/// Parse an `<arraygeometry>` document with one `<pos>` child per channel.
pub fn parse_geometry(xml_text: &str) -> Result<ArrayGeometry> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| Error::Parse {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "arraygeometry" {
        return Err(Error::Schema {
            item: "root".into(),
            message: format!(
                "expected <arraygeometry>, found <{}>",
                root.tag_name().name()
            ),
        });
    }
    let name = root.attribute("name").unwrap_or_default().to_string();
    let mut mics = Vec::new();
    for (index, node) in root
        .children()
        .filter(|n| n.is_element() && n.tag_name().name() == "pos")
        .enumerate()
    {
        let label = node
            .attribute("name")
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{index}"));
        let x = parse_coord(&node, "x", &label)?;
        let y = parse_coord(&node, "y", &label)?;
        let z = match node.attribute("z") {
            Some(_) => parse_coord(&node, "z", &label)?,
            None => 0.0,
        };
        mics.push(Position::new(x, y, z));
    }
    ArrayGeometry::new(name, mics)
}

/// Write a geometry in the format read by [`parse_geometry`]. Coordinates use
/// shortest round-trip decimal formatting, so reparsing is exact.
pub fn serialize_geometry(g: &ArrayGeometry) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n");
    if g.name.is_empty() {
        out.push_str("<arraygeometry>\n");
    } else {
        let _ = writeln!(out, "<arraygeometry name=\"{}\">", xml_escape(&g.name));
    }
    for (i, p) in g.mics.iter().enumerate() {
        let _ = write!(out, "  <pos name=\"{i}\" x=\"{:?}\" y=\"{:?}\"", p.x, p.y);
        if p.z != 0.0 {
            let _ = write!(out, " z=\"{:?}\"", p.z);
        }
        out.push_str("/>\n");
    }
    out.push_str("</arraygeometry>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Pinhole camera with square pixels and no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub diagonal_fov_deg: f64,
    pub focal_px: f64,
    pub principal: (f64, f64),
}

impl CameraModel {
    /// Camera with the principal point at the image center.
    pub fn new(width: u32, height: u32, diagonal_fov_deg: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("camera resolution must be nonzero".into()));
        }
        if !(diagonal_fov_deg > 0.0 && diagonal_fov_deg < 180.0) {
            return Err(Error::Argument(format!(
                "diagonal field of view must lie in (0, 180) degrees, got {diagonal_fov_deg}"
            )));
        }
        let half_diag = (f64::from(width).hypot(f64::from(height))) / 2.0;
        let focal_px = half_diag / (diagonal_fov_deg.to_radians() / 2.0).tan();
        Ok(Self {
            width,
            height,
            diagonal_fov_deg,
            focal_px,
            principal: (f64::from(width) / 2.0, f64::from(height) / 2.0),
        })
    }

    pub fn with_principal(mut self, cx: f64, cy: f64) -> Self {
        self.principal = (cx, cy);
        self
    }

    pub fn horizontal_fov_deg(&self) -> f64 {
        2.0 * (f64::from(self.width) / 2.0 / self.focal_px).atan().to_degrees()
    }

    pub fn vertical_fov_deg(&self) -> f64 {
        2.0 * (f64::from(self.height) / 2.0 / self.focal_px).atan().to_degrees()
    }

    /// Point at depth `z` along the ray through pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Position {
        Position::new(
            (u - self.principal.0) / self.focal_px * z,
            (v - self.principal.1) / self.focal_px * z,
            z,
        )
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < f64::from(self.width) && v < f64::from(self.height)
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::new(640, 360, 72.0).expect("default camera is valid")
    }
}

/// Project a camera-frame point to pixel coordinates.
pub fn project(cam: &CameraModel, point: &Position) -> Result<(f64, f64)> {
    if point.z <= 0.0 {
        return Err(Error::BehindCamera { z: point.z });
    }
    Ok((
        cam.principal.0 + cam.focal_px * point.x / point.z,
        cam.principal.1 + cam.focal_px * point.y / point.z,
    ))
}

/// Planar lattice of candidate source positions at a fixed depth, one per
/// image-aligned cell, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringGrid {
    cols: usize,
    rows: usize,
    distance_m: f64,
    cell_width_px: f64,
    cell_height_px: f64,
    points: Vec<Position>,
}

impl SteeringGrid {
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }

    pub fn points(&self) -> &[Position] {
        &self.points
    }

    pub fn point(&self, col: usize, row: usize) -> &Position {
        &self.points[row * self.cols + col]
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    /// `(col, row)` of a flat cell index.
    pub fn cell_of(&self, index: usize) -> (usize, usize) {
        (index % self.cols, index / self.cols)
    }

    /// Pixel center of a cell.
    pub fn cell_center_px(&self, col: usize, row: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.cell_width_px,
            (row as f64 + 0.5) * self.cell_height_px,
        )
    }

    /// Cell containing a pixel, if the pixel lies inside the image.
    pub fn cell_at_px(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let col = (u / self.cell_width_px).floor() as usize;
        let row = (v / self.cell_height_px).floor() as usize;
        (col < self.cols && row < self.rows).then_some((col, row))
    }
}

pub fn build_grid(
    cam: &CameraModel,
    cols: usize,
    rows: usize,
    distance_m: f64,
) -> Result<SteeringGrid> {
    if cols < 2 || rows < 2 {
        return Err(Error::Argument(format!(
            "grid needs at least 2x2 cells, got {cols}x{rows}"
        )));
    }
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(Error::Argument(format!(
            "grid distance must be positive, got {distance_m}"
        )));
    }
    let cell_width_px = f64::from(cam.width) / cols as f64;
    let cell_height_px = f64::from(cam.height) / rows as f64;
    let points = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c, r)))
        .map(|(c, r)| {
            cam.unproject(
                (c as f64 + 0.5) * cell_width_px,
                (r as f64 + 0.5) * cell_height_px,
                distance_m,
            )
        })
        .collect();
    Ok(SteeringGrid {
        cols,
        rows,
        distance_m,
        cell_width_px,
        cell_height_px,
        points,
    })
}
