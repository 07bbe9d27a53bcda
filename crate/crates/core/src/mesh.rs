//! Triangle meshes, adjacency, region masks and mesh file I/O.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Rest-shape mesh in millimeters with 0-based triangle indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Sorted neighbor lists; empty until [`build_adjacency`] runs.
    pub adjacency: Vec<Vec<usize>>,
}

impl TemplateMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for f in &faces {
            for &i in f {
                if i >= n {
                    return Err(Error::OutOfRange {
                        index: i as i64,
                        limit: n,
                        context: "face vertex index".into(),
                    });
                }
            }
        }
        Ok(Self {
            adjacency: vec![Vec::new(); n],
            vertices,
            faces,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn has_adjacency(&self) -> bool {
        self.vertices.is_empty() || self.adjacency.iter().any(|a| !a.is_empty())
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len().max(1) as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k];
            }
        }
        c.map(|x| x / n)
    }

    /// Copy of this mesh with different vertex positions (same topology).
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "{} vertices for a {}-vertex mesh",
                vertices.len(),
                self.vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            adjacency: self.adjacency.clone(),
        })
    }
}

/// Parses `v` and triangular `f` records of an ASCII OBJ file. Other
/// records are ignored; `f` entries may carry `/vt/vn` suffixes.
pub fn load_obj(path: impl AsRef<Path>) -> Result<TemplateMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TemplateMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut fields = content.split_whitespace();
        match fields.next() {
            Some("v") => {
                let coords: Vec<f64> = fields
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, line, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(Error::parse(path, line, "vertex needs 3 finite coordinates"));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<i64> = fields
                    .map(|s| {
                        s.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<i64>()
                            .map_err(|e| Error::parse(path, line, format!("bad face index `{s}`: {e}")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("face has {} vertices; only triangles are supported", idx.len()),
                    ));
                }
                faces.push([idx[0], idx[1], idx[2]]);
                face_lines.push(line);
            }
            _ => {}
        }
    }
    let n = vertices.len();
    let faces = faces
        .into_iter()
        .zip(face_lines)
        .map(|(f, line)| {
            let mut out = [0usize; 3];
            for (slot, &i) in out.iter_mut().zip(&f) {
                if i < 1 || i as usize > n {
                    return Err(Error::OutOfRange {
                        index: i,
                        limit: n,
                        context: format!("{}:{line}: 1-based face index", path.display()),
                    });
                }
                *slot = i as usize - 1;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    TemplateMesh::new(vertices, faces)
}

/// Writes `v`/`f` records; coordinates use the shortest exact decimal form.
pub fn write_obj(mesh: &TemplateMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Fills `adjacency` with the undirected edge set of all faces.
pub fn build_adjacency(mut mesh: TemplateMesh) -> TemplateMesh {
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); mesh.vertices.len()];
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
    }
    mesh.adjacency = sets.into_iter().map(|s| s.into_iter().collect()).collect();
    mesh
}

fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Regular icosahedron on the unit sphere (12 vertices, 20 faces).
pub fn icosahedron() -> TemplateMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TemplateMesh::new(vertices, faces).expect("static topology is valid")
}

/// Splits every triangle into four, projecting new vertices onto the unit sphere.
pub fn subdivide_sphere(mesh: &TemplateMesh) -> TemplateMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let (p, q) = (vertices[a], vertices[b]);
            vertices.push(normalize([
                (p[0] + q[0]) / 2.0,
                (p[1] + q[1]) / 2.0,
                (p[2] + q[2]) / 2.0,
            ]));
            vertices.len() - 1
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for &[a, b, c] in &mesh.faces {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        faces.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
    }
    TemplateMesh::new(vertices, faces).expect("subdivision keeps indices in range")
}

/// Icosphere with at least `min_vertices` vertices, scaled to `radius`,
/// adjacency built.
pub fn icosphere(min_vertices: usize, radius: f64) -> TemplateMesh {
    let mut mesh = icosahedron();
    while mesh.vertices.len() < min_vertices {
        mesh = subdivide_sphere(&mesh);
    }
    for v in &mut mesh.vertices {
        *v = v.map(|x| x * radius);
    }
    build_adjacency(mesh)
}

/// Named set of vertex indices (for example a lip or eye region).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub name: String,
    indices: Vec<usize>,
}

impl RegionMask {
    pub fn new(name: impl Into<String>, indices: impl IntoIterator<Item = usize>, n: usize) -> Result<Self> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if set.is_empty() {
            return Err(Error::Invalid("region mask is empty".into()));
        }
        if let Some(&bad) = set.iter().find(|&&i| i >= n) {
            return Err(Error::OutOfRange {
                index: bad as i64,
                limit: n,
                context: "region mask vertex".into(),
            });
        }
        Ok(Self {
            name: name.into(),
            indices: set.into_iter().collect(),
        })
    }

    /// Sorted, deduplicated vertex indices.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Reads one 0-based index per line; `#` starts a comment. The mask is
/// named after the file stem.
pub fn load_region_mask(path: impl AsRef<Path>, n: usize) -> Result<RegionMask> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut indices = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let value: i64 = content
            .parse()
            .map_err(|e| Error::parse(path, lineno + 1, format!("bad index `{content}`: {e}")))?;
        if value < 0 || value as usize >= n {
            return Err(Error::OutOfRange {
                index: value,
                limit: n,
                context: format!("{}:{}", path.display(), lineno + 1),
            });
        }
        indices.push(value as usize);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RegionMask::new(name, indices, n)
}

pub fn write_region_mask(mask: &RegionMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = format!("# {}\n", mask.name);
    for i in mask.indices() {
        let _ = writeln!(s, "{i}");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Linear blue→red ramp over `[min, max]`; a constant field maps to blue.
pub fn ramp_color(value: f64, min: f64, max: f64) -> [u8; 3] {
    let t = if max > min {
        ((value - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

/// ASCII PLY with per-vertex color from `scalars` and the raw value as a
/// float property `error`.
pub fn export_ply_colormap(mesh: &TemplateMesh, scalars: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if scalars.len() != mesh.vertices.len() {
        return Err(Error::Shape(format!(
            "{} scalars for {} vertices",
            scalars.len(),
            mesh.vertices.len()
        )));
    }
    if scalars.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("colormap scalars must be finite".into()));
    }
    let min = scalars.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scalars.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property float {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {p}");
    }
    s.push_str("property float error\n");
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (v, &e) in mesh.vertices.iter().zip(scalars) {
        let [r, g, b] = ramp_color(e, min, max);
        let _ = writeln!(s, "{:.6} {:.6} {:.6} {r} {g} {b} {e:.6}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
