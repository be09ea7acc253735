//! OFF meshes, XYZ point files and area-weighted surface sampling.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{Point, PointCloud};
use crate::error::{Error, Result};

/// Triangle mesh; polygons are fan-triangulated on load.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn numbers<T: std::str::FromStr>(line: usize, fields: &[&str], what: &str) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| parse_err(line, format!("invalid {what} `{f}`")))
        })
        .collect()
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let v = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= v)) {
            return Err(Error::Data(format!("face {f:?} indexes past {v} vertices")));
        }
        Ok(Self { vertices, faces })
    }

    /// Parses OFF text. The `OFF` header is optional and may be fused with
    /// the counts (`OFF490 902 0`).
    pub fn parse_off(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let last_line = text.lines().count();
        let eof = |what: &str| parse_err(last_line + 1, format!("unexpected end of file, expected {what}"));

        let (mut ln, mut first) = lines.next().ok_or_else(|| eof("header"))?;
        if let Some(rest) = first.strip_prefix("OFF") {
            let rest = rest.trim();
            if rest.is_empty() {
                (ln, first) = lines.next().ok_or_else(|| eof("counts"))?;
            } else {
                first = rest;
            }
        }
        let fields: Vec<&str> = first.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(ln, format!("expected `V F [E]` counts, got `{first}`")));
        }
        let counts: Vec<usize> = numbers(ln, &fields, "count")?;
        let (nv, nf) = (counts[0], counts[1]);

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines.next().ok_or_else(|| eof("vertex"))?;
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() < 3 {
                return Err(parse_err(ln, "vertex needs 3 coordinates"));
            }
            let c: Vec<f64> = numbers(ln, &fields[..3], "coordinate")?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(ln, "non-finite vertex coordinate"));
            }
            vertices.push([c[0], c[1], c[2]]);
        }

        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, l) = lines.next().ok_or_else(|| eof("face"))?;
            let fields: Vec<&str> = l.split_whitespace().collect();
            let n: usize = numbers(ln, &fields[..1.min(fields.len())], "vertex count")?
                .first()
                .copied()
                .ok_or_else(|| parse_err(ln, "empty face"))?;
            if n < 3 {
                return Err(parse_err(ln, format!("face has {n} vertices, need at least 3")));
            }
            if fields.len() < n + 1 {
                return Err(parse_err(ln, format!("face declares {n} vertices but lists {}", fields.len() - 1)));
            }
            let idx: Vec<usize> = numbers(ln, &fields[1..=n], "vertex index")?;
            if let Some(bad) = idx.iter().find(|&&i| i >= nv) {
                return Err(parse_err(ln, format!("vertex index {bad} out of range for {nv} vertices")));
            }
            for k in 1..n - 1 {
                faces.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn load_off(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_off(&text)
    }

    pub fn triangle_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cross = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt()
    }

    /// `n` raw surface samples as `(face, point)`; faces chosen with
    /// probability proportional to area.
    pub fn sample_triangles<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(usize, Point)>> {
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += self.triangle_area(f);
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::Data("degenerate mesh: zero surface area".into()));
        }
        Ok((0..n)
            .map(|_| {
                let target = rng.random::<f64>() * total;
                let f = cumulative.partition_point(|&c| c <= target).min(self.faces.len() - 1);
                let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
                let s = rng.random::<f64>().sqrt();
                let r = rng.random::<f64>();
                let (wa, wb, wc) = (1.0 - s, s * (1.0 - r), s * r);
                let p = [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k]);
                (f, p)
            })
            .collect())
    }

    /// Normalized point cloud of `n` surface samples.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = self.sample_triangles(n, &mut rng)?;
        PointCloud::new(pts.into_iter().map(|(_, p)| p).collect()).normalized()
    }
}

/// One `x y z` line per point; `#` comments and blank lines are skipped.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 coordinates, got {}", fields.len())));
        }
        let c: Vec<f64> = numbers(i + 1, &fields, "coordinate")?;
        points.push([c[0], c[1], c[2]]);
    }
    PointCloud::new(points).normalized()
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TETRA: &str = "OFF\n# tetrahedron\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";

    #[test]
    fn tetrahedron() {
        let m = Mesh::parse_off(TETRA).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces.len(), 4);
        assert_eq!(m.faces[3], [1, 2, 3]);
    }

    #[test]
    fn quad_is_fanned() {
        let m = Mesh::parse_off("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn fused_and_missing_headers() {
        let fused = "OFF4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n";
        assert_eq!(Mesh::parse_off(fused).unwrap().faces.len(), 1);
        let bare = "\n4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n";
        assert_eq!(Mesh::parse_off(bare).unwrap().vertices.len(), 4);
    }

    fn line_of(text: &str) -> usize {
        match Mesh::parse_off(text) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs_name_the_line() {
        assert_eq!(line_of("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n"), 6);
        assert_eq!(line_of("OFF\nfour 1 0\n"), 2);
        assert_eq!(line_of("OFF\n3 1 0\n0 0 0\n1 0 0\n"), 5);
        assert_eq!(line_of("OFF\n3 1 0\n0 0\n"), 3);
        assert_eq!(line_of("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n2 0 1\n"), 6);
    }

    #[test]
    fn samples_stay_inside_triangle() {
        let m = Mesh::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (_, p) in m.sample_triangles(1000, &mut rng).unwrap() {
            // barycentric coordinates w.r.t. (0,0), (2,0), (0,1)
            let wb = p[0] / 2.0;
            let wc = p[1];
            let wa = 1.0 - wb - wc;
            for w in [wa, wb, wc] {
                assert!(w >= -1e-12, "{w}");
            }
            assert!((wa + wb + wc - 1.0).abs() < 1e-9);
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn area_proportions() {
        // areas 1 and 3
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [10.0, 0.0, 0.0], [16.0, 0.0, 0.0], [10.0, 1.0, 0.0]],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = m.sample_triangles(10_000, &mut rng).unwrap();
        let first = s.iter().filter(|(f, _)| *f == 0).count() as f64 / 10_000.0;
        assert!((first - 0.25).abs() <= 0.03, "{first}");
    }

    #[test]
    fn deterministic_and_normalized() {
        let m = Mesh::parse_off(TETRA).unwrap();
        let a = m.sample_surface(64, 9).unwrap();
        assert_eq!(a, m.sample_surface(64, 9).unwrap());
        assert!((a.max_norm() - 1.0).abs() < 1e-12);
        let c = a.centroid();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_area_is_degenerate() {
        let m = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(m.sample_surface(10, 0), Err(Error::Data(_))));
    }

    #[test]
    fn xyz_lines() {
        let pc = parse_xyz("0 0 0\n# c\n2 0 0\n\n1 1 0\n").unwrap();
        assert_eq!(pc.len(), 3);
        assert!(matches!(parse_xyz("0 0\n"), Err(Error::Parse { line: 1, .. })));
    }
}
