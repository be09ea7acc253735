//! Procedural shape suite, depth rendering and caption templates.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::off::Mesh;
use crate::encoders::{DepthImage, Point, PointCloud};
use crate::error::{Error, Result};

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.3;
const HELIX_TURNS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Pyramid,
    Helix,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Cone,
        ShapeKind::Torus,
        ShapeKind::Plane,
        ShapeKind::Pyramid,
        ShapeKind::Helix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Plane => "plane",
            ShapeKind::Pyramid => "pyramid",
            ShapeKind::Helix => "helix",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown shape kind `{s}`")))
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Point {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Point = [n.sample(rng), n.sample(rng), n.sample(rng)];
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if len > 1e-12 {
            return v.map(|x| x / len);
        }
    }
}

fn disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random::<f64>() * TAU;
    (r * t.cos(), r * t.sin())
}

fn pyramid_mesh() -> Mesh {
    let v = vec![
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [0.0, 0.0, 1.0],
    ];
    let f = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4], [0, 1, 2], [0, 2, 3]];
    Mesh::new(v, f).expect("static pyramid")
}

/// Uniform surface samples of the analytic shape, before jitter and
/// normalization. The vertical axis is z.
pub fn raw_shape<R: Rng + ?Sized>(kind: ShapeKind, n: usize, rng: &mut R) -> Result<Vec<Point>> {
    let pts = match kind {
        ShapeKind::Sphere => (0..n).map(|_| unit_vector(rng)).collect(),
        ShapeKind::Cube => (0..n)
            .map(|_| {
                let face = rng.random_range(0..6usize);
                let (axis, sign) = (face / 2, if face % 2 == 0 { 1.0 } else { -1.0 });
                let mut p: Point = [0, 1, 2].map(|_| rng.random_range(-1.0..=1.0));
                p[axis] = sign;
                p
            })
            .collect(),
        ShapeKind::Cylinder => (0..n)
            .map(|_| {
                // lateral 4π vs two caps 2π
                if rng.random::<f64>() < 2.0 / 3.0 {
                    let t = rng.random::<f64>() * TAU;
                    [t.cos(), t.sin(), rng.random_range(-1.0..=1.0)]
                } else {
                    let (x, y) = disk(rng, 1.0);
                    [x, y, if rng.random::<bool>() { 1.0 } else { -1.0 }]
                }
            })
            .collect(),
        ShapeKind::Cone => {
            let slant = 5f64.sqrt();
            let lateral = PI * slant;
            (0..n)
                .map(|_| {
                    if rng.random::<f64>() < lateral / (lateral + PI) {
                        // radius grows linearly from the apex at z = 1
                        let s = rng.random::<f64>().sqrt();
                        let t = rng.random::<f64>() * TAU;
                        [s * t.cos(), s * t.sin(), 1.0 - 2.0 * s]
                    } else {
                        let (x, y) = disk(rng, 1.0);
                        [x, y, -1.0]
                    }
                })
                .collect()
        }
        ShapeKind::Torus => {
            let (big, small) = (TORUS_MAJOR, TORUS_MINOR);
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let phi = rng.random::<f64>() * TAU;
                if rng.random::<f64>() * (big + small) > big + small * phi.cos() {
                    continue;
                }
                let theta = rng.random::<f64>() * TAU;
                let ring = big + small * phi.cos();
                out.push([ring * theta.cos(), ring * theta.sin(), small * phi.sin()]);
            }
            out
        }
        ShapeKind::Plane => (0..n)
            .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), 0.0])
            .collect(),
        ShapeKind::Pyramid => pyramid_mesh()
            .sample_triangles(n, rng)?
            .into_iter()
            .map(|(_, p)| p)
            .collect(),
        ShapeKind::Helix => (0..n)
            .map(|_| {
                let t = rng.random::<f64>();
                let a = t * HELIX_TURNS * TAU;
                [a.cos(), a.sin(), 2.0 * t - 1.0]
            })
            .collect(),
    };
    Ok(pts)
}

/// `n` jittered, normalized samples; deterministic per seed.
pub fn generate_shape(kind: ShapeKind, n: usize, noise: f64, seed: u64) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::Argument(format!("need at least 8 points, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Argument(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = raw_shape(kind, n, &mut rng)?;
    if noise > 0.0 {
        let jitter = Normal::new(0.0, noise).expect("valid sigma");
        for p in &mut pts {
            p.iter_mut().for_each(|v| *v += jitter.sample(&mut rng));
        }
    }
    PointCloud::new(pts).normalized()
}

/// Per-sample variation: rotation about the vertical axis and per-axis scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augment {
    /// Rotation in `[0, 2π)` about z.
    pub yaw: f64,
    pub scale: [f64; 3],
}

impl Augment {
    pub const IDENTITY: Augment = Augment {
        yaw: 0.0,
        scale: [1.0; 3],
    };

    pub fn random<R: Rng + ?Sized>(rng: &mut R, scale_range: f64) -> Self {
        let lo = 1.0 - scale_range;
        let hi = 1.0 + scale_range;
        Self {
            yaw: rng.random::<f64>() * TAU,
            scale: [0, 1, 2].map(|_| if scale_range > 0.0 { rng.random_range(lo..hi) } else { 1.0 }),
        }
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let (s, c) = self.yaw.sin_cos();
        let pts = cloud
            .points
            .iter()
            .map(|p| {
                let q = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
                [q[0] * self.scale[0], q[1] * self.scale[1], q[2] * self.scale[2]]
            })
            .collect();
        let mut out = PointCloud::new(pts).normalized()?;
        out.label = cloud.label;
        Ok(out)
    }
}

/// Camera direction for [`render_depth`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub azimuth: f64,
    pub elevation: f64,
}

impl View {
    pub const FRONT: View = View {
        azimuth: 0.0,
        elevation: 0.0,
    };
    pub const DEFAULT: View = View {
        azimuth: PI / 4.0,
        elevation: PI / 6.0,
    };
}

/// Orthographic z-buffer render of a unit-ball cloud. The camera sits on +z
/// after rotating by azimuth (about z) then elevation (about x). Background
/// is 0; the nearest depth per pixel maps into `(0, 1]`.
pub fn render_depth(cloud: &PointCloud, view: View, height: usize, width: usize) -> Result<DepthImage> {
    if height == 0 || width == 0 {
        return Err(Error::Argument("image size must be positive".into()));
    }
    if !view.azimuth.is_finite() || !view.elevation.is_finite() {
        return Err(Error::Argument("view angles must be finite".into()));
    }
    let (sa, ca) = view.azimuth.sin_cos();
    let (se, ce) = view.elevation.sin_cos();
    let mut img = DepthImage::zeros(height, width);
    let mut nearest = vec![f64::NEG_INFINITY; height * width];
    for p in &cloud.points {
        let x1 = ca * p[0] - sa * p[1];
        let y1 = sa * p[0] + ca * p[1];
        let z1 = p[2];
        let y2 = ce * y1 - se * z1;
        let z2 = se * y1 + ce * z1;
        let col = (((x1 + 1.0) * 0.5 * width as f64).floor() as isize).clamp(0, width as isize - 1) as usize;
        let row = (((1.0 - y2) * 0.5 * height as f64).floor() as isize).clamp(0, height as isize - 1) as usize;
        let i = row * width + col;
        if z2 > nearest[i] {
            nearest[i] = z2;
        }
    }
    for (px, z) in img.pixels.iter_mut().zip(&nearest) {
        if z.is_finite() {
            *px = (z.clamp(-1.5, 1.0) + 1.5) / 2.5;
        }
    }
    Ok(img)
}

/// Caption templates as `(id, template)`.
pub const CAPTION_TEMPLATES: [(&str, &str); 4] = [
    ("point_cloud_of_a", "a point cloud of a [CLASS]"),
    ("shape_3d", "a 3D shape of a [CLASS]"),
    ("bare_point_cloud", "point cloud of a [CLASS]"),
    ("point_cloud_model", "a point cloud model of [CLASS]"),
];

/// Template used for the zero-shot baseline; kept out of pre-training
/// captions.
pub const ZERO_SHOT_TEMPLATE: &str = "a point cloud model of [CLASS]";

/// Templates used to caption pre-training triplets.
pub fn pretraining_templates() -> Vec<&'static str> {
    CAPTION_TEMPLATES
        .iter()
        .map(|(_, t)| *t)
        .filter(|t| *t != ZERO_SHOT_TEMPLATE)
        .collect()
}

/// Alternative names for each shape. Pre-training captions draw from the
/// canonical name and these; the downstream class names stay canonical.
pub const SHAPE_ALIASES: [(ShapeKind, &[&str]); 8] = [
    (ShapeKind::Sphere, &["ball", "globe"]),
    (ShapeKind::Cube, &["box", "block"]),
    (ShapeKind::Cylinder, &["tube", "column"]),
    (ShapeKind::Cone, &["funnel"]),
    (ShapeKind::Torus, &["ring", "donut"]),
    (ShapeKind::Plane, &["sheet", "slab"]),
    (ShapeKind::Pyramid, &["tetrahedron"]),
    (ShapeKind::Helix, &["spiral", "coil"]),
];

/// Names a caption may use for `class_name`: the name itself, then its
/// aliases when `aliases` is set and the class is a built-in shape.
pub fn caption_names(class_name: &str, aliases: bool) -> Vec<String> {
    let mut out = vec![class_name.to_string()];
    if aliases {
        if let Some((_, extra)) = SHAPE_ALIASES.iter().find(|(k, _)| k.name() == class_name) {
            out.extend(extra.iter().map(|s| s.to_string()));
        }
    }
    out
}

/// Every pre-training caption of each class, class-major.
pub fn pretraining_captions(class_names: &[String], aliases: bool) -> Vec<Vec<String>> {
    let templates = pretraining_templates();
    class_names
        .iter()
        .map(|c| {
            caption_names(c, aliases)
                .iter()
                .flat_map(|name| templates.iter().map(move |t| fill_template(t, name)))
                .collect()
        })
        .collect()
}

/// `template` may be an id from [`CAPTION_TEMPLATES`] or one of the
/// template strings.
pub fn make_caption(class_name: &str, template: &str) -> Result<String> {
    let t = CAPTION_TEMPLATES
        .iter()
        .find(|(id, t)| *id == template || *t == template)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Argument(format!("unknown caption template `{template}`")))?;
    Ok(t.replace("[CLASS]", class_name))
}

/// Fills `[CLASS]` in an arbitrary template.
pub fn fill_template(template: &str, class_name: &str) -> String {
    template.replace("[CLASS]", class_name)
}
