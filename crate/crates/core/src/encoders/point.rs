use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Block, BlockInit, LayerNorm, Linear, Mlp};
use crate::param::{Module, Parameter};
use crate::tensor::{GeluMode, Tensor};

pub type Point = [f64; 3];

/// `N×3` coordinates, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub label: Option<usize>,
}

fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn dist2(a: &Point, b: &Point) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points, label: None }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(norm).fold(0.0, f64::max)
    }

    /// Centers on the centroid and scales the farthest point to unit norm.
    pub fn normalized(&self) -> Result<PointCloud> {
        if self.points.is_empty() {
            return Err(Error::Data("cannot normalize an empty point cloud".into()));
        }
        let c = self.centroid();
        let centered: Vec<Point> = self
            .points
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect();
        let scale = centered.iter().map(norm).fold(0.0, f64::max);
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::Data("point cloud has zero extent".into()));
        }
        Ok(PointCloud {
            points: centered.iter().map(|p| p.map(|v| v / scale)).collect(),
            label: self.label,
        })
    }

    /// Lexicographic (x, y, z) order, used to make patching permutation-free.
    pub fn canonical_points(&self) -> Vec<Point> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| {
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(a[2].total_cmp(&b[2]))
        });
        pts
    }
}

/// Farthest point sampling starting from `seed_index`; ties go to the lowest index.
pub fn fps(points: &[Point], count: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if count == 0 || count > n {
        return Err(Error::Argument(format!(
            "fps needs 1 <= G <= N, got G={count}, N={n}"
        )));
    }
    if seed_index >= n {
        return Err(Error::Argument(format!("fps seed index {seed_index} >= {n}")));
    }
    let mut chosen = Vec::with_capacity(count);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = seed_index;
    for _ in 0..count {
        chosen.push(current);
        taken[current] = true;
        let c = points[current];
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(dist2(p, &c));
        }
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => current = b,
            None => break,
        }
    }
    Ok(chosen)
}

/// For each center, its `k` nearest points (ties by lowest index), minus the center.
pub fn knn_group(points: &[Point], centers: &[usize], k: usize) -> Result<Vec<Vec<Point>>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("knn needs 1 <= k <= N, got k={k}, N={n}")));
    }
    centers
        .iter()
        .map(|&ci| {
            let c = *points
                .get(ci)
                .ok_or_else(|| Error::Argument(format!("center index {ci} >= {n}")))?;
            let mut order: Vec<(f64, usize)> =
                points.iter().enumerate().map(|(i, p)| (dist2(p, &c), i)).collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
            Ok(order[..k]
                .iter()
                .map(|&(_, i)| {
                    let p = points[i];
                    [p[0] - c[0], p[1] - c[1], p[2] - c[2]]
                })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointEncoderConfig {
    /// Token width inside the point transformer.
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    /// Number of patches G.
    pub num_patches: usize,
    /// Neighbours per patch k.
    pub patch_size: usize,
    /// Hidden width of the per-patch mini network and the center embedding.
    pub patch_hidden: usize,
    pub mlp_ratio: usize,
}

/// Grouped neighbourhoods of one cloud, ready for the patch embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    /// `G·k` re-centered points, patch-major.
    pub local: Vec<f64>,
    /// `G` patch centers.
    pub centers: Vec<f64>,
}

/// PointBERT-style encoder: patches → mini-PointNet tokens → transformer
/// with a class token → pooled feature `h^P` of width `D_point`, followed by a
/// projection into the shared space.
#[derive(Debug, Clone)]
pub struct PointEncoder {
    pub config: PointEncoderConfig,
    pub patch_embed: Mlp,
    pub pos_embed: Mlp,
    pub cls_token: Parameter,
    pub cls_pos: Parameter,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub proj: Linear,
    pub gelu: GeluMode,
}

impl PointEncoder {
    pub fn new<R: Rng + ?Sized>(
        config: PointEncoderConfig,
        out_dim: usize,
        gelu: GeluMode,
        rng: &mut R,
    ) -> Result<Self> {
        let (w, h) = (config.width, config.patch_hidden);
        let blocks = (0..config.depth)
            .map(|i| {
                Block::new(
                    &format!("point_encoder.blocks.{i}"),
                    w,
                    config.heads,
                    config.mlp_ratio,
                    BlockInit::FanIn,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            patch_embed: Mlp {
                fc1: Linear::fan_in("point_encoder.patch_embed.fc1", 3, h, true, rng)?,
                fc2: Linear::fan_in("point_encoder.patch_embed.fc2", h, w, true, rng)?,
            },
            pos_embed: Mlp {
                fc1: Linear::fan_in("point_encoder.pos_embed.fc1", 3, h, true, rng)?,
                fc2: Linear::fan_in("point_encoder.pos_embed.fc2", h, w, true, rng)?,
            },
            cls_token: Parameter::gaussian("point_encoder.cls_token", &[1, w], 0.02, rng)?,
            cls_pos: Parameter::gaussian("point_encoder.cls_pos", &[1, w], 0.02, rng)?,
            blocks,
            norm: LayerNorm::new("point_encoder.norm", w)?,
            proj: Linear::fan_in("point_encoder.proj", w, out_dim, false, rng)?,
            gelu,
        })
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    /// Canonical sort, FPS from index 0, then kNN grouping.
    pub fn patchify(&self, cloud: &PointCloud) -> Result<Patches> {
        let (g, k) = (self.config.num_patches, self.config.patch_size);
        let n = cloud.len();
        if n < g || n < k {
            return Err(Error::Argument(format!(
                "point cloud has {n} points but G={g}, k={k}"
            )));
        }
        let pts = cloud.canonical_points();
        let centers = fps(&pts, g, 0)?;
        let groups = knn_group(&pts, &centers, k)?;
        Ok(Patches {
            local: groups.iter().flatten().flat_map(|p| p.iter().copied()).collect(),
            centers: centers.iter().flat_map(|&i| pts[i]).collect(),
        })
    }

    /// Pooled class-token features `h^P`, `[B, D_point]`.
    pub fn features(&self, patches: &[Patches]) -> Result<Tensor> {
        if patches.is_empty() {
            return Err(Error::Argument("point features of an empty batch".into()));
        }
        let (g, k, w) = (self.config.num_patches, self.config.patch_size, self.width());
        let b = patches.len();
        let mut local = Vec::with_capacity(b * g * k * 3);
        let mut centers = Vec::with_capacity(b * g * 3);
        for p in patches {
            if p.local.len() != g * k * 3 || p.centers.len() != g * 3 {
                return Err(Error::shape("point_features", &[p.local.len()], &[g * k * 3]));
            }
            local.extend_from_slice(&p.local);
            centers.extend_from_slice(&p.centers);
        }
        let local = Tensor::matrix(b * g * k, 3, local)?;
        let centers = Tensor::matrix(b * g, 3, centers)?;
        let tokens = self.patch_embed.forward(&local, self.gelu)?.segment_max(k)?;
        let tokens = tokens.add(&self.pos_embed.forward(&centers, self.gelu)?)?;
        let cls = self.cls_token.tensor().add(self.cls_pos.tensor())?;
        let mut seq = Vec::with_capacity(2 * b);
        for s in 0..b {
            seq.push(cls.clone());
            seq.push(tokens.slice_rows(s * g, g)?);
        }
        let mut x = Tensor::concat_rows(&seq)?;
        let segments = vec![g + 1; b];
        for block in &self.blocks {
            x = block.forward(&x, &segments, self.gelu)?;
        }
        let cls_rows: Vec<usize> = (0..b).map(|s| s * (g + 1)).collect();
        let pooled = self.norm.forward(&x.gather_rows(&cls_rows)?)?;
        debug_assert_eq!(pooled.shape(), [b, w]);
        Ok(pooled)
    }

    /// `[B, D_point] → [B, D]`.
    pub fn project(&self, features: &Tensor) -> Result<Tensor> {
        self.proj.forward(features)
    }

    /// Full `f_P`: one cloud to a `[D]` embedding.
    pub fn encode(&self, cloud: &PointCloud) -> Result<Tensor> {
        let patches = self.patchify(cloud)?;
        let h = self.project(&self.features(std::slice::from_ref(&patches))?)?;
        let d = h.cols();
        h.reshape(&[d])
    }

    /// Parameters of the patch embedding only (mini network + center embedding).
    pub fn is_patch_embedding(name: &str) -> bool {
        name.starts_with("point_encoder.patch_embed") || name.starts_with("point_encoder.pos_embed")
    }
}

impl Module for PointEncoder {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.patch_embed.visit(f);
        self.pos_embed.visit(f);
        f(&self.cls_token);
        f(&self.cls_pos);
        self.blocks.visit(f);
        self.norm.visit(f);
        self.proj.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.patch_embed.visit_mut(f);
        self.pos_embed.visit_mut(f);
        f(&mut self.cls_token);
        f(&mut self.cls_pos);
        self.blocks.visit_mut(f);
        self.norm.visit_mut(f);
        self.proj.visit_mut(f);
    }
}
