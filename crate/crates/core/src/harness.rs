//! Synthetic outlier and occlusion experiments, plus the end-to-end `align`
//! entry point that normalizes inputs, searches, and maps the result back.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bnb::{csv_err, run, BnbConfig, Limits, Polish, Status, Trace};
use crate::error::{Error, Result};
use crate::linear::{LinearProblem, TransformKind};
use crate::pointset::{rms_error, PointSet};
use crate::assignment::{all_matchings, Assignment};
use crate::rigid::{initial_rigid_box, kabsch, rigid_energy, RigidProblem, RotationGrid, DEFAULT_GRID, DEFAULT_GRID_CAP};
use crate::transform::Transform;

const FISH: &str = include_str!("../data/fish.txt");
const LEAF: &str = include_str!("../data/leaf.txt");
const GLYPH: &str = include_str!("../data/glyph.txt");
const RABBIT: &str = include_str!("../data/rabbit.txt");

/// Bundled prototype shapes. The 2D ones are ordered along their outline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Fish,
    Leaf,
    Glyph,
    Rabbit,
}

impl Shape {
    pub fn dim(self) -> usize {
        if self == Shape::Rabbit {
            3
        } else {
            2
        }
    }

    /// The prototype, centered and scaled to unit size.
    pub fn points(self) -> PointSet {
        let text = match self {
            Shape::Fish => FISH,
            Shape::Leaf => LEAF,
            Shape::Glyph => GLYPH,
            Shape::Rabbit => RABBIT,
        };
        let raw = PointSet::parse(text, Some(self.dim())).expect("bundled shape parses");
        let n = raw.normalize().expect("bundled shape is not degenerate");
        PointSet::from_flat(n.dim(), n.coords().to_vec()).expect("same layout")
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fish" => Ok(Shape::Fish),
            "leaf" => Ok(Shape::Leaf),
            "glyph" => Ok(Shape::Glyph),
            "rabbit" => Ok(Shape::Rabbit),
            _ => Err(Error::Config(format!("unknown shape {s:?}"))),
        }
    }
}

/// The transform family to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformChoice {
    Similarity2d,
    Affine2d,
    Rigid3d,
}

impl TransformChoice {
    pub fn dim(self) -> usize {
        if self == TransformChoice::Rigid3d {
            3
        } else {
            2
        }
    }

    fn linear_kind(self) -> Option<TransformKind> {
        match self {
            TransformChoice::Similarity2d => Some(TransformKind::Similarity2d),
            TransformChoice::Affine2d => Some(TransformKind::Affine2d),
            TransformChoice::Rigid3d => None,
        }
    }
}

impl FromStr for TransformChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity2d" => Ok(TransformChoice::Similarity2d),
            "affine2d" => Ok(TransformChoice::Affine2d),
            "rigid3d" => Ok(TransformChoice::Rigid3d),
            _ => Err(Error::Config(format!("unknown transform {s:?}"))),
        }
    }
}

impl std::fmt::Display for TransformChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransformChoice::Similarity2d => "similarity2d",
            TransformChoice::Affine2d => "affine2d",
            TransformChoice::Rigid3d => "rigid3d",
        })
    }
}

/// Search settings shared by both cases.
#[derive(Debug, Clone)]
pub struct AlignOptions {
    pub eps0: f64,
    pub max_depth: Option<usize>,
    pub max_nodes: usize,
    pub grid: usize,
    pub padding: f64,
    /// Locally improve each new incumbent.
    pub polish: Polish,
    /// Reused across calls when present; must match `grid`.
    pub rotation_grid: Option<Arc<RotationGrid>>,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { eps0: 8.0, max_depth: None, max_nodes: Limits::default().max_nodes, grid: DEFAULT_GRID, padding: 0.0, polish: Polish::Off, rotation_grid: None }
    }
}

impl AlignOptions {
    fn bnb(&self) -> BnbConfig {
        BnbConfig { eps0: self.eps0, limits: Limits { max_nodes: self.max_nodes, max_depth: self.max_depth }, batch: 1, polish: self.polish }
    }

    pub fn rotation_grid(&self) -> Result<Arc<RotationGrid>> {
        match &self.rotation_grid {
            Some(g) if g.resolution() == self.grid => Ok(g.clone()),
            _ => Ok(Arc::new(RotationGrid::precompute_capped(&initial_rigid_box().slice(0..3), self.grid, DEFAULT_GRID_CAP)?)),
        }
    }
}

/// Result of [`align`] in the caller's coordinates.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub transform: Transform,
    /// `(model index, scene index)` pairs of the incumbent.
    pub matches: Vec<(usize, usize)>,
    /// RMS distance over matched pairs after the transform, original units.
    pub residual_rms: f64,
    /// Incumbent and bound in normalized units.
    pub energy: f64,
    pub lower_bound: f64,
    pub epsilon: f64,
    pub status: Status,
    pub trace: Trace,
    pub seconds: f64,
}

/// `⌊0.9 min(n_x, n_y)⌋`, at least 1.
pub fn default_np(n_x: usize, n_y: usize) -> usize {
    ((0.9 * n_x.min(n_y) as f64).floor() as usize).max(1)
}

/// Normalizes both sets, runs the search, and returns the transform mapping
/// the original model onto the original scene.
pub fn align(choice: TransformChoice, model: &PointSet, scene: &PointSet, n_p: usize, opts: &AlignOptions) -> Result<Alignment> {
    let start = Instant::now();
    let (xn, yn) = normalize_pair(choice, model, scene)?;
    let cfg = opts.bnb();

    let (t_norm, matches, energy, lower, epsilon, status, trace) = match choice.linear_kind() {
        Some(kind) => {
            let prob = LinearProblem::assemble(kind, &xn, &yn, n_p)?;
            let out = run(&prob, &cfg).map_err(|a| a.source)?;
            let t = kind.to_transform(&out.candidate.theta);
            (t, out.candidate.p.matches, out.best_upper, out.best_lower, out.epsilon, out.status, out.trace)
        }
        None => {
            let prob = RigidProblem::assemble_with_grid(&xn, &yn, n_p, opts.rotation_grid()?, opts.padding)?;
            let out = run(&prob, &cfg).map_err(|a| a.source)?;
            let t = Transform::Rigid3 { r: out.candidate.r, t: out.candidate.t };
            (t, out.candidate.p.matches, out.best_upper, out.best_lower, out.epsilon, out.status, out.trace)
        }
    };
    let transform = denormalize_transform(&t_norm, &xn, &yn);
    let residual_rms = if matches.is_empty() {
        0.0
    } else {
        let mi: Vec<usize> = matches.iter().map(|m| m.0).collect();
        let si: Vec<usize> = matches.iter().map(|m| m.1).collect();
        rms_error(&model.subset(&mi), &scene.subset(&si), &transform)?
    };
    Ok(Alignment {
        transform,
        matches,
        residual_rms,
        energy,
        lower_bound: lower,
        epsilon,
        status,
        trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn normalize_pair(choice: TransformChoice, model: &PointSet, scene: &PointSet) -> Result<(PointSet, PointSet)> {
    for s in [model, scene] {
        if s.dim() != choice.dim() {
            return Err(Error::DimensionMismatch { expected: choice.dim(), got: s.dim() });
        }
    }
    match choice {
        // rigid motions cannot absorb a scale change: both sets share one scale
        TransformChoice::Rigid3d => {
            let (cx, cy) = (model.centroid(), scene.centroid());
            let scale = model.radius_about(&cx).max(scene.radius_about(&cy));
            if !(scale > 0.0) {
                return Err(Error::DegenerateScale);
            }
            Ok((model.normalize_with(cx, scale), scene.normalize_with(cy, scale)))
        }
        _ => Ok((model.normalize()?, scene.normalize()?)),
    }
}

/// Exhaustive minimum over all integral matchings, for tiny inputs.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub matches: Vec<(usize, usize)>,
    /// Minimum with the transform restricted to the initial box (normalized units).
    pub energy: f64,
    /// Minimum with the transform eliminated in closed form, unconstrained.
    pub eliminated_energy: f64,
    pub transform: Transform,
    pub matchings: usize,
}

/// Upper limit on enumerated matchings.
pub const ORACLE_LIMIT: usize = 2_000_000;

fn matching_count(n_x: usize, n_y: usize, n_p: usize) -> f64 {
    let choose = |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    choose(n_x, n_p) * choose(n_y, n_p) * (1..=n_p).fold(1.0, |acc, i| acc * i as f64)
}

/// Enumerates every `n_p`-matching, solving for the transform of each, and
/// keeps the lowest energy. Uses the same normalization as [`align`].
pub fn oracle(choice: TransformChoice, model: &PointSet, scene: &PointSet, n_p: usize) -> Result<OracleResult> {
    let (xn, yn) = normalize_pair(choice, model, scene)?;
    let (n_x, n_y) = (xn.len(), yn.len());
    if n_p == 0 || n_p > n_x.min(n_y) {
        return Err(Error::InfeasibleCardinality { n_p, n_x, n_y });
    }
    let count = matching_count(n_x, n_y, n_p);
    if count > ORACLE_LIMIT as f64 {
        return Err(Error::TooLargeForEnumeration(n_x, n_y));
    }
    let all = all_matchings(n_x, n_y, n_p);
    let mut best: Option<(f64, Assignment, Transform)> = None;
    let mut elim = f64::INFINITY;
    match choice.linear_kind() {
        Some(kind) => {
            let prob = LinearProblem::assemble(kind, &xn, &yn, n_p)?;
            for p in all.iter() {
                let ub = prob.upper_bound(p)?;
                elim = elim.min(prob.eliminated_energy(&p.to_vec()).0);
                if best.as_ref().is_none_or(|b| ub.value < b.0) {
                    best = Some((ub.value, p.clone(), kind.to_transform(ub.theta.as_slice())));
                }
            }
        }
        None => {
            for p in all.iter() {
                let (r, t) = kabsch(&xn, &yn, p);
                let e = rigid_energy(&xn, &yn, &p.to_vec(), &r, &t);
                elim = elim.min(e);
                if best.as_ref().is_none_or(|b| e < b.0) {
                    best = Some((e, p.clone(), Transform::Rigid3 { r, t }));
                }
            }
        }
    }
    let (energy, p, t) = best.expect("at least one matching");
    Ok(OracleResult { matches: p.matches, energy, eliminated_energy: elim, transform: denormalize_transform(&t, &xn, &yn), matchings: all.len() })
}

/// With `x_n = (x − c_x)/s_x` and `y_n = (y − c_y)/s_y`, maps `y_n = A x_n + b`
/// to `y = (s_y/s_x) A x + c_y + s_y b − (s_y/s_x) A c_x`.
pub fn denormalize_transform(t: &Transform, xn: &PointSet, yn: &PointSet) -> Transform {
    let (nx, ny) = (&xn.norm_info, &yn.norm_info);
    let k = ny.scale / nx.scale;
    match t {
        Transform::Affine2 { a, b } => {
            let cx = Vector2::new(nx.centroid[0], nx.centroid[1]);
            let cy = Vector2::new(ny.centroid[0], ny.centroid[1]);
            let a2 = a * k;
            Transform::Affine2 { a: a2, b: cy + b * ny.scale - a2 * cx }
        }
        Transform::Rigid3 { r, t } => {
            let cx = Vector3::new(nx.centroid[0], nx.centroid[1], nx.centroid[2]);
            let cy = Vector3::new(ny.centroid[0], ny.centroid[1], ny.centroid[2]);
            // rigid normalization shares the scale, so k = 1
            Transform::Rigid3 { r: *r, t: cy + t * ny.scale - r * cx * k }
        }
    }
}

/// Which disturbances a trial applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Outlier,
    OcclusionOutlier,
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outlier" => Ok(TestKind::Outlier),
            "occlusion_outlier" => Ok(TestKind::OcclusionOutlier),
            _ => Err(Error::Config(format!("unknown test {s:?}"))),
        }
    }
}

/// Flat `key = value` experiment description; lists are comma separated.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub test: TestKind,
    pub shape: Shape,
    /// Evenly subsample the prototype to this many points.
    pub model_points: Option<usize>,
    pub transform: TransformChoice,
    /// Outliers per inlier, one sweep point each.
    pub outlier_ratios: Vec<f64>,
    /// Fraction of the model removed, one sweep point each; ignored by the outlier test.
    pub occlusions: Vec<f64>,
    /// Maximum rotation angle in radians; `π` or more means uniform over rotations.
    pub rotation_range: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub translation: f64,
    pub trials: usize,
    pub seed: u64,
    /// `n_p` as fractions of the true inlier count; defaults to ½, ¾ and 1.
    pub np_ratios: Vec<f64>,
    pub eps0: f64,
    pub max_depth: Option<usize>,
    pub max_nodes: usize,
    pub grid: usize,
    pub padding: f64,
    pub polish: Polish,
    /// RMS threshold (normalized units) counted as a success in the summary.
    pub success_rms: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            test: TestKind::Outlier,
            shape: Shape::Fish,
            model_points: None,
            transform: TransformChoice::Similarity2d,
            outlier_ratios: vec![0.0],
            occlusions: vec![0.0],
            rotation_range: std::f64::consts::PI,
            scale_min: 0.5,
            scale_max: 1.5,
            translation: 0.5,
            trials: 10,
            seed: 0,
            np_ratios: vec![0.5, 0.75, 1.0],
            eps0: 8.0,
            max_depth: None,
            max_nodes: Limits::default().max_nodes,
            grid: DEFAULT_GRID,
            padding: 0.0,
            polish: Polish::Off,
            success_rms: 0.1,
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let mut shape_set = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: n + 1, msg: format!("expected key = value, got {line:?}") });
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "test" => c.test = v.parse()?,
                "shape" => {
                    c.shape = v.parse()?;
                    shape_set = true;
                }
                "model_points" => c.model_points = Some(parse_num(k, v)?),
                "transform" => c.transform = v.parse()?,
                "outlier_ratios" | "outlier_ratio" => c.outlier_ratios = parse_list(k, v)?,
                "occlusions" | "occlusion" => c.occlusions = parse_list(k, v)?,
                "rotation_range" => c.rotation_range = parse_num(k, v)?,
                "scale_min" => c.scale_min = parse_num(k, v)?,
                "scale_max" => c.scale_max = parse_num(k, v)?,
                "translation" => c.translation = parse_num(k, v)?,
                "trials" => c.trials = parse_num(k, v)?,
                "seed" => c.seed = parse_num(k, v)?,
                "np_ratios" | "np_ratio" => c.np_ratios = parse_list(k, v)?,
                "eps0" => c.eps0 = parse_num(k, v)?,
                "max_depth" => c.max_depth = if v == "none" { None } else { Some(parse_num(k, v)?) },
                "max_nodes" => c.max_nodes = parse_num(k, v)?,
                "grid" => c.grid = parse_num(k, v)?,
                "padding" => c.padding = parse_num(k, v)?,
                "polish" => c.polish = v.parse()?,
                "success_rms" => c.success_rms = parse_num(k, v)?,
                _ => return Err(Error::Parse { line: n + 1, msg: format!("unknown key {k:?}") }),
            }
        }
        if !shape_set && c.transform == TransformChoice::Rigid3d {
            c.shape = Shape::Rabbit;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.dim() != self.transform.dim() {
            return Err(Error::Config(format!("shape {:?} is {}D but {} needs {}D", self.shape, self.shape.dim(), self.transform, self.transform.dim())));
        }
        if self.occlusions.iter().any(|o| !(0.0..1.0).contains(o)) {
            return Err(Error::Config("occlusion ratios must lie in [0, 1)".into()));
        }
        if self.outlier_ratios.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("outlier ratios must be nonnegative".into()));
        }
        if self.np_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Config("n_p ratios must lie in (0, 1]".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config("need 0 < scale_min <= scale_max".into()));
        }
        if self.eps0 < 0.0 || self.rotation_range < 0.0 || self.translation < 0.0 {
            return Err(Error::Config("eps0, rotation_range and translation must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn align_options(&self) -> AlignOptions {
        AlignOptions { eps0: self.eps0, max_depth: self.max_depth, max_nodes: self.max_nodes, grid: self.grid, padding: self.padding, polish: self.polish, rotation_grid: None }
    }

    fn occlusion_levels(&self) -> Vec<f64> {
        match self.test {
            TestKind::Outlier => vec![0.0],
            TestKind::OcclusionOutlier => self.occlusions.clone(),
        }
    }

    /// The prototype after optional even subsampling.
    pub fn model(&self) -> PointSet {
        let proto = self.shape.points();
        match self.model_points {
            Some(m) if m > 0 && m < proto.len() => {
                let idx: Vec<usize> = (0..m).map(|k| k * proto.len() / m).collect();
                proto.subset(&idx)
            }
            _ => proto,
        }
    }
}

/// Disturbance of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Disturbance {
    pub outlier_ratio: f64,
    pub occlusion: f64,
}

/// A generated model/scene pair with its ground truth.
#[derive(Debug, Clone)]
pub struct TestPair {
    pub model: PointSet,
    pub scene: PointSet,
    pub truth: Transform,
    /// `(model index, scene index)` for every scene inlier.
    pub inliers: Vec<(usize, usize)>,
}

impl TestPair {
    pub fn n_inliers(&self) -> usize {
        self.inliers.len()
    }

    /// RMS of `transform` over the true inlier pairs, divided by the scene's
    /// normalization scale.
    pub fn normalized_rms(&self, transform: &Transform) -> Result<f64> {
        let mi: Vec<usize> = self.inliers.iter().map(|m| m.0).collect();
        let si: Vec<usize> = self.inliers.iter().map(|m| m.1).collect();
        let rms = rms_error(&self.model.subset(&mi), &self.scene.subset(&si), transform)?;
        let c = self.scene.centroid();
        Ok(rms / self.scene.radius_about(&c))
    }
}

fn random_rotation_2d(rng: &mut ChaCha8Rng, range: f64) -> Matrix2<f64> {
    let a = if range > 0.0 { rng.gen_range(-range..=range) } else { 0.0 };
    Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos())
}

fn random_rotation_3d(rng: &mut ChaCha8Rng, range: f64) -> Matrix3<f64> {
    if range >= std::f64::consts::PI {
        // uniform over SO(3) from three uniforms
        let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let tau = std::f64::consts::TAU;
        let q = nalgebra::Quaternion::new(
            u1.sqrt() * (tau * u3).cos(),
            (1.0 - u1).sqrt() * (tau * u2).sin(),
            (1.0 - u1).sqrt() * (tau * u2).cos(),
            u1.sqrt() * (tau * u3).sin(),
        );
        return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
    }
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    let axis = Vector3::new(s * phi.cos(), s * phi.sin(), z);
    let angle = if range > 0.0 { rng.gen_range(-range..=range) } else { 0.0 };
    crate::rigid::rotation_from_axis_angle(&(axis * angle))
}

/// Builds one trial: scene = transformed (occluded) model plus uniform
/// outliers in the bounding box of the scene inliers, in shuffled order.
/// Deterministic in `(cfg.seed, trial)`.
pub fn generate_test_pair(cfg: &ExperimentConfig, dist: Disturbance, trial: u64) -> Result<TestPair> {
    let model = cfg.model();
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial);

    let translation: Vec<f64> = (0..d).map(|_| if cfg.translation > 0.0 { rng.gen_range(-cfg.translation..=cfg.translation) } else { 0.0 }).collect();
    let truth = if d == 2 {
        let s = if cfg.transform == TransformChoice::Rigid3d { 1.0 } else { rng.gen_range(cfg.scale_min..=cfg.scale_max) };
        let rot = random_rotation_2d(&mut rng, cfg.rotation_range);
        Transform::Affine2 { a: rot * s, b: Vector2::new(translation[0], translation[1]) }
    } else {
        let rot = random_rotation_3d(&mut rng, cfg.rotation_range);
        Transform::Rigid3 { r: rot, t: Vector3::new(translation[0], translation[1], translation[2]) }
    };

    // occlusion removes a contiguous part: a run along the outline in 2D, a cap in 3D
    let n = model.len();
    let removed = (dist.occlusion * n as f64).round() as usize;
    let visible: Vec<usize> = if removed == 0 {
        (0..n).collect()
    } else if d == 2 {
        let start = rng.gen_range(0..n);
        (0..n).filter(|&i| (i + n - start) % n >= removed).collect()
    } else {
        let dir = random_rotation_3d(&mut rng, std::f64::consts::PI) * Vector3::x();
        let mut order: Vec<usize> = (0..n).collect();
        let proj = |i: usize| dir.dot(&Vector3::from_column_slice(model.point(i)));
        order.sort_by(|&a, &b| proj(b).total_cmp(&proj(a)).then(a.cmp(&b)));
        let mut keep = order[removed..].to_vec();
        keep.sort_unstable();
        keep
    };
    if visible.len() < 3 {
        return Err(Error::Config(format!("occlusion {} leaves {} inliers", dist.occlusion, visible.len())));
    }

    let inlier_pts: Vec<Vec<f64>> = visible.iter().map(|&i| truth.apply(model.point(i))).collect();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in &inlier_pts {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let n_out = (dist.outlier_ratio * visible.len() as f64).round() as usize;
    let outliers: Vec<Vec<f64>> = (0..n_out).map(|_| (0..d).map(|k| rng.gen_range(lo[k]..=hi[k])).collect()).collect();

    let total = inlier_pts.len() + outliers.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    // order[pos] = source index placed at scene position pos
    let mut scene_pts = vec![Vec::new(); total];
    let mut inliers = Vec::with_capacity(visible.len());
    for (pos, &src) in order.iter().enumerate() {
        if src < inlier_pts.len() {
            scene_pts[pos] = inlier_pts[src].clone();
            inliers.push((visible[src], pos));
        } else {
            scene_pts[pos] = outliers[src - inlier_pts.len()].clone();
        }
    }
    inliers.sort_unstable();
    Ok(TestPair { model, scene: PointSet::new(d, &scene_pts)?, truth, inliers })
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub outlier_ratio: f64,
    pub occlusion: f64,
    pub np_ratio: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub n_p: usize,
    pub rms: f64,
    pub energy: f64,
    pub lower_bound: f64,
    pub status: Status,
    pub nodes: usize,
    pub seconds: f64,
}

/// Aggregate per sweep point, the axes of the error-versus-disturbance plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub outlier_ratio: f64,
    pub occlusion: f64,
    pub np_ratio: f64,
    pub trials: usize,
    pub mean_rms: f64,
    pub median_rms: f64,
    pub successes: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResults {
    /// Writes `results.csv` and `summary.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::create_dir_all(dir.as_ref())?;
        write_rows(dir.as_ref().join("results.csv"), &self.rows)?;
        write_rows(dir.as_ref().join("summary.csv"), &self.summary)
    }
}

fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every (disturbance, n_p ratio, trial) combination. Rows are ordered by
/// outlier ratio, occlusion, n_p ratio, then trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let mut opts = cfg.align_options();
    if cfg.transform == TransformChoice::Rigid3d {
        opts.rotation_grid = Some(opts.rotation_grid()?);
    }
    let mut jobs = Vec::new();
    for &outlier_ratio in &cfg.outlier_ratios {
        for &occlusion in &cfg.occlusion_levels() {
            for &np_ratio in &cfg.np_ratios {
                for trial in 0..cfg.trials {
                    jobs.push((Disturbance { outlier_ratio, occlusion }, np_ratio, trial));
                }
            }
        }
    }
    let rows: Vec<TrialRow> = jobs
        .par_iter()
        .map(|&(dist, np_ratio, trial)| {
            let pair = generate_test_pair(cfg, dist, trial as u64)?;
            let n_p = ((np_ratio * pair.n_inliers() as f64).round() as usize).max(1);
            let out = align(cfg.transform, &pair.model, &pair.scene, n_p, &opts)?;
            Ok(TrialRow {
                trial,
                outlier_ratio: dist.outlier_ratio,
                occlusion: dist.occlusion,
                np_ratio,
                n_x: pair.model.len(),
                n_y: pair.scene.len(),
                n_p,
                rms: pair.normalized_rms(&out.transform)?,
                energy: out.energy,
                lower_bound: out.lower_bound,
                status: out.status,
                nodes: out.trace.nodes_evaluated,
                seconds: out.seconds,
            })
        })
        .collect::<Result<_>>()?;

    let mut summary = Vec::new();
    for group in rows.chunk_by(|a, b| (a.outlier_ratio, a.occlusion, a.np_ratio) == (b.outlier_ratio, b.occlusion, b.np_ratio)) {
        let mut errs: Vec<f64> = group.iter().map(|r| r.rms).collect();
        errs.sort_by(f64::total_cmp);
        let m = errs.len();
        let median = if m % 2 == 1 { errs[m / 2] } else { 0.5 * (errs[m / 2 - 1] + errs[m / 2]) };
        summary.push(SummaryRow {
            outlier_ratio: group[0].outlier_ratio,
            occlusion: group[0].occlusion,
            np_ratio: group[0].np_ratio,
            trials: m,
            mean_rms: errs.iter().sum::<f64>() / m as f64,
            median_rms: median,
            successes: errs.iter().filter(|&&e| e <= cfg.success_rms).count(),
        });
    }
    Ok(ExperimentResults { rows, summary })
}
