//! Ground-truth temple: a ring of inward-looking cameras around a cylindrical structure
//! whose surface repeats `fold` times about the vertical axis.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraPose, Intrinsics};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub n_cameras: usize,
    pub fold: usize,
    /// Camera ring radius.
    pub radius: f64,
    pub structure_radius: f64,
    pub structure_height: f64,
    /// Radial relief of the surface around `structure_radius`.
    pub relief: f64,
    pub points: usize,
    /// Share of points placed without symmetric copies.
    pub breaking_fraction: f64,
    /// A point is seen only when its surface normal is within this angle of the viewer.
    pub facing_deg: f64,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_cameras: 60,
            fold: 6,
            radius: 10.0,
            structure_radius: 4.0,
            structure_height: 5.0,
            relief: 0.5,
            points: 1500,
            breaking_fraction: 0.3,
            facing_deg: 40.0,
            focal: 500.0,
            width: 640,
            height: 480,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Symmetry {
    pub fold: usize,
    pub axis: [f64; 3],
}

/// Position of a symmetric point in its orbit: the point equals `S^shift` applied to the base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orbit {
    pub base: u32,
    pub shift: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub orbit: Option<Orbit>,
    /// Cameras that see the point, ascending.
    pub visible_in: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub pose: CameraPose,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub params: SceneParams,
    pub cameras: Vec<SceneCamera>,
    pub points: Vec<ScenePoint>,
    pub symmetry: Option<Symmetry>,
    /// Points seen by each camera, ascending. Index in this list is the keypoint index.
    pub visibility: Vec<Vec<u32>>,
}

/// Rotation by `2 pi shift / fold` about the vertical axis.
pub fn symmetry_rotation(fold: usize, shift: i64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), 2.0 * PI * shift as f64 / fold as f64)
}

pub fn generate_temple(params: &SceneParams, seed: u64) -> Result<Scene, SceneError> {
    let p = params;
    if p.fold == 0 || p.n_cameras < 2 * p.fold {
        return Err(SceneError::Invalid(format!("need at least {} cameras for fold {}", 2 * p.fold.max(1), p.fold)));
    }
    if !(p.radius > 0.0) || !(p.structure_radius > 0.0) || !(p.structure_height > 0.0) || !(p.focal > 0.0) {
        return Err(SceneError::Invalid("radii, height and focal length must be positive".into()));
    }
    if p.structure_radius + p.relief >= p.radius {
        return Err(SceneError::Invalid("cameras must lie outside the structure".into()));
    }
    if !(0.0..=1.0).contains(&p.breaking_fraction) || p.relief < 0.0 || p.width == 0 || p.height == 0 {
        return Err(SceneError::Invalid("breaking fraction, relief or image size out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intrinsics = Intrinsics::new(p.focal, p.focal, p.width as f64 / 2.0, p.height as f64 / 2.0);
    let cameras: Vec<SceneCamera> = (0..p.n_cameras)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / p.n_cameras as f64;
            let c = Vector3::new(p.radius * a.cos(), p.radius * a.sin(), 0.0);
            SceneCamera { pose: CameraPose::look_at(c, Vector3::zeros(), Vector3::z()), intrinsics }
        })
        .collect();

    // the relief and heights are sampled in units of the structure so the scene scales as a whole
    let sample = |rng: &mut ChaCha8Rng, sector: f64| {
        let phi = rng.random_range(0.0..sector);
        let r = p.structure_radius + rng.random_range(-1.0..=1.0) * p.relief;
        let z = (rng.random::<f64>() - 0.5) * p.structure_height;
        (phi, r, z)
    };
    let mut points = Vec::new();
    let symmetric = if p.fold > 1 { ((1.0 - p.breaking_fraction) * p.points as f64).round() as usize / p.fold } else { 0 };
    for base in 0..symmetric {
        let (phi, r, z) = sample(&mut rng, 2.0 * PI / p.fold as f64);
        let x = Vector3::new(r * phi.cos(), r * phi.sin(), z);
        let n = Vector3::new(phi.cos(), phi.sin(), 0.0);
        for shift in 0..p.fold {
            let s = symmetry_rotation(p.fold, shift as i64);
            points.push(ScenePoint {
                position: s * x,
                normal: s * n,
                orbit: Some(Orbit { base: base as u32, shift: shift as u32 }),
                visible_in: Vec::new(),
            });
        }
    }
    while points.len() < p.points {
        let (phi, r, z) = sample(&mut rng, 2.0 * PI);
        points.push(ScenePoint {
            position: Vector3::new(r * phi.cos(), r * phi.sin(), z),
            normal: Vector3::new(phi.cos(), phi.sin(), 0.0),
            orbit: None,
            visible_in: Vec::new(),
        });
    }

    let cos_facing = p.facing_deg.to_radians().cos();
    for pt in points.iter_mut() {
        for (ci, cam) in cameras.iter().enumerate() {
            if sees(cam, p, pt, cos_facing) {
                pt.visible_in.push(ci as u32);
            }
        }
    }
    // drop points seen fewer than twice; whole orbits go together since cameras are symmetric
    points.retain(|pt| pt.visible_in.len() >= 2);
    let mut visibility = vec![Vec::new(); cameras.len()];
    for (k, pt) in points.iter().enumerate() {
        for c in &pt.visible_in {
            visibility[*c as usize].push(k as u32);
        }
    }
    let symmetry = (p.fold > 1).then_some(Symmetry { fold: p.fold, axis: [0.0, 0.0, 1.0] });
    Ok(Scene { params: *p, cameras, points, symmetry, visibility })
}

fn sees(cam: &SceneCamera, p: &SceneParams, pt: &ScenePoint, cos_facing: f64) -> bool {
    let to_cam = cam.pose.center - pt.position;
    if pt.normal.dot(&to_cam) < cos_facing * to_cam.norm() {
        return false;
    }
    match cam.pose.project(&cam.intrinsics, &pt.position) {
        Some(px) => px.x >= 0.0 && px.y >= 0.0 && px.x < p.width as f64 && px.y < p.height as f64,
        None => false,
    }
}

impl Scene {
    pub fn n_cameras(&self) -> usize {
        self.cameras.len()
    }

    /// Cameras per symmetry step, when the ring is commensurate with the fold.
    pub fn symmetry_period(&self) -> Option<usize> {
        let s = self.symmetry?;
        (self.cameras.len() % s.fold == 0).then(|| self.cameras.len() / s.fold)
    }

    /// Index of the point `S^shift X` for a symmetric point `X`.
    pub fn orbit_partner(&self, point: usize, shift: i64) -> Option<usize> {
        let s = self.symmetry?;
        let o = self.points[point].orbit?;
        let k = s.fold as i64;
        let target = (o.shift as i64 + shift).rem_euclid(k) as u32;
        // orbit members are stored contiguously in shift order
        let start = point - o.shift as usize;
        let idx = start + target as usize;
        (self.points.get(idx)?.orbit == Some(Orbit { base: o.base, shift: target })).then_some(idx)
    }

    /// Exact projection of a point into a camera.
    pub fn project(&self, camera: usize, point: usize) -> Vector2<f64> {
        let cam = &self.cameras[camera];
        cam.pose.project(&cam.intrinsics, &self.points[point].position).expect("visible point projects")
    }

    /// Points seen by both cameras.
    pub fn shared(&self, a: usize, b: usize) -> Vec<u32> {
        let (va, vb) = (&self.visibility[a], &self.visibility[b]);
        let (mut i, mut j, mut out) = (0, 0, Vec::new());
        while i < va.len() && j < vb.len() {
            match va[i].cmp(&vb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(va[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }

    pub fn min_camera_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.cameras.iter().enumerate() {
            for b in &self.cameras[i + 1..] {
                best = best.min((a.pose.center - b.pose.center).norm());
            }
        }
        best
    }

    /// Largest distance between any two scene elements (cameras or points).
    pub fn diameter(&self) -> f64 {
        let all: Vec<Vector3<f64>> = self
            .cameras
            .iter()
            .map(|c| c.pose.center)
            .chain(self.points.iter().map(|p| p.position))
            .collect();
        let mut d: f64 = 0.0;
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                d = d.max((a - b).norm());
            }
        }
        d
    }
}
