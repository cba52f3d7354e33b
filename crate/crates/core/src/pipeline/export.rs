//! Output formats: snapshot JSON, binary PLY per effective cluster, metrics CSV and
//! the final model summary.

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{ComponentModel, Snapshot};
use crate::clustering::ClusterId;
use crate::simulator::Metrics;
use crate::viewgraph::ViewId;

pub const METRICS_HEADER: [&str; 6] = ["t", "clusters_raw", "clusters_effective", "registered", "outliers", "recoveries"];

pub fn snapshot_json(s: &Snapshot) -> String {
    serde_json::to_string_pretty(s).expect("snapshot serializes")
}

pub fn parse_snapshot(text: &str) -> Result<Snapshot, serde_json::Error> {
    serde_json::from_str(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: usize,
    pub clusters_raw: usize,
    pub clusters_effective: usize,
    pub registered: usize,
    pub outliers: usize,
    pub recoveries: usize,
}

impl MetricsRow {
    pub fn new(t: usize, m: &Metrics) -> Self {
        Self {
            t,
            clusters_raw: m.clusters_raw,
            clusters_effective: m.clusters_effective,
            registered: m.registered_cameras,
            outliers: m.outlier_cameras,
            recoveries: m.recoveries,
        }
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(METRICS_HEADER).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

/// Binary little-endian PLY: points in white, camera centers in red.
pub fn ply_bytes(points: &[Vector3<f64>], cameras: &[Vector3<f64>]) -> Vec<u8> {
    let mut out = Vec::new();
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\ncomment points then camera centers\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len() + cameras.len()
    )
    .expect("in-memory write");
    let mut vertex = |x: &Vector3<f64>, rgb: [u8; 3]| {
        for c in x.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.extend_from_slice(&rgb);
    };
    for p in points {
        vertex(p, [255, 255, 255]);
    }
    for c in cameras {
        vertex(c, [255, 0, 0]);
    }
    out
}

pub fn component_ply(c: &ComponentModel) -> Vec<u8> {
    let centers: Vec<Vector3<f64>> = c.cameras.iter().map(|x| x.2).collect();
    ply_bytes(&c.points, &centers)
}

/// File name of an effective cluster's PLY: its lowest cluster id.
pub fn component_file_name(c: &ComponentModel) -> String {
    format!("cluster_{:04}.ply", c.clusters.first().map_or(0, |c| c.0))
}

/// Vertex count and vertex records `(x, y, z, rgb)` of a PLY written by [`ply_bytes`].
pub fn read_ply(bytes: &[u8]) -> Option<Vec<([f32; 3], [u8; 3])>> {
    let marker = b"end_header\n";
    let end = bytes.windows(marker.len()).position(|w| w == marker)? + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).ok()?;
    if !header.contains("format binary_little_endian 1.0") {
        return None;
    }
    let n: usize = header.lines().find_map(|l| l.strip_prefix("element vertex "))?.trim().parse().ok()?;
    let body = &bytes[end..];
    if body.len() != n * 15 {
        return None;
    }
    Some(
        body.chunks_exact(15)
            .map(|r| {
                let f = |k: usize| f32::from_le_bytes(r[4 * k..4 * k + 4].try_into().unwrap());
                ([f(0), f(1), f(2)], [r[12], r[13], r[14]])
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub view: ViewId,
    /// Ground-truth camera index when known.
    pub camera: Option<u32>,
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub clusters: Vec<ClusterId>,
    pub cameras: Vec<CameraRecord>,
    pub points: usize,
}

/// Final camera placement per effective cluster.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FinalModel {
    pub components: Vec<ComponentRecord>,
}

impl FinalModel {
    pub fn from_components(components: &[ComponentModel]) -> Self {
        Self {
            components: components
                .iter()
                .map(|c| ComponentRecord {
                    clusters: c.clusters.clone(),
                    cameras: c.cameras.iter().map(|(v, cam, x)| CameraRecord { view: *v, camera: *cam, center: (*x).into() }).collect(),
                    points: c.points.len(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ply_is_valid() {
        let b = ply_bytes(&[], &[]);
        let text = std::str::from_utf8(&b).unwrap();
        assert!(text.starts_with("ply\n") && text.ends_with("end_header\n"));
        assert!(text.contains("element vertex 0\n"));
        assert_eq!(read_ply(&b).unwrap().len(), 0);
    }

    #[test]
    fn ply_round_trip() {
        let pts = [Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.5, 0.25, 8.0)];
        let cams = [Vector3::new(0.0, 0.0, -10.0)];
        let v = read_ply(&ply_bytes(&pts, &cams)).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[1].0, [-1.5, 0.25, 8.0]);
        assert_eq!(v[2].1, [255, 0, 0]);
    }

    #[test]
    fn metrics_header_and_rows() {
        let rows = vec![MetricsRow { t: 0, clusters_raw: 1, clusters_effective: 1, registered: 7, outliers: 0, recoveries: 0 }];
        let text = metrics_csv(&rows);
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
        assert_eq!(text.lines().nth(1).unwrap(), "0,1,1,7,0,0");
        assert_eq!(parse_metrics_csv(&text).unwrap(), rows);
        assert_eq!(metrics_csv(&[]).trim(), METRICS_HEADER.join(","));
    }
}
