//! Line-oriented interchange files.
//!
//! A measurement directory holds `measurements.txt` (camera header, then one
//! `image landmark u v brightness` row per keypoint) and
//! `sun_measurements.txt` (`image x y z`, camera frame). A reconstruction
//! directory holds `landmarks.ply`, `poses.txt` (`image`, row-major camera
//! to body rotation, camera centre), `sun.txt` (`image x y z`, body frame)
//! and, for uncalibrated runs, `calibration.txt` (`image scale bias`).
//! Floats are written in shortest round-trip form, so files reload bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{Matrix3, Vector2, Vector3};
use spcsfm::factors::CameraIntrinsics;
use spcsfm::manifold::{Pose, Rotation, UnitVector};
use spcsfm::photometry::ImageCalibration;
use spcsfm::reconstruction::{Camera, LandmarkState, MeasurementSet, Observation, Reconstruction, SunMeasurement, ViewState};

pub const MEASUREMENTS: &str = "measurements.txt";
pub const SUN_MEASUREMENTS: &str = "sun_measurements.txt";
pub const LANDMARKS: &str = "landmarks.ply";
pub const POSES: &str = "poses.txt";
pub const SUN: &str = "sun.txt";
pub const CALIBRATION: &str = "calibration.txt";

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Non-empty, non-comment lines with their one-based numbers.
fn rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn fields<T: FromStr>(line: &str, n: usize) -> Result<Vec<T>> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != n {
        bail!("expected {n} fields, found {}", parts.len());
    }
    parts.iter().map(|p| p.parse::<T>().map_err(|_| anyhow!("cannot parse `{p}`"))).collect()
}

/// Parses every row of a table with a leading integer id and `n` floats.
fn table(path: &Path, n: usize) -> Result<Vec<(u32, Vec<f64>)>> {
    let text = read_file(path)?;
    rows(&text)
        .map(|(no, line)| {
            let (id, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let parsed = id.parse::<u32>().map_err(|_| anyhow!("cannot parse id `{id}`"));
            parsed
                .and_then(|id| Ok((id, fields::<f64>(rest, n)?)))
                .with_context(|| format!("{}:{no}", path.display()))
        })
        .collect()
}

/// Keeps the stored bits of directions that are already unit length, so
/// that written files reload exactly; anything else is normalized.
fn unit(v: &[f64]) -> Result<UnitVector> {
    let v = Vector3::new(v[0], v[1], v[2]);
    if (v.norm() - 1.0).abs() < 1e-12 {
        return Ok(UnitVector::new_unchecked(v));
    }
    UnitVector::new(v).ok_or_else(|| anyhow!("zero direction"))
}

pub fn write_measurements(dir: &Path, m: &MeasurementSet) -> Result<()> {
    let k = &m.camera.intrinsics;
    let mut s = String::new();
    writeln!(s, "# camera fx fy cx cy width height").unwrap();
    writeln!(s, "camera {} {} {} {} {} {}", k.fx, k.fy, k.cx, k.cy, m.camera.width, m.camera.height).unwrap();
    writeln!(s, "images {}", m.num_images).unwrap();
    writeln!(s, "# image landmark u v brightness").unwrap();
    for o in &m.observations {
        writeln!(s, "{} {} {} {} {}", o.image, o.landmark, o.pixel.x, o.pixel.y, o.brightness).unwrap();
    }
    write_file(&dir.join(MEASUREMENTS), &s)?;

    let mut s = String::from("# image x y z (camera frame)\n");
    for sun in &m.sun {
        let d = sun.direction.as_vector();
        writeln!(s, "{} {} {} {}", sun.image, d.x, d.y, d.z).unwrap();
    }
    write_file(&dir.join(SUN_MEASUREMENTS), &s)
}

pub fn read_measurements(dir: &Path) -> Result<MeasurementSet> {
    let path = dir.join(MEASUREMENTS);
    let text = read_file(&path)?;
    let mut camera = None;
    let mut num_images = None;
    let mut observations = Vec::new();
    for (no, line) in rows(&text) {
        let at = || format!("{}:{no}", path.display());
        if let Some(rest) = line.strip_prefix("camera") {
            let v: Vec<f64> = fields(rest, 6).with_context(at)?;
            let intrinsics = CameraIntrinsics::new(v[0], v[1], v[2], v[3]);
            if !intrinsics.is_valid() || v[4] < 1.0 || v[5] < 1.0 {
                return Err(anyhow!("invalid camera")).with_context(at);
            }
            camera = Some(Camera { intrinsics, width: v[4] as u32, height: v[5] as u32 });
        } else if let Some(rest) = line.strip_prefix("images") {
            num_images = Some(fields::<u32>(rest, 1).with_context(at)?[0]);
        } else {
            let p: Vec<&str> = line.split_whitespace().collect();
            if p.len() != 5 {
                return Err(anyhow!("expected 5 fields, found {}", p.len())).with_context(at);
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|_| anyhow!("cannot parse `{s}`"));
            let o = (|| -> Result<Observation> {
                Ok(Observation {
                    image: p[0].parse().map_err(|_| anyhow!("cannot parse image id `{}`", p[0]))?,
                    landmark: p[1].parse().map_err(|_| anyhow!("cannot parse landmark id `{}`", p[1]))?,
                    pixel: Vector2::new(parse(p[2])?, parse(p[3])?),
                    brightness: parse(p[4])?,
                })
            })()
            .with_context(at)?;
            observations.push(o);
        }
    }
    let camera = camera.ok_or_else(|| anyhow!("{}: missing camera line", path.display()))?;
    let num_images = num_images.ok_or_else(|| anyhow!("{}: missing images line", path.display()))?;
    if let Some(o) = observations.iter().find(|o| o.image >= num_images) {
        bail!("{}: image {} out of range for {num_images} images", path.display(), o.image);
    }
    let sun = table(&dir.join(SUN_MEASUREMENTS), 3)?
        .into_iter()
        .map(|(image, v)| Ok(SunMeasurement { image, direction: unit(&v)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeasurementSet { camera, num_images, observations, sun })
}

pub fn landmarks_ply(landmarks: &BTreeMap<u32, LandmarkState>) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment landmarks with unit normals and albedo\n");
    writeln!(s, "element vertex {}", landmarks.len()).unwrap();
    for p in ["x", "y", "z", "nx", "ny", "nz", "albedo"] {
        writeln!(s, "property double {p}").unwrap();
    }
    s.push_str("property uint id\nend_header\n");
    for (j, l) in landmarks {
        let (p, n) = (l.position, l.normal.as_vector());
        writeln!(s, "{} {} {} {} {} {} {} {j}", p.x, p.y, p.z, n.x, n.y, n.z, l.albedo).unwrap();
    }
    s
}

/// Reads an ASCII PLY vertex element with at least `x y z nx ny nz albedo`;
/// ids default to the vertex index when there is no `id` property.
pub fn read_landmarks_ply(path: &Path) -> Result<BTreeMap<u32, LandmarkState>> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    let bad = |no: usize, msg: &str| anyhow!("{}:{}: {msg}", path.display(), no + 1);
    if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
        bail!("{}: not a PLY file", path.display());
    }
    let mut vertices = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for (no, line) in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(bad(no, "only ASCII PLY is supported")),
            ["comment", ..] | [] => {}
            ["element", "vertex", n] => {
                vertices = Some(n.parse::<usize>().map_err(|_| bad(no, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] => {}
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(bad(no, "unexpected header line")),
        }
    }
    let n = vertices.ok_or_else(|| anyhow!("{}: no vertex element", path.display()))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let need = ["x", "y", "z", "nx", "ny", "nz", "albedo"];
    let idx: Vec<usize> = need
        .iter()
        .map(|p| col(p).ok_or_else(|| anyhow!("{}: missing property {p}", path.display())))
        .collect::<Result<_>>()?;
    let id_col = col("id");
    let mut out = BTreeMap::new();
    for i in 0..n {
        let (no, line) = lines.next().ok_or_else(|| anyhow!("{}: truncated vertex list", path.display()))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| bad(no, &format!("cannot parse `{w}`"))))
            .collect::<Result<_>>()?;
        if v.len() != props.len() {
            return Err(bad(no, &format!("expected {} values, found {}", props.len(), v.len())));
        }
        let id = id_col.map_or(i as u32, |c| v[c] as u32);
        let normal = unit(&[v[idx[3]], v[idx[4]], v[idx[5]]]).map_err(|e| bad(no, &e.to_string()))?;
        let landmark = LandmarkState { position: Vector3::new(v[idx[0]], v[idx[1]], v[idx[2]]), normal, albedo: v[idx[6]] };
        if out.insert(id, landmark).is_some() {
            return Err(bad(no, &format!("duplicate landmark id {id}")));
        }
    }
    Ok(out)
}

pub fn write_reconstruction(dir: &Path, r: &Reconstruction, with_calibration: bool) -> Result<()> {
    write_file(&dir.join(LANDMARKS), &landmarks_ply(&r.landmarks))?;
    let mut poses = String::from("# image r00 r01 r02 r10 r11 r12 r20 r21 r22 cx cy cz\n");
    let mut sun = String::from("# image x y z (body frame)\n");
    let mut cal = String::from("# image scale bias\n");
    for (i, v) in r.views.iter().enumerate() {
        let m = v.pose.rotation.matrix();
        let c = v.pose.translation;
        write!(poses, "{i}").unwrap();
        for row in 0..3 {
            for col in 0..3 {
                write!(poses, " {}", m[(row, col)]).unwrap();
            }
        }
        writeln!(poses, " {} {} {}", c.x, c.y, c.z).unwrap();
        let s = v.sun.as_vector();
        writeln!(sun, "{i} {} {} {}", s.x, s.y, s.z).unwrap();
        writeln!(cal, "{i} {} {}", v.calibration.scale, v.calibration.bias).unwrap();
    }
    write_file(&dir.join(POSES), &poses)?;
    write_file(&dir.join(SUN), &sun)?;
    if with_calibration {
        write_file(&dir.join(CALIBRATION), &cal)?;
    }
    Ok(())
}

/// Loads a reconstruction directory. Views must be numbered `0..n`; without
/// a calibration file every image is taken as calibrated.
pub fn read_reconstruction(dir: &Path) -> Result<Reconstruction> {
    let poses = table(&dir.join(POSES), 12)?;
    let suns: BTreeMap<u32, Vec<f64>> = table(&dir.join(SUN), 3)?.into_iter().collect();
    let cal_path = dir.join(CALIBRATION);
    let cals: BTreeMap<u32, Vec<f64>> =
        if cal_path.exists() { table(&cal_path, 2)?.into_iter().collect() } else { BTreeMap::new() };
    let mut views = Vec::with_capacity(poses.len());
    for (expected, (i, v)) in poses.into_iter().enumerate() {
        if i as usize != expected {
            bail!("{}: views must be numbered consecutively from 0, found {i}", dir.join(POSES).display());
        }
        let m = Matrix3::from_row_slice(&v[..9]);
        let sun = suns.get(&i).ok_or_else(|| anyhow!("{}: no Sun direction for image {i}", dir.join(SUN).display()))?;
        let calibration = match cals.get(&i) {
            Some(c) => ImageCalibration::uncalibrated(c[0], c[1]),
            None if cals.is_empty() => ImageCalibration::calibrated(),
            None => bail!("{}: no calibration for image {i}", cal_path.display()),
        };
        views.push(ViewState {
            pose: Pose::new(Rotation::from_matrix_unchecked(m), Vector3::new(v[9], v[10], v[11])),
            sun: unit(sun)?,
            calibration,
        });
    }
    let landmarks = read_landmarks_ply(&dir.join(LANDMARKS))?;
    Ok(Reconstruction { views, landmarks })
}
