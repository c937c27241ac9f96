//! Measurement records and per-view / per-landmark state shared by the
//! simulator, the bootstrap, the solver and the metrics.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::factors::CameraIntrinsics;
use crate::graph::{Key, Values};
use crate::manifold::{Pose, UnitVector};
use crate::photometry::ImageCalibration;

/// Pinhole camera with image bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

/// One landmark seen in one image: its keypoint and the brightness sampled there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub image: u32,
    pub landmark: u32,
    pub pixel: Vector2<f64>,
    pub brightness: f64,
}

/// Sun direction measured in the camera frame of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SunMeasurement {
    pub image: u32,
    pub direction: UnitVector,
}

/// Everything the reconstruction pipeline consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub camera: Camera,
    pub num_images: u32,
    pub observations: Vec<Observation>,
    pub sun: Vec<SunMeasurement>,
}

impl MeasurementSet {
    /// Observations grouped by landmark id, each group sorted by image.
    pub fn by_landmark(&self) -> BTreeMap<u32, Vec<Observation>> {
        let mut out: BTreeMap<u32, Vec<Observation>> = BTreeMap::new();
        for o in &self.observations {
            out.entry(o.landmark).or_default().push(*o);
        }
        for v in out.values_mut() {
            v.sort_by_key(|o| o.image);
        }
        out
    }

    /// Observations of one image keyed by landmark id.
    pub fn in_image(&self, image: u32) -> BTreeMap<u32, Observation> {
        self.observations
            .iter()
            .filter(|o| o.image == image)
            .map(|o| (o.landmark, *o))
            .collect()
    }

    pub fn sun_for(&self, image: u32) -> Option<UnitVector> {
        self.sun.iter().find(|s| s.image == image).map(|s| s.direction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewState {
    pub pose: Pose,
    /// Sun direction in the body frame.
    pub sun: UnitVector,
    pub calibration: ImageCalibration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkState {
    pub position: Vector3<f64>,
    pub normal: UnitVector,
    pub albedo: f64,
}

/// Full state of a reconstruction: views indexed by image id, landmarks by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reconstruction {
    pub views: Vec<ViewState>,
    pub landmarks: BTreeMap<u32, LandmarkState>,
}

impl Reconstruction {
    /// Packs the state into graph values. Brightness scale and bias are
    /// written for every image; the graph decides which of them are variables.
    pub fn to_values(&self) -> Values {
        let mut v = Values::new();
        for (i, view) in self.views.iter().enumerate() {
            let i = i as u32;
            v.insert_pose(i, view.pose);
            v.insert_sun(i, view.sun);
            v.insert_scale(i, view.calibration.scale);
            v.insert_bias(i, view.calibration.bias);
        }
        for (&j, l) in &self.landmarks {
            v.insert_landmark(j, l.position);
            v.insert_normal(j, l.normal);
            v.insert_albedo(j, l.albedo);
        }
        v
    }

    /// Reads back every entry of `self` that has a value in `values`.
    pub fn update_from(&mut self, values: &Values) {
        for (i, view) in self.views.iter_mut().enumerate() {
            let i = i as u32;
            if let Some(p) = values.pose(&Key::pose(i)) {
                view.pose = *p;
            }
            if let Some(s) = values.unit(&Key::sun(i)) {
                view.sun = *s;
            }
            if let Some(x) = values.scalar(&Key::scale(i)) {
                view.calibration.scale = x;
            }
            if let Some(x) = values.scalar(&Key::bias(i)) {
                view.calibration.bias = x;
            }
        }
        for (&j, l) in self.landmarks.iter_mut() {
            if let Some(p) = values.point(&Key::landmark(j)) {
                l.position = *p;
            }
            if let Some(n) = values.unit(&Key::normal(j)) {
                l.normal = *n;
            }
            if let Some(a) = values.scalar(&Key::albedo(j)) {
                l.albedo = a;
            }
        }
    }

    /// Keeps only the landmarks in `ids`.
    pub fn retain_landmarks(&mut self, ids: &std::collections::BTreeSet<u32>) {
        self.landmarks.retain(|j, _| ids.contains(j));
    }
}
