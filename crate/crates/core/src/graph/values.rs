use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DVector, Vector2, Vector3, Vector6};

use crate::manifold::{Pose, TangentPose, UnitVector};

use super::GraphError;

/// Variable families, in the order their columns appear in the linear system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    Pose,
    SunDir,
    Landmark,
    Normal,
    Albedo,
    Scale,
    Bias,
}

impl VarKind {
    /// Tangent-space dimension.
    pub fn dim(self) -> usize {
        match self {
            VarKind::Pose => 6,
            VarKind::SunDir | VarKind::Normal => 2,
            VarKind::Landmark => 3,
            VarKind::Albedo | VarKind::Scale | VarKind::Bias => 1,
        }
    }

    fn tag(self) -> char {
        match self {
            VarKind::Pose => 'T',
            VarKind::SunDir => 's',
            VarKind::Landmark => 'l',
            VarKind::Normal => 'n',
            VarKind::Albedo => 'a',
            VarKind::Scale => 'L',
            VarKind::Bias => 'X',
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key {
    pub kind: VarKind,
    pub index: u32,
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.tag(), self.index)
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Key {
    pub const fn new(kind: VarKind, index: u32) -> Self {
        Self { kind, index }
    }
    pub const fn pose(i: u32) -> Self {
        Self::new(VarKind::Pose, i)
    }
    pub const fn sun(i: u32) -> Self {
        Self::new(VarKind::SunDir, i)
    }
    pub const fn landmark(i: u32) -> Self {
        Self::new(VarKind::Landmark, i)
    }
    pub const fn normal(i: u32) -> Self {
        Self::new(VarKind::Normal, i)
    }
    pub const fn albedo(i: u32) -> Self {
        Self::new(VarKind::Albedo, i)
    }
    pub const fn scale(i: u32) -> Self {
        Self::new(VarKind::Scale, i)
    }
    pub const fn bias(i: u32) -> Self {
        Self::new(VarKind::Bias, i)
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

/// A variable value on its manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variable {
    Pose(Pose),
    Unit(UnitVector),
    Point(Vector3<f64>),
    Scalar(f64),
}

impl Variable {
    pub fn dim(&self) -> usize {
        match self {
            Variable::Pose(_) => 6,
            Variable::Unit(_) => 2,
            Variable::Point(_) => 3,
            Variable::Scalar(_) => 1,
        }
    }

    fn matches(&self, kind: VarKind) -> bool {
        matches!(
            (self, kind),
            (Variable::Pose(_), VarKind::Pose)
                | (Variable::Unit(_), VarKind::SunDir | VarKind::Normal)
                | (Variable::Point(_), VarKind::Landmark)
                | (Variable::Scalar(_), VarKind::Albedo | VarKind::Scale | VarKind::Bias)
        )
    }

    /// Applies the variable's retraction to a tangent increment.
    pub fn retract(&self, delta: &[f64]) -> Variable {
        match self {
            Variable::Pose(p) => Variable::Pose(p.retract(&TangentPose::from_vector(
                &Vector6::from_column_slice(&delta[..6]),
            ))),
            Variable::Unit(u) => Variable::Unit(u.retract(&Vector2::new(delta[0], delta[1]))),
            Variable::Point(p) => Variable::Point(p + Vector3::new(delta[0], delta[1], delta[2])),
            Variable::Scalar(x) => Variable::Scalar(x + delta[0]),
        }
    }

    /// Tangent coordinates of `other` relative to `self`.
    pub fn local(&self, other: &Variable) -> Option<DVector<f64>> {
        Some(match (self, other) {
            (Variable::Pose(a), Variable::Pose(b)) => {
                DVector::from_column_slice(a.local(b).to_vector().as_slice())
            }
            (Variable::Unit(a), Variable::Unit(b)) => DVector::from_column_slice(a.local(b).as_slice()),
            (Variable::Point(a), Variable::Point(b)) => DVector::from_column_slice((b - a).as_slice()),
            (Variable::Scalar(a), Variable::Scalar(b)) => DVector::from_element(1, b - a),
            _ => return None,
        })
    }
}

/// Assignment of values to variable keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Values {
    map: BTreeMap<Key, Variable>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a value; the value type must match the key kind.
    pub fn insert(&mut self, key: Key, value: Variable) -> Result<(), GraphError> {
        if !value.matches(key.kind) {
            return Err(GraphError::TypeMismatch(key));
        }
        self.map.insert(key, value);
        Ok(())
    }

    pub fn insert_pose(&mut self, index: u32, pose: Pose) {
        self.map.insert(Key::pose(index), Variable::Pose(pose));
    }
    pub fn insert_sun(&mut self, index: u32, s: UnitVector) {
        self.map.insert(Key::sun(index), Variable::Unit(s));
    }
    pub fn insert_landmark(&mut self, index: u32, l: Vector3<f64>) {
        self.map.insert(Key::landmark(index), Variable::Point(l));
    }
    pub fn insert_normal(&mut self, index: u32, n: UnitVector) {
        self.map.insert(Key::normal(index), Variable::Unit(n));
    }
    pub fn insert_albedo(&mut self, index: u32, a: f64) {
        self.map.insert(Key::albedo(index), Variable::Scalar(a));
    }
    pub fn insert_scale(&mut self, index: u32, v: f64) {
        self.map.insert(Key::scale(index), Variable::Scalar(v));
    }
    pub fn insert_bias(&mut self, index: u32, v: f64) {
        self.map.insert(Key::bias(index), Variable::Scalar(v));
    }

    pub fn get(&self, key: &Key) -> Option<&Variable> {
        self.map.get(key)
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.map.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Variable)> {
        self.map.iter()
    }

    pub fn keys_of(&self, kind: VarKind) -> impl Iterator<Item = Key> + '_ {
        self.map
            .range(Key::new(kind, 0)..=Key::new(kind, u32::MAX))
            .map(|(k, _)| *k)
    }

    pub fn pose(&self, key: &Key) -> Option<&Pose> {
        match self.map.get(key) {
            Some(Variable::Pose(p)) => Some(p),
            _ => None,
        }
    }
    pub fn unit(&self, key: &Key) -> Option<&UnitVector> {
        match self.map.get(key) {
            Some(Variable::Unit(u)) => Some(u),
            _ => None,
        }
    }
    pub fn point(&self, key: &Key) -> Option<&Vector3<f64>> {
        match self.map.get(key) {
            Some(Variable::Point(p)) => Some(p),
            _ => None,
        }
    }
    pub fn scalar(&self, key: &Key) -> Option<f64> {
        match self.map.get(key) {
            Some(Variable::Scalar(x)) => Some(*x),
            _ => None,
        }
    }

    pub(crate) fn get_mut(&mut self, key: &Key) -> Option<&mut Variable> {
        self.map.get_mut(key)
    }
}
