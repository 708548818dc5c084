//! Domain types for Gaussians, object fields, interactions, and scenes,
//! plus the object-to-composition transform and scene flattening.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use std::collections::BTreeMap;

use crate::{Error, Result};

/// Unit-norm tolerance for quaternions supplied from outside.
pub const ROTATION_TOL: f64 = 1e-6;

/// One anisotropic 3D Gaussian primitive.
///
/// Covariance is stored factored as rotation plus per-axis standard
/// deviations, so Rot·diag(scale²)·Rotᵀ is positive-definite by
/// construction whenever the scales are positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviations, strictly positive.
    pub scale: Vector3<f64>,
    /// Opacity in [0, 1].
    pub opacity: f64,
    /// RGB color, each channel in [0, 1].
    pub color: [f64; 3],
}

impl Gaussian {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Gaussian {
            mean,
            rotation: UnitQuaternion::identity(),
            scale: Vector3::new(scale, scale, scale),
            opacity,
            color,
        }
    }

    /// Reconstruct the 3x3 world covariance Rot·diag(scale²)·Rotᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix();
        let d = Matrix3::from_diagonal(&self.scale.map(|s| s * s));
        r * d * r.transpose()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.x > 0.0 && self.scale.y > 0.0 && self.scale.z > 0.0) {
            return Err(Error::Validation(format!(
                "gaussian scale must be strictly positive, got {:?}",
                self.scale
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::Validation(format!(
                "opacity {} outside [0,1]",
                self.opacity
            )));
        }
        for c in self.color {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Validation(format!("color {c} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// An ordered collection of Gaussians in object-local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectField {
    id: String,
    gaussians: Vec<Gaussian>,
    prompt: String,
    /// Optional geometric initialization points the field was built from.
    init_points: Option<Vec<Vector3<f64>>>,
    /// Cached arithmetic mean of the Gaussian means; recomputed whenever
    /// the Gaussians are replaced. Read in the contact-loss inner loop.
    center: Vector3<f64>,
}

impl ObjectField {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, gaussians: Vec<Gaussian>) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::Validation("object field must be nonempty".into()));
        }
        let center = mean_of_means(&gaussians);
        Ok(ObjectField {
            id: id.into(),
            gaussians,
            prompt: prompt.into(),
            init_points: None,
            center,
        })
    }

    pub fn with_init_points(mut self, points: Vec<Vector3<f64>>) -> Self {
        self.init_points = Some(points);
        self
    }

    /// New revision with replaced Gaussians; the cached center is recomputed.
    pub fn with_gaussians(&self, gaussians: Vec<Gaussian>) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::Validation("object field must be nonempty".into()));
        }
        let center = mean_of_means(&gaussians);
        Ok(ObjectField {
            id: self.id.clone(),
            gaussians,
            prompt: self.prompt.clone(),
            init_points: self.init_points.clone(),
            center,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn init_points(&self) -> Option<&[Vector3<f64>]> {
        self.init_points.as_deref()
    }

    /// Arithmetic mean of the Gaussian means (cached).
    pub fn geometric_center(&self) -> Vector3<f64> {
        self.center
    }

    /// Median y over the ceil(0.001·N) lowest-y Gaussian means (min 1).
    pub fn floor_height(&self) -> f64 {
        let n = self.gaussians.len();
        let k = ((0.001 * n as f64).ceil() as usize).max(1);
        let mut ys: Vec<f64> = self.gaussians.iter().map(|g| g.mean.y).collect();
        ys.sort_by(|a, b| a.total_cmp(b));
        let lowest = &ys[..k];
        if k % 2 == 1 {
            lowest[k / 2]
        } else {
            0.5 * (lowest[k / 2 - 1] + lowest[k / 2])
        }
    }

    /// Axis-aligned bounding radius of the means around the center.
    pub fn bounding_radius(&self) -> f64 {
        self.gaussians
            .iter()
            .map(|g| (g.mean - self.center).norm())
            .fold(0.0, f64::max)
    }
}

fn mean_of_means(gaussians: &[Gaussian]) -> Vector3<f64> {
    let mut sum = Vector3::zeros();
    for g in gaussians {
        sum += g.mean;
    }
    sum / gaussians.len() as f64
}

/// Similarity transform (scale, rotation, translation) mapping child
/// coordinates into an anchor's frame: x' = s·R·x + t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl PairTransform {
    pub fn identity() -> Self {
        PairTransform {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn scaling(scale: f64) -> Self {
        PairTransform {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale,
        }
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// self ∘ other: apply `other` first, then `self`.
    pub fn compose(&self, other: &PairTransform) -> PairTransform {
        PairTransform {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> PairTransform {
        let inv_rot = self.rotation.inverse();
        PairTransform {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }
}

/// Optimization status of a pairwise interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionStatus {
    Unset,
    Initialized,
    Settled,
}

/// The pair transform P mapping a child object into an anchor's frame,
/// plus the interaction prompt and optimization status.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionParams {
    pub anchor_id: String,
    pub child_id: String,
    /// Raw quaternion (w, x, y, z); validated to unit norm within 1e-6.
    pub rotation: Quaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
    pub prompt: String,
    pub status: InteractionStatus,
}

impl InteractionParams {
    pub fn unset(anchor_id: impl Into<String>, child_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        InteractionParams {
            anchor_id: anchor_id.into(),
            child_id: child_id.into(),
            rotation: Quaternion::new(1.0, 0.0, 0.0, 0.0),
            translation: Vector3::zeros(),
            scale: 1.0,
            prompt: prompt.into(),
            status: InteractionStatus::Unset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchor_id == self.child_id {
            return Err(Error::Validation(format!(
                "interaction anchor and child must differ, got '{}'",
                self.anchor_id
            )));
        }
        if !(self.scale > 0.0) {
            return Err(Error::Validation(format!(
                "interaction scale must be positive, got {}",
                self.scale
            )));
        }
        if (self.rotation.norm() - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Validation(format!(
                "interaction rotation must be unit norm within {ROTATION_TOL}, norm is {}",
                self.rotation.norm()
            )));
        }
        Ok(())
    }

    /// The validated pair transform.
    pub fn transform(&self) -> Result<PairTransform> {
        self.validate()?;
        Ok(PairTransform {
            rotation: UnitQuaternion::from_quaternion(self.rotation),
            translation: self.translation,
            scale: self.scale,
        })
    }
}

/// Map an object field through a pair transform: means move by x' = s·R·x + t,
/// per-Gaussian rotations compose with R, scales multiply by s. Opacity and
/// color are untouched; the input is not modified.
pub fn transform_to_composition(field: &ObjectField, params: &InteractionParams) -> Result<ObjectField> {
    let t = params.transform()?;
    Ok(apply_transform(field, &t))
}

/// Apply a pair transform to every Gaussian of a field.
pub fn apply_transform(field: &ObjectField, t: &PairTransform) -> ObjectField {
    let gaussians = field
        .gaussians
        .iter()
        .map(|g| Gaussian {
            mean: t.apply(g.mean),
            rotation: t.rotation * g.rotation,
            scale: g.scale * t.scale,
            opacity: g.opacity,
            color: g.color,
        })
        .collect();
    let center = t.apply(field.center);
    ObjectField {
        id: field.id.clone(),
        gaussians,
        prompt: field.prompt.clone(),
        init_points: field.init_points.clone(),
        center,
    }
}

/// Multi-object scene: objects plus the pairwise interactions between them.
/// Interactions form a DAG with objects as sources; each interaction names a
/// designated anchor and a child.
#[derive(Debug, Clone)]
pub struct Scene {
    objects: BTreeMap<String, ObjectField>,
    interactions: Vec<InteractionParams>,
    /// World scale applied to root objects when flattening.
    pub anchor_scale: f64,
}

pub const DEFAULT_ANCHOR_SCALE: f64 = 0.8;

impl Scene {
    pub fn new(objects: Vec<ObjectField>, interactions: Vec<InteractionParams>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for obj in objects {
            if map.insert(obj.id().to_string(), obj).is_some() {
                return Err(Error::Validation("duplicate object id".into()));
            }
        }
        let scene = Scene {
            objects: map,
            interactions,
            anchor_scale: DEFAULT_ANCHOR_SCALE,
        };
        scene.validate_graph()?;
        Ok(scene)
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectField> {
        self.objects.values()
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &str> {
        self.objects.keys().map(|s| s.as_str())
    }

    pub fn object(&self, id: &str) -> Result<&ObjectField> {
        self.objects.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn interactions(&self) -> &[InteractionParams] {
        &self.interactions
    }

    pub fn interaction(&self, anchor_id: &str, child_id: &str) -> Result<&InteractionParams> {
        self.interactions
            .iter()
            .find(|i| i.anchor_id == anchor_id && i.child_id == child_id)
            .ok_or_else(|| Error::UnknownId(format!("interaction {anchor_id},{child_id}")))
    }

    pub fn replace_object(&mut self, field: ObjectField) -> Result<()> {
        if !self.objects.contains_key(field.id()) {
            return Err(Error::UnknownId(field.id().to_string()));
        }
        self.objects.insert(field.id().to_string(), field);
        Ok(())
    }

    pub fn set_interaction(&mut self, params: InteractionParams) -> Result<()> {
        let idx = self
            .interactions
            .iter()
            .position(|i| i.anchor_id == params.anchor_id && i.child_id == params.child_id)
            .ok_or_else(|| Error::UnknownId(format!("interaction {},{}", params.anchor_id, params.child_id)))?;
        self.interactions[idx] = params;
        Ok(())
    }

    /// Checks referenced ids, acyclicity, and pair uniqueness.
    pub fn validate_graph(&self) -> Result<()> {
        let mut pairs = std::collections::BTreeSet::new();
        for i in &self.interactions {
            if !self.objects.contains_key(&i.anchor_id) {
                return Err(Error::UnknownId(i.anchor_id.clone()));
            }
            if !self.objects.contains_key(&i.child_id) {
                return Err(Error::UnknownId(i.child_id.clone()));
            }
            if i.anchor_id == i.child_id {
                return Err(Error::Graph(format!("self interaction on '{}'", i.anchor_id)));
            }
            let key = if i.anchor_id < i.child_id {
                (i.anchor_id.clone(), i.child_id.clone())
            } else {
                (i.child_id.clone(), i.anchor_id.clone())
            };
            if !pairs.insert(key) {
                return Err(Error::Graph(format!(
                    "more than one interaction for pair {},{}",
                    i.anchor_id, i.child_id
                )));
            }
        }
        // Cycle check over the anchor->child edges.
        self.topological_order()?;
        Ok(())
    }

    /// Interactions in ancestral order: an interaction appears after any
    /// interaction that places its anchor.
    pub fn topological_order(&self) -> Result<Vec<(String, String)>> {
        let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
        for i in &self.interactions {
            parent.insert(i.child_id.as_str(), i.anchor_id.as_str());
        }
        // Walk each chain to the root, failing on cycles.
        for start in self.objects.keys() {
            let mut seen = std::collections::BTreeSet::new();
            let mut cur = start.as_str();
            while let Some(&p) = parent.get(cur) {
                if !seen.insert(cur) {
                    return Err(Error::Graph(format!("interaction cycle through '{cur}'")));
                }
                cur = p;
            }
        }
        let mut order: Vec<(String, String)> = Vec::new();
        let mut placed: std::collections::BTreeSet<&str> = self
            .objects
            .keys()
            .map(|s| s.as_str())
            .filter(|id| !parent.contains_key(id))
            .collect();
        let mut remaining: Vec<&InteractionParams> = self.interactions.iter().collect();
        while !remaining.is_empty() {
            let before = remaining.len();
            remaining.retain(|i| {
                if placed.contains(i.anchor_id.as_str()) {
                    placed.insert(i.child_id.as_str());
                    order.push((i.anchor_id.clone(), i.child_id.clone()));
                    false
                } else {
                    true
                }
            });
            if remaining.len() == before {
                return Err(Error::Graph("interaction graph is not ancestrally orderable".into()));
            }
        }
        Ok(order)
    }

    /// Scratch copy with one interaction's transform swapped in
    /// (status forced to Initialized so the scene can be flattened).
    pub fn with_trial_params(&self, anchor_id: &str, child_id: &str, t: &PairTransform) -> Result<Scene> {
        let mut scene = self.clone();
        let mut params = scene.interaction(anchor_id, child_id)?.clone();
        params.rotation = *t.rotation.quaternion();
        params.translation = t.translation;
        params.scale = t.scale;
        params.status = InteractionStatus::Initialized;
        scene.set_interaction(params)?;
        Ok(scene)
    }
}

/// One object's slice of a flattened scene.
#[derive(Debug, Clone)]
pub struct ObjectSpan {
    pub object_id: String,
    /// Range of this object's Gaussians in the flattened field.
    pub range: std::ops::Range<usize>,
    /// Transform of this object's anchor frame into world coordinates
    /// (for roots, the root anchor transform itself sits in `pair`).
    pub outer: PairTransform,
    /// The object's own pair transform within the anchor frame;
    /// identity-with-anchor-scale for roots.
    pub pair: PairTransform,
}

impl ObjectSpan {
    /// Full object-to-world transform.
    pub fn world(&self) -> PairTransform {
        self.outer.compose(&self.pair)
    }
}

/// A scene flattened into world coordinates with per-Gaussian provenance.
#[derive(Debug, Clone)]
pub struct FlatScene {
    world: ObjectField,
    spans: Vec<ObjectSpan>,
    /// Object-local Gaussians, parallel to the world field.
    local: Vec<Gaussian>,
}

impl FlatScene {
    pub fn field(&self) -> &ObjectField {
        &self.world
    }

    pub fn into_field(self) -> ObjectField {
        self.world
    }

    pub fn spans(&self) -> &[ObjectSpan] {
        &self.spans
    }

    pub fn span(&self, object_id: &str) -> Result<&ObjectSpan> {
        self.spans
            .iter()
            .find(|s| s.object_id == object_id)
            .ok_or_else(|| Error::UnknownId(object_id.to_string()))
    }

    pub fn local_gaussians(&self) -> &[Gaussian] {
        &self.local
    }

    /// The world-space field of a single object.
    pub fn object_world(&self, object_id: &str) -> Result<ObjectField> {
        let span = self.span(object_id)?;
        ObjectField::new(
            object_id,
            "",
            self.world.gaussians()[span.range.clone()].to_vec(),
        )
    }
}

/// Flatten a scene into one world-coordinate field. Each object's cumulative
/// transform is the composition along its unique anchor chain down to the
/// root anchor; roots are scaled by `scene.anchor_scale` with zero
/// translation and identity rotation.
pub fn flatten_scene(scene: &Scene) -> Result<FlatScene> {
    scene.validate_graph()?;
    // Reject ambiguous graphs: more than one inbound interaction per child.
    let mut inbound: BTreeMap<&str, usize> = BTreeMap::new();
    for i in scene.interactions() {
        *inbound.entry(i.child_id.as_str()).or_insert(0) += 1;
    }
    if let Some((id, _)) = inbound.iter().find(|(_, &n)| n > 1) {
        return Err(Error::Graph(format!(
            "object '{id}' has more than one inbound anchor chain"
        )));
    }
    for i in scene.interactions() {
        if i.status == InteractionStatus::Unset {
            return Err(Error::Graph(format!(
                "interaction {},{} is unset; initialize it before flattening",
                i.anchor_id, i.child_id
            )));
        }
    }

    let root = PairTransform::scaling(scene.anchor_scale);
    // World transforms of anchor frames, built in ancestral order.
    let mut outer: BTreeMap<String, PairTransform> = BTreeMap::new();
    let mut pair: BTreeMap<String, PairTransform> = BTreeMap::new();
    for id in scene.object_ids() {
        outer.insert(id.to_string(), PairTransform::identity());
        pair.insert(id.to_string(), root);
    }
    for (anchor_id, child_id) in scene.topological_order()? {
        let p = scene.interaction(&anchor_id, &child_id)?.transform()?;
        let anchor_world = outer[&anchor_id].compose(&pair[&anchor_id]);
        outer.insert(child_id.clone(), anchor_world);
        pair.insert(child_id, p);
    }

    let mut gaussians = Vec::new();
    let mut local = Vec::new();
    let mut spans = Vec::new();
    for obj in scene.objects() {
        let o = outer[obj.id()];
        let p = pair[obj.id()];
        let world = apply_transform(obj, &o.compose(&p));
        let start = gaussians.len();
        gaussians.extend_from_slice(world.gaussians());
        local.extend_from_slice(obj.gaussians());
        spans.push(ObjectSpan {
            object_id: obj.id().to_string(),
            range: start..gaussians.len(),
            outer: o,
            pair: p,
        });
    }
    let world = ObjectField::new("composition", "", gaussians)?;
    Ok(FlatScene { world, spans, local })
}
