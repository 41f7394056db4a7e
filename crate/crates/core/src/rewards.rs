//! Sparse reward predicates over a manipulation scene.
//!
//! Every function here is pure. Distances are in meters, forces in newtons
//! and angles in radians. Thresholds are inclusive exactly as the reward
//! definitions are written (`<=` / `>=`), so ties land inside the rewarded
//! region.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Radius of the CLOSE relation between two object centers.
pub const CLOSE_DISTANCE: f64 = 0.10;
/// Minimum object speed for MOVE to fire (3 mm/s).
pub const MOVE_MIN_SPEED: f64 = 0.003;
/// Total finger force above which TOUCH saturates.
pub const TOUCH_SATURATION: f64 = 1.0;
/// TOUCH value at or below which NOTOUCH fires.
pub const NOTOUCH_LIMIT: f64 = 0.1;
/// Lid angle at which the box counts as open.
pub const OPEN_LID_ANGLE: f64 = 1.5;
/// Finger angle at or below which the hand counts as opened.
pub const OPENED_FINGER_ANGLE: f64 = 0.1;
/// Finger angle at or above which the hand counts as closed.
pub const CLOSED_FINGER_ANGLE: f64 = 0.7;
/// Height above which an object counts as lifted (7.5 cm).
pub const LIFTED_HEIGHT: f64 = 0.075;
/// Height below which LIFTED gives nothing (0.5 cm).
pub const LIFTED_FLOOR: f64 = 0.005;
/// Length scale of the shaped CLOSE decay (10 cm).
pub const SHAPED_CLOSE_SCALE: f64 = 0.10;
/// Reward given inside the bonus region of the shaped real-robot rewards.
pub const SHAPED_BONUS: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("dimension mismatch: state projection has {state} entries, goal has {goal}")]
    DimensionMismatch { state: usize, goal: usize },
    #[error("predicate {0} is unavailable in this scene")]
    PredicateUnavailable(String),
    #[error("object index {index} out of range for a scene with {count} objects")]
    NoSuchObject { index: usize, count: usize },
}

/// Axis-aligned bounds and kinematics of one body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub center: [f64; 3],
    pub extent_min: [f64; 3],
    pub extent_max: [f64; 3],
    pub velocity: [f64; 3],
    pub in_contact_ground: bool,
    pub in_contact_robot: bool,
    /// Indices of other objects this one touches.
    pub in_contact: Vec<usize>,
    pub in_box: bool,
}

impl ObjectState {
    /// A resting box-shaped body centered at `center` with the given half extents.
    pub fn resting(center: [f64; 3], half_extent: [f64; 3]) -> Self {
        let mut extent_min = [0.0; 3];
        let mut extent_max = [0.0; 3];
        for a in 0..3 {
            extent_min[a] = center[a] - half_extent[a];
            extent_max[a] = center[a] + half_extent[a];
        }
        Self {
            center,
            extent_min,
            extent_max,
            velocity: [0.0; 3],
            in_contact_ground: false,
            in_contact_robot: false,
            in_contact: Vec::new(),
            in_box: false,
        }
    }

    pub fn speed(&self) -> f64 {
        norm(&self.velocity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandState {
    pub tcp_position: [f64; 3],
    pub finger_forces: [f64; 3],
    pub finger_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub body: ObjectState,
    pub lid_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: Vec<ObjectState>,
    pub hand: HandState,
    #[serde(default)]
    pub container: Option<BoxState>,
}

/// A body a relational predicate can refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Entity {
    Object(usize),
    Hand,
    Box,
}

/// Geometry used by relational predicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub center: [f64; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<&ObjectState> for Bounds {
    fn from(o: &ObjectState) -> Self {
        Bounds { center: o.center, min: o.extent_min, max: o.extent_max }
    }
}

impl SceneState {
    pub fn object(&self, index: usize) -> Result<&ObjectState, RewardError> {
        self.objects.get(index).ok_or(RewardError::NoSuchObject { index, count: self.objects.len() })
    }

    pub fn bounds(&self, entity: Entity) -> Result<Bounds, RewardError> {
        match entity {
            Entity::Object(i) => self.object(i).map(Bounds::from),
            Entity::Hand => {
                let p = self.hand.tcp_position;
                Ok(Bounds { center: p, min: p, max: p })
            }
            Entity::Box => self
                .container
                .as_ref()
                .map(|b| Bounds::from(&b.body))
                .ok_or_else(|| RewardError::PredicateUnavailable("box".into())),
        }
    }

    fn container(&self, what: &str) -> Result<&BoxState, RewardError> {
        self.container.as_ref().ok_or_else(|| RewardError::PredicateUnavailable(what.to_string()))
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn indicator(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

/// Generic epsilon-region reward: 1 inside the closed ball around `goal`.
pub fn sparse_goal_reward<M>(state: &[f64], goal: &[f64], epsilon: f64, metric: M) -> Result<f64, RewardError>
where
    M: Fn(&[f64], &[f64]) -> f64,
{
    if state.len() != goal.len() {
        return Err(RewardError::DimensionMismatch { state: state.len(), goal: goal.len() });
    }
    Ok(indicator(metric(state, goal) <= epsilon))
}

pub fn close_within(a: &Bounds, b: &Bounds, threshold: f64) -> f64 {
    indicator(euclidean(&a.center, &b.center) <= threshold)
}

pub fn close_reward(a: &Bounds, b: &Bounds) -> f64 {
    close_within(a, b, CLOSE_DISTANCE)
}

/// 1 iff every point of `i` lies above every point of `j` along z.
pub fn above_reward(i: &Bounds, j: &Bounds) -> f64 {
    indicator(j.max[2] - i.min[2] <= 0.0)
}

pub fn below_reward(i: &Bounds, j: &Bounds) -> f64 {
    above_reward(j, i)
}

/// 1 iff every point of `i` has larger x than every point of `j`.
pub fn left_reward(i: &Bounds, j: &Bounds) -> f64 {
    indicator(j.max[0] - i.min[0] <= 0.0)
}

pub fn right_reward(i: &Bounds, j: &Bounds) -> f64 {
    left_reward(j, i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Above,
    Below,
    Left,
    Right,
}

impl Relation {
    pub fn eval(self, i: &Bounds, j: &Bounds) -> f64 {
        match self {
            Relation::Above => above_reward(i, j),
            Relation::Below => below_reward(i, j),
            Relation::Left => left_reward(i, j),
            Relation::Right => right_reward(i, j),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Above => "ABOVE",
            Relation::Below => "BELOW",
            Relation::Left => "LEFT",
            Relation::Right => "RIGHT",
        }
    }
}

pub fn combined_relation_reward(i: &Bounds, j: &Bounds, relation: Relation) -> f64 {
    relation.eval(i, j) * close_reward(i, j)
}

/// The object's speed once it reaches 3 mm/s, otherwise 0.
pub fn move_reward(velocity: &[f64; 3]) -> f64 {
    let speed = norm(velocity);
    if speed >= MOVE_MIN_SPEED {
        speed
    } else {
        0.0
    }
}

pub fn touch_reward(finger_forces: &[f64; 3]) -> f64 {
    let total: f64 = finger_forces.iter().sum();
    if total <= TOUCH_SATURATION {
        total
    } else {
        1.0
    }
}

pub fn notouch_reward(finger_forces: &[f64; 3]) -> f64 {
    indicator(touch_reward(finger_forces) <= NOTOUCH_LIMIT)
}

/// 1 iff the object touches some other object but neither the ground nor the robot.
pub fn stack_reward(object: &ObjectState) -> f64 {
    indicator(!object.in_contact_ground && !object.in_contact_robot && !object.in_contact.is_empty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxRewards {
    pub inbox: Vec<f64>,
    pub inbox_all: f64,
    pub openbox: f64,
}

pub fn box_rewards(scene: &SceneState) -> Result<BoxRewards, RewardError> {
    let container = scene.container("box rewards")?;
    let inbox: Vec<f64> = scene.objects.iter().map(|o| indicator(o.in_box)).collect();
    let inbox_all = indicator(!scene.objects.is_empty() && scene.objects.iter().all(|o| o.in_box));
    Ok(BoxRewards { inbox, inbox_all, openbox: indicator(container.lid_angle >= OPEN_LID_ANGLE) })
}

pub fn opened_reward(finger_angle: f64) -> f64 {
    indicator(finger_angle <= OPENED_FINGER_ANGLE)
}

pub fn closed_reward(finger_angle: f64) -> f64 {
    indicator(finger_angle >= CLOSED_FINGER_ANGLE)
}

/// Lift shaping. The linear branch is `min_z[cm] / 7.5`, evaluated in meters
/// as `min_z / 0.075` so that e.g. 3.75 cm gives exactly 0.5.
pub fn lifted_reward(min_z: f64) -> f64 {
    if min_z > LIFTED_HEIGHT {
        SHAPED_BONUS
    } else if min_z < LIFTED_FLOOR {
        0.0
    } else {
        min_z / LIFTED_HEIGHT
    }
}

/// Shaped closeness: 1.5 strictly inside `epsilon`, else `1 - tanh^2(d / 10cm)`.
pub fn shaped_close_reward(distance: f64, epsilon: f64) -> f64 {
    if distance < epsilon {
        SHAPED_BONUS
    } else {
        let t = (distance / SHAPED_CLOSE_SCALE).tanh();
        1.0 - t * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(center: [f64; 3]) -> Bounds {
        Bounds::from(&ObjectState::resting(center, [0.025, 0.025, 0.025]))
    }

    #[test]
    fn sparse_goal_boundaries() {
        let d = |a: &[f64], _: &[f64]| a[0];
        assert_eq!(sparse_goal_reward(&[0.0], &[0.0], 0.05, d).unwrap(), 1.0);
        assert_eq!(sparse_goal_reward(&[0.05], &[0.0], 0.05, d).unwrap(), 1.0);
        assert_eq!(sparse_goal_reward(&[0.0501], &[0.0], 0.05, d).unwrap(), 0.0);
        assert_eq!(
            sparse_goal_reward(&[0.0, 1.0], &[0.0], 0.05, euclidean),
            Err(RewardError::DimensionMismatch { state: 2, goal: 1 })
        );
    }

    #[test]
    fn close_threshold_is_inclusive() {
        let a = block([0.0, 0.0, 0.025]);
        assert_eq!(close_reward(&a, &block([0.05, 0.0, 0.025])), 1.0);
        assert_eq!(close_reward(&a, &block([0.10, 0.0, 0.025])), 1.0);
        assert_eq!(close_reward(&a, &block([0.25, 0.0, 0.025])), 0.0);
    }

    #[test]
    fn above_needs_strict_separation() {
        let mut i = block([0.0, 0.0, 0.125]);
        i.min[2] = 0.10;
        let mut j = block([0.0, 0.0, 0.025]);
        j.max[2] = 0.05;
        assert_eq!(above_reward(&i, &j), 1.0);
        i.min[2] = 0.04;
        assert_eq!(above_reward(&i, &j), 0.0);
        assert_eq!(above_reward(&j, &j), 0.0);
    }

    #[test]
    fn move_and_touch_thresholds() {
        assert_eq!(move_reward(&[0.002, 0.0, 0.0]), 0.0);
        assert_eq!(move_reward(&[0.010, 0.0, 0.0]), 0.010);
        assert_eq!(move_reward(&[0.0; 3]), 0.0);
        assert_eq!(touch_reward(&[0.5, 0.0, 0.0]), 0.5);
        assert_eq!(notouch_reward(&[0.5, 0.0, 0.0]), 0.0);
        assert_eq!(touch_reward(&[1.0, 0.5, 0.5]), 1.0);
        assert_eq!(touch_reward(&[0.05, 0.0, 0.0]), 0.05);
        assert_eq!(notouch_reward(&[0.05, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn real_robot_shaping() {
        assert_eq!(opened_reward(0.05), 1.0);
        assert_eq!(closed_reward(0.05), 0.0);
        assert_eq!(lifted_reward(0.0375), 0.5);
        assert_eq!(lifted_reward(0.004), 0.0);
        assert_eq!(lifted_reward(0.08), 1.5);
        assert_eq!(shaped_close_reward(0.0, 0.015), 1.5);
        let far = shaped_close_reward(0.05, 0.015);
        assert!((far - (1.0 - 0.5f64.tanh().powi(2))).abs() < 1e-15);
    }

    #[test]
    fn box_rewards_need_a_box() {
        let scene = SceneState {
            objects: vec![],
            hand: HandState { tcp_position: [0.0; 3], finger_forces: [0.0; 3], finger_angle: 0.0 },
            container: None,
        };
        assert!(matches!(box_rewards(&scene), Err(RewardError::PredicateUnavailable(_))));
    }
}
