//! Kinematic tabletop manipulation world.
//!
//! A hand moves with Cartesian velocity commands above a table and carries at
//! most one object at a time. Grasping is kinematic: an object attaches when
//! the fingers are closed past `grasp_angle` with the tool center point within
//! `grasp_radius` of the object center, and detaches when the fingers open.
//! Free objects fall at `fall_speed` onto the highest support under their
//! footprint, which may be the table, another object, or a box.
//!
//! The default workspace has zero depth along y, which makes this a planar
//! x-z world; the y action channel is then clamped away.
//!
//! Actions are `[vx, vy, vz, fingers]` in `[-1, 1]` (clamped). Observations
//! are scaled to O(1): positions in units of 10 cm, velocities in units of the
//! hand speed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, Step};
use crate::rewards::{BoxState, HandState, ObjectState, SceneState};
use crate::tasks::{evaluate_reward_vector, Predicate, TaskSet};

const CONTACT_TOL: f64 = 1e-3;
const MAX_FINGER_ANGLE: f64 = 0.8;
const POSITION_SCALE: f64 = 0.1;
const GRASP_FORCE: f64 = 0.6;
const BRUSH_FORCE: f64 = 0.1;
const MAX_LID_ANGLE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub half_extent: [f64; 3],
    /// Center x/y used when spawning is not randomized; z always rests on the table.
    #[serde(default)]
    pub start: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerSpec {
    /// Center of the box footprint on the table (x, y).
    pub center: [f64; 2],
    pub half_extent: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabletopConfig {
    pub episode_length: usize,
    pub control_dt: f64,
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub objects: Vec<ObjectSpec>,
    /// Hand speed (m/s) at full action.
    pub hand_speed: f64,
    /// Finger angular speed (rad/s) at full action.
    pub finger_speed: f64,
    pub grasp_radius: f64,
    pub grasp_angle: f64,
    /// Distance outside an object's bounds at which the fingers still brush it.
    pub touch_margin: f64,
    pub fall_speed: f64,
    /// Hand spawn height range above the table.
    pub hand_height: [f64; 2],
    pub randomize: bool,
    pub hand_start: [f64; 3],
    /// Minimum horizontal gap between spawned bodies.
    pub spawn_gap: f64,
    pub container: Option<ContainerSpec>,
}

impl Default for TabletopConfig {
    fn default() -> Self {
        Self {
            episode_length: 200,
            control_dt: 0.05,
            workspace_min: [-0.15, 0.0, 0.0],
            workspace_max: [0.15, 0.0, 0.25],
            objects: vec![
                ObjectSpec { half_extent: [0.025, 0.025, 0.025], start: [-0.08, 0.0] },
                ObjectSpec { half_extent: [0.025, 0.025, 0.04], start: [0.08, 0.0] },
            ],
            hand_speed: 0.4,
            finger_speed: 4.0,
            grasp_radius: 0.03,
            grasp_angle: 0.4,
            touch_margin: 0.01,
            fall_speed: 0.5,
            hand_height: [0.10, 0.20],
            randomize: true,
            hand_start: [0.0, 0.0, 0.15],
            spawn_gap: 0.01,
            container: None,
        }
    }
}

impl TabletopConfig {
    fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.episode_length == 0 {
            return bad("episode length must be positive");
        }
        if self.control_dt <= 0.0 || self.hand_speed <= 0.0 || self.fall_speed <= 0.0 {
            return bad("time step and speeds must be positive");
        }
        if (0..3).any(|a| self.workspace_min[a] > self.workspace_max[a]) {
            return bad("workspace min exceeds max");
        }
        if self.objects.iter().any(|o| o.half_extent.iter().any(|h| *h <= 0.0)) {
            return bad("object extents must be positive");
        }
        if self.hand_height[0] > self.hand_height[1] {
            return bad("hand height range is inverted");
        }
        Ok(())
    }

    pub fn observation_dim(&self) -> usize {
        10 + 9 * self.objects.len() + if self.container.is_some() { 2 } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabletopStep {
    pub observation: Vec<f64>,
    pub scene: SceneState,
    pub done: bool,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
}

impl Aabb {
    fn around(center: [f64; 3], half: [f64; 3]) -> Self {
        let mut a = Aabb { min: [0.0; 3], max: [0.0; 3] };
        for k in 0..3 {
            a.min[k] = center[k] - half[k];
            a.max[k] = center[k] + half[k];
        }
        a
    }

    fn overlap_on(&self, other: &Aabb, axis: usize) -> f64 {
        self.max[axis].min(other.max[axis]) - self.min[axis].max(other.min[axis])
    }

    fn footprint_overlaps(&self, other: &Aabb) -> bool {
        self.overlap_on(other, 0) > CONTACT_TOL && self.overlap_on(other, 1) > CONTACT_TOL
    }

    fn penetrates(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.overlap_on(other, k) > CONTACT_TOL)
    }
}

#[derive(Debug, Clone)]
struct Body {
    center: [f64; 3],
    half: [f64; 3],
    velocity: [f64; 3],
}

impl Body {
    fn aabb(&self) -> Aabb {
        Aabb::around(self.center, self.half)
    }
}

#[derive(Debug, Clone)]
struct Container {
    body: Aabb,
    lid_angle: f64,
    lid_velocity: f64,
    holding_lid: bool,
}

impl Container {
    fn lid_open(&self) -> bool {
        self.lid_angle >= crate::rewards::OPEN_LID_ANGLE
    }

    fn hinge(&self) -> [f64; 3] {
        [self.body.min[0], 0.5 * (self.body.min[1] + self.body.max[1]), self.body.max[2]]
    }

    fn lid_length(&self) -> f64 {
        self.body.max[0] - self.body.min[0]
    }

    fn handle(&self) -> [f64; 3] {
        let h = self.hinge();
        let l = self.lid_length();
        [h[0] + l * self.lid_angle.cos(), h[1], h[2] + l * self.lid_angle.sin()]
    }
}

/// Kinematic tabletop environment.
#[derive(Debug, Clone)]
pub struct Tabletop {
    config: TabletopConfig,
    bodies: Vec<Body>,
    tcp: [f64; 3],
    hand_velocity: [f64; 3],
    finger_angle: f64,
    grasped: Option<(usize, [f64; 3])>,
    in_box: Vec<bool>,
    container: Option<Container>,
    t: usize,
    started: bool,
    scene: SceneState,
}

impl Tabletop {
    pub fn new(config: TabletopConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let bodies = config
            .objects
            .iter()
            .map(|o| Body { center: [0.0; 3], half: o.half_extent, velocity: [0.0; 3] })
            .collect::<Vec<_>>();
        let n = bodies.len();
        let mut env = Self {
            bodies,
            tcp: config.hand_start,
            hand_velocity: [0.0; 3],
            finger_angle: 0.0,
            grasped: None,
            in_box: vec![false; n],
            container: None,
            t: 0,
            started: false,
            scene: SceneState {
                objects: vec![],
                hand: HandState { tcp_position: [0.0; 3], finger_forces: [0.0; 3], finger_angle: 0.0 },
                container: None,
            },
            config,
        };
        env.place_fixed();
        env.scene = env.build_scene();
        Ok(env)
    }

    pub fn config(&self) -> &TabletopConfig {
        &self.config
    }

    /// Scene after the most recent reset or step.
    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn grasped(&self) -> Option<usize> {
        self.grasped.map(|(i, _)| i)
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    fn place_fixed(&mut self) {
        for (b, spec) in self.bodies.iter_mut().zip(&self.config.objects) {
            b.center = [spec.start[0], spec.start[1], spec.half_extent[2]];
            b.velocity = [0.0; 3];
        }
        self.tcp = self.config.hand_start;
        self.container = self.config.container.as_ref().map(|c| Container {
            body: Aabb::around([c.center[0], c.center[1], c.half_extent[2]], c.half_extent),
            lid_angle: 0.0,
            lid_velocity: 0.0,
            holding_lid: false,
        });
    }

    fn sample_axis(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            0.5 * (lo + hi)
        }
    }

    fn place_random(&mut self, rng: &mut ChaCha8Rng) {
        let wmin = self.config.workspace_min;
        let wmax = self.config.workspace_max;
        let gap = self.config.spawn_gap;
        let mut placed: Vec<Aabb> = self.container.iter().map(|c| c.body).collect();
        for b in self.bodies.iter_mut() {
            let mut candidate = b.center;
            for _ in 0..1000 {
                candidate = [
                    Self::sample_axis(rng, wmin[0] + b.half[0], wmax[0] - b.half[0]),
                    Self::sample_axis(rng, wmin[1] + b.half[1], wmax[1] - b.half[1]),
                    b.half[2],
                ];
                let bb = Aabb::around(candidate, b.half);
                let clear = placed.iter().all(|p| bb.max[0] + gap <= p.min[0] || p.max[0] + gap <= bb.min[0]);
                if clear {
                    break;
                }
            }
            b.center = candidate;
            placed.push(b.aabb());
        }
        let z_lo = (wmin[2] + self.config.hand_height[0]).min(wmax[2]);
        let z_hi = (wmin[2] + self.config.hand_height[1]).min(wmax[2]);
        self.tcp = [
            Self::sample_axis(rng, wmin[0], wmax[0]),
            Self::sample_axis(rng, wmin[1], wmax[1]),
            Self::sample_axis(rng, z_lo, z_hi),
        ];
    }

    /// Highest surface below `bb` among the table, the box and the other bodies.
    fn support_height(&self, index: usize, bb: &Aabb) -> f64 {
        let mut support = self.config.workspace_min[2];
        for (k, other) in self.bodies.iter().enumerate() {
            if k == index {
                continue;
            }
            let ob = other.aabb();
            if bb.footprint_overlaps(&ob) && ob.max[2] <= bb.min[2] + CONTACT_TOL {
                support = support.max(ob.max[2]);
            }
        }
        if let Some(c) = &self.container {
            if bb.footprint_overlaps(&c.body) {
                let inside = bb.min[0] >= c.body.min[0] - CONTACT_TOL
                    && bb.max[0] <= c.body.max[0] + CONTACT_TOL
                    && bb.min[1] >= c.body.min[1] - CONTACT_TOL
                    && bb.max[1] <= c.body.max[1] + CONTACT_TOL;
                if c.lid_open() && inside {
                    support = support.max(c.body.min[2]);
                } else if bb.min[2] >= c.body.max[2] - CONTACT_TOL {
                    support = support.max(c.body.max[2]);
                }
            }
        }
        support
    }

    fn blocked(&self, index: usize, bb: &Aabb) -> bool {
        let wmin = self.config.workspace_min;
        let wmax = self.config.workspace_max;
        if bb.min[0] < wmin[0] - CONTACT_TOL || bb.max[0] > wmax[0] + CONTACT_TOL {
            return true;
        }
        if bb.min[2] < wmin[2] - CONTACT_TOL {
            return true;
        }
        if self.bodies.iter().enumerate().any(|(k, o)| k != index && bb.penetrates(&o.aabb())) {
            return true;
        }
        if let Some(c) = &self.container {
            if bb.penetrates(&c.body) {
                // An open box admits bodies that sit fully inside its footprint.
                let inside = bb.min[0] >= c.body.min[0] - CONTACT_TOL && bb.max[0] <= c.body.max[0] + CONTACT_TOL;
                if !(c.lid_open() && inside) {
                    return true;
                }
            }
        }
        false
    }

    /// Moves a carried body axis by axis, stopping at obstacles.
    fn carry(&mut self, index: usize, delta: [f64; 3]) -> [f64; 3] {
        let mut moved = [0.0; 3];
        for axis in [0usize, 1, 2] {
            if delta[axis] == 0.0 {
                continue;
            }
            let mut c = self.bodies[index].center;
            c[axis] += delta[axis];
            let mut bb = Aabb::around(c, self.bodies[index].half);
            if axis == 2 && delta[2] < 0.0 {
                let support =
                    self.support_height(index, &Aabb::around(self.bodies[index].center, self.bodies[index].half));
                if bb.min[2] < support {
                    c[2] = support + self.bodies[index].half[2];
                    bb = Aabb::around(c, self.bodies[index].half);
                }
            }
            if axis == 2
                && c[2] + self.bodies[index].half[2] > self.config.workspace_max[2] + self.bodies[index].half[2]
            {
                c[2] = self.config.workspace_max[2];
                bb = Aabb::around(c, self.bodies[index].half);
            }
            if !self.blocked(index, &bb) {
                moved[axis] = c[axis] - self.bodies[index].center[axis];
                self.bodies[index].center = c;
            }
        }
        moved
    }

    fn apply_gravity(&mut self) {
        let mut order: Vec<usize> = (0..self.bodies.len()).collect();
        order.sort_by(|a, b| {
            let za = self.bodies[*a].center[2] - self.bodies[*a].half[2];
            let zb = self.bodies[*b].center[2] - self.bodies[*b].half[2];
            za.total_cmp(&zb)
        });
        let drop = self.config.fall_speed * self.config.control_dt;
        for i in order {
            if self.grasped.map(|(g, _)| g) == Some(i) {
                continue;
            }
            let bb = self.bodies[i].aabb();
            let support = self.support_height(i, &bb);
            if bb.min[2] > support {
                let new_min = (bb.min[2] - drop).max(support);
                self.bodies[i].center[2] = new_min + self.bodies[i].half[2];
            }
        }
    }

    fn update_lid(&mut self, prev_tcp: [f64; 3]) {
        let closed = self.finger_angle >= self.config.grasp_angle;
        let radius = self.config.grasp_radius;
        let carrying = self.grasped.is_some();
        let tcp = self.tcp;
        let dt = self.config.control_dt;
        if let Some(c) = self.container.as_mut() {
            let before = c.lid_angle;
            if !closed {
                c.holding_lid = false;
            } else if !c.holding_lid && !carrying && crate::rewards::euclidean(&prev_tcp, &c.handle()) <= radius {
                c.holding_lid = true;
            }
            if c.holding_lid {
                let h = c.hinge();
                let angle = (tcp[2] - h[2]).atan2(tcp[0] - h[0]);
                c.lid_angle = angle.clamp(0.0, MAX_LID_ANGLE);
            }
            c.lid_velocity = (c.lid_angle - before) / dt;
        }
    }

    fn observe(&self) -> Vec<f64> {
        let speed = self.config.hand_speed;
        let mut obs = Vec::with_capacity(self.config.observation_dim());
        obs.extend(self.tcp.iter().map(|v| v / POSITION_SCALE));
        obs.extend(self.hand_velocity.iter().map(|v| v / speed));
        obs.push(self.finger_angle / MAX_FINGER_ANGLE);
        obs.extend(self.scene.hand.finger_forces);
        for b in &self.bodies {
            obs.extend(b.center.iter().map(|v| v / POSITION_SCALE));
            obs.extend(b.velocity.iter().map(|v| v / speed));
            obs.extend((0..3).map(|k| (b.center[k] - self.tcp[k]) / POSITION_SCALE));
        }
        if let Some(c) = &self.container {
            obs.push(c.lid_angle);
            obs.push(c.lid_velocity * self.config.control_dt);
        }
        obs
    }

    fn touching(&self, index: usize) -> bool {
        let bb = self.bodies[index].aabb();
        let m = self.config.touch_margin;
        (0..3).all(|k| self.tcp[k] >= bb.min[k] - m && self.tcp[k] <= bb.max[k] + m)
    }

    fn build_scene(&self) -> SceneState {
        let n = self.bodies.len();
        let grasped = self.grasped.map(|(g, _)| g);
        let aabbs: Vec<Aabb> = self.bodies.iter().map(Body::aabb).collect();
        let table = self.config.workspace_min[2];
        let mut objects = Vec::with_capacity(n);
        let mut any_touch = false;
        for i in 0..n {
            let a = &aabbs[i];
            let mut contacts = Vec::new();
            for (k, b) in aabbs.iter().enumerate() {
                if k == i {
                    continue;
                }
                let stacked = a.footprint_overlaps(b)
                    && ((a.min[2] - b.max[2]).abs() <= CONTACT_TOL || (b.min[2] - a.max[2]).abs() <= CONTACT_TOL);
                let side = a.overlap_on(b, 2) > CONTACT_TOL
                    && a.overlap_on(b, 1) > CONTACT_TOL
                    && ((a.min[0] - b.max[0]).abs() <= CONTACT_TOL || (b.min[0] - a.max[0]).abs() <= CONTACT_TOL);
                if stacked || side {
                    contacts.push(k);
                }
            }
            let touching = self.touching(i);
            any_touch |= touching;
            objects.push(ObjectState {
                center: self.bodies[i].center,
                extent_min: a.min,
                extent_max: a.max,
                velocity: self.bodies[i].velocity,
                in_contact_ground: a.min[2] <= table + CONTACT_TOL,
                in_contact_robot: grasped == Some(i) || touching,
                in_contact: contacts,
                in_box: self.in_box[i],
            });
        }
        let finger_forces = if grasped.is_some() {
            [GRASP_FORCE; 3]
        } else if any_touch {
            [BRUSH_FORCE; 3]
        } else {
            [0.0; 3]
        };
        SceneState {
            objects,
            hand: HandState { tcp_position: self.tcp, finger_forces, finger_angle: self.finger_angle },
            container: self.container.as_ref().map(|c| {
                let center = [
                    0.5 * (c.body.min[0] + c.body.max[0]),
                    0.5 * (c.body.min[1] + c.body.max[1]),
                    0.5 * (c.body.min[2] + c.body.max[2]),
                ];
                let mut body = ObjectState::resting(center, [0.0; 3]);
                body.extent_min = c.body.min;
                body.extent_max = c.body.max;
                BoxState { body, lid_angle: c.lid_angle }
            }),
        }
    }

    fn update_in_box(&mut self) {
        for (i, b) in self.bodies.iter().enumerate() {
            self.in_box[i] = match &self.container {
                Some(c) => {
                    let bb = b.aabb();
                    bb.min[0] >= c.body.min[0] - CONTACT_TOL
                        && bb.max[0] <= c.body.max[0] + CONTACT_TOL
                        && bb.min[2] < c.body.max[2]
                }
                None => false,
            };
        }
    }

    /// Resets to a fresh episode; deterministic given `seed`.
    pub fn reset_scene(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.place_fixed();
        if self.config.randomize {
            self.place_random(&mut rng);
        }
        self.hand_velocity = [0.0; 3];
        self.finger_angle = 0.0;
        self.grasped = None;
        self.t = 0;
        self.started = true;
        self.update_in_box();
        self.scene = self.build_scene();
        self.observe()
    }

    /// Advances the world by one control step.
    pub fn step_scene(&mut self, action: &[f64]) -> Result<TabletopStep, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.t >= self.config.episode_length {
            return Err(EnvError::EpisodeDone);
        }
        if action.len() != 4 {
            return Err(EnvError::ActionDimension { expected: 4, got: action.len() });
        }
        let a: Vec<f64> = action.iter().map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 }).collect();
        let dt = self.config.control_dt;
        let before: Vec<[f64; 3]> = self.bodies.iter().map(|b| b.center).collect();
        let prev_tcp = self.tcp;

        self.finger_angle = (self.finger_angle + a[3] * self.config.finger_speed * dt).clamp(0.0, MAX_FINGER_ANGLE);
        let closed = self.finger_angle >= self.config.grasp_angle;
        if !closed {
            self.grasped = None;
        } else if self.grasped.is_none() && !self.container.as_ref().is_some_and(|c| c.holding_lid) {
            let nearest = self
                .bodies
                .iter()
                .enumerate()
                .map(|(i, b)| (i, crate::rewards::euclidean(&b.center, &self.tcp)))
                .filter(|(_, d)| *d <= self.config.grasp_radius)
                .min_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((i, _)) = nearest {
                let c = self.bodies[i].center;
                self.grasped = Some((i, [c[0] - self.tcp[0], c[1] - self.tcp[1], c[2] - self.tcp[2]]));
            }
        }

        let wmin = self.config.workspace_min;
        let wmax = self.config.workspace_max;
        let mut target = self.tcp;
        for k in 0..3 {
            target[k] = (self.tcp[k] + a[k] * self.config.hand_speed * dt).clamp(wmin[k], wmax[k]);
        }
        let delta = [target[0] - self.tcp[0], target[1] - self.tcp[1], target[2] - self.tcp[2]];
        match self.grasped {
            Some((i, offset)) => {
                let moved = self.carry(i, delta);
                let c = self.bodies[i].center;
                self.tcp = [c[0] - offset[0], c[1] - offset[1], c[2] - offset[2]];
                debug_assert!(moved.iter().all(|m| m.is_finite()));
            }
            None => self.tcp = target,
        }
        self.update_lid(prev_tcp);
        self.apply_gravity();
        self.update_in_box();

        for (b, old) in self.bodies.iter_mut().zip(&before) {
            for k in 0..3 {
                b.velocity[k] = (b.center[k] - old[k]) / dt;
            }
        }
        for k in 0..3 {
            self.hand_velocity[k] = (self.tcp[k] - prev_tcp[k]) / dt;
        }
        self.t += 1;
        self.scene = self.build_scene();
        Ok(TabletopStep {
            observation: self.observe(),
            scene: self.scene.clone(),
            done: self.t == self.config.episode_length,
        })
    }
}

impl Environment for Tabletop {
    fn observation_dim(&self) -> usize {
        self.config.observation_dim()
    }

    fn action_dim(&self) -> usize {
        4
    }

    fn episode_length(&self) -> usize {
        self.config.episode_length
    }

    fn supports(&self, predicate: &Predicate) -> bool {
        if !predicate.needs_scene() {
            return false;
        }
        if predicate.needs_box() && self.config.container.is_none() {
            return false;
        }
        predicate.max_object().is_none_or(|i| i < self.bodies.len())
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.reset_scene(seed)
    }

    fn step(&mut self, action: &[f64], tasks: &TaskSet) -> Result<Step, EnvError> {
        let s = self.step_scene(action)?;
        let rewards = evaluate_reward_vector(&s.scene, action, tasks)?;
        Ok(Step { observation: s.observation, rewards, done: s.done })
    }
}
