//! Task identities, predicate definitions and task sets.
//!
//! A [`TaskSet`] lists auxiliary tasks first and external (main) tasks after
//! them; task indices are dense in that order, which is also the layout of
//! every reward vector.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::{self, Entity, Relation, RewardError, SceneState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Auxiliary,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId {
    pub index: usize,
    pub kind: TaskKind,
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.index)
    }
}

/// Per-step reward of every task in a [`TaskSet`], in task-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector(pub Vec<f64>);

impl RewardVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A reward function, named the way experiment configs spell it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    Touch,
    NoTouch,
    Move(usize),
    Close(Entity, Entity),
    Relation(Relation, Entity, Entity),
    RelationClose(Relation, Entity, Entity),
    AboveCloseBox(usize),
    Stack(usize),
    InBox(usize),
    InBoxAll,
    OpenBox,
    Opened,
    Closed,
    Lifted(usize),
    ShapedClose {
        from: Entity,
        to: Entity,
        epsilon: f64,
    },
    /// Epsilon-region reward on the hand position.
    HandNear {
        site: [f64; 3],
        epsilon: f64,
    },
    /// Chain-MDP fixture: 1 when the chain sits in the given state.
    ChainAt(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("unknown task predicate `{0}`")]
    UnknownPredicate(String),
    #[error("malformed task `{name}`: {reason}")]
    Malformed { name: String, reason: String },
    #[error("task set has no external task")]
    NoExternalTask,
    #[error("task `{0}` is not supported by this environment")]
    Unsupported(String),
    #[error("no task named `{0}`")]
    NoSuchTask(String),
}

fn entity_name(e: Entity) -> String {
    match e {
        Entity::Object(i) => (i + 1).to_string(),
        Entity::Hand => "hand".into(),
        Entity::Box => "box".into(),
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Touch => write!(f, "TOUCH"),
            Predicate::NoTouch => write!(f, "NOTOUCH"),
            Predicate::Move(i) => write!(f, "MOVE({})", i + 1),
            Predicate::Close(a, b) => write!(f, "CLOSE({},{})", entity_name(*a), entity_name(*b)),
            Predicate::Relation(r, a, b) => {
                write!(f, "{}({},{})", r.name(), entity_name(*a), entity_name(*b))
            }
            Predicate::RelationClose(r, a, b) => {
                write!(f, "{}CLOSE({},{})", r.name(), entity_name(*a), entity_name(*b))
            }
            Predicate::AboveCloseBox(i) => write!(f, "ABOVECLOSEBOX({})", i + 1),
            Predicate::Stack(i) => write!(f, "STACK({})", i + 1),
            Predicate::InBox(i) => write!(f, "INBOX({})", i + 1),
            Predicate::InBoxAll => write!(f, "INBOXALL"),
            Predicate::OpenBox => write!(f, "OPENBOX"),
            Predicate::Opened => write!(f, "OPENED"),
            Predicate::Closed => write!(f, "CLOSED"),
            Predicate::Lifted(i) => write!(f, "LIFTED({})", i + 1),
            Predicate::ShapedClose { from, to, epsilon } => {
                write!(f, "CLOSE_X({},{},{})", entity_name(*from), entity_name(*to), epsilon)
            }
            Predicate::HandNear { site, epsilon } => {
                write!(f, "HAND_NEAR({},{},{},{})", site[0], site[1], site[2], epsilon)
            }
            Predicate::ChainAt(k) => write!(f, "CHAIN_AT({k})"),
        }
    }
}

fn parse_entity(token: &str, name: &str) -> Result<Entity, TaskError> {
    let t = token.trim().to_ascii_lowercase();
    match t.as_str() {
        "hand" => Ok(Entity::Hand),
        "box" => Ok(Entity::Box),
        _ => parse_object(token, name).map(Entity::Object),
    }
}

/// Objects are numbered from 1 in task names.
fn parse_object(token: &str, name: &str) -> Result<usize, TaskError> {
    let n: usize = token.trim().parse().map_err(|_| TaskError::Malformed {
        name: name.to_string(),
        reason: format!("`{token}` is not an object number"),
    })?;
    if n == 0 {
        return Err(TaskError::Malformed { name: name.to_string(), reason: "objects are numbered from 1".into() });
    }
    Ok(n - 1)
}

fn parse_real(token: &str, name: &str) -> Result<f64, TaskError> {
    token
        .trim()
        .parse()
        .map_err(|_| TaskError::Malformed { name: name.to_string(), reason: format!("`{token}` is not a number") })
}

impl FromStr for Predicate {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (head, args): (String, Vec<&str>) = match s.find('(') {
            Some(open) => {
                let Some(inner) = s[open + 1..].strip_suffix(')') else {
                    return Err(TaskError::Malformed { name: s.into(), reason: "missing `)`".into() });
                };
                let args = if inner.trim().is_empty() { vec![] } else { inner.split(',').collect() };
                (s[..open].to_string(), args)
            }
            None => (s.to_string(), vec![]),
        };
        let head: String = head.chars().filter(|c| *c != '_').collect::<String>().to_ascii_uppercase();
        let arity = |n: usize| -> Result<(), TaskError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(TaskError::Malformed {
                    name: s.into(),
                    reason: format!("expected {n} arguments, got {}", args.len()),
                })
            }
        };
        let relation = |r: Relation| -> Result<Predicate, TaskError> {
            arity(2)?;
            Ok(Predicate::Relation(r, parse_entity(args[0], s)?, parse_entity(args[1], s)?))
        };
        let relation_close = |r: Relation| -> Result<Predicate, TaskError> {
            arity(2)?;
            Ok(Predicate::RelationClose(r, parse_entity(args[0], s)?, parse_entity(args[1], s)?))
        };
        match head.as_str() {
            "TOUCH" => arity(0).map(|_| Predicate::Touch),
            "NOTOUCH" => arity(0).map(|_| Predicate::NoTouch),
            "MOVE" => {
                arity(1)?;
                Ok(Predicate::Move(parse_object(args[0], s)?))
            }
            "CLOSE" => {
                arity(2)?;
                Ok(Predicate::Close(parse_entity(args[0], s)?, parse_entity(args[1], s)?))
            }
            "ABOVE" => relation(Relation::Above),
            "BELOW" => relation(Relation::Below),
            "LEFT" => relation(Relation::Left),
            "RIGHT" => relation(Relation::Right),
            "ABOVECLOSE" => relation_close(Relation::Above),
            "BELOWCLOSE" => relation_close(Relation::Below),
            "LEFTCLOSE" => relation_close(Relation::Left),
            "RIGHTCLOSE" => relation_close(Relation::Right),
            "ABOVECLOSEBOX" => {
                arity(1)?;
                Ok(Predicate::AboveCloseBox(parse_object(args[0], s)?))
            }
            "STACK" => {
                arity(1)?;
                Ok(Predicate::Stack(parse_object(args[0], s)?))
            }
            "INBOX" => {
                arity(1)?;
                Ok(Predicate::InBox(parse_object(args[0], s)?))
            }
            "INBOXALL" => arity(0).map(|_| Predicate::InBoxAll),
            "OPENBOX" => arity(0).map(|_| Predicate::OpenBox),
            "OPENED" => arity(0).map(|_| Predicate::Opened),
            "CLOSED" => arity(0).map(|_| Predicate::Closed),
            "LIFTED" => {
                arity(1)?;
                Ok(Predicate::Lifted(parse_object(args[0], s)?))
            }
            "CLOSEX" => {
                arity(3)?;
                Ok(Predicate::ShapedClose {
                    from: parse_entity(args[0], s)?,
                    to: parse_entity(args[1], s)?,
                    epsilon: parse_real(args[2], s)?,
                })
            }
            "HANDNEAR" => {
                arity(4)?;
                Ok(Predicate::HandNear {
                    site: [parse_real(args[0], s)?, parse_real(args[1], s)?, parse_real(args[2], s)?],
                    epsilon: parse_real(args[3], s)?,
                })
            }
            "CHAINAT" => {
                arity(1)?;
                let k = args[0].trim().parse().map_err(|_| TaskError::Malformed {
                    name: s.into(),
                    reason: "chain state must be an integer".into(),
                })?;
                Ok(Predicate::ChainAt(k))
            }
            _ => Err(TaskError::UnknownPredicate(s.to_string())),
        }
    }
}

impl Predicate {
    /// Whether this predicate reads the tabletop scene (as opposed to a fixture).
    pub fn needs_scene(&self) -> bool {
        !matches!(self, Predicate::ChainAt(_))
    }

    /// Whether evaluation needs a box in the scene.
    pub fn needs_box(&self) -> bool {
        match self {
            Predicate::AboveCloseBox(_) | Predicate::InBox(_) | Predicate::InBoxAll | Predicate::OpenBox => true,
            Predicate::Close(a, b) | Predicate::Relation(_, a, b) | Predicate::RelationClose(_, a, b) => {
                *a == Entity::Box || *b == Entity::Box
            }
            Predicate::ShapedClose { from, to, .. } => *from == Entity::Box || *to == Entity::Box,
            _ => false,
        }
    }

    /// Largest zero-based object index referenced, if any.
    pub fn max_object(&self) -> Option<usize> {
        let ent = |e: &Entity| match e {
            Entity::Object(i) => Some(*i),
            _ => None,
        };
        match self {
            Predicate::Move(i)
            | Predicate::AboveCloseBox(i)
            | Predicate::Stack(i)
            | Predicate::InBox(i)
            | Predicate::Lifted(i) => Some(*i),
            Predicate::Close(a, b) | Predicate::Relation(_, a, b) | Predicate::RelationClose(_, a, b) => {
                ent(a).max(ent(b))
            }
            Predicate::ShapedClose { from, to, .. } => ent(from).max(ent(to)),
            _ => None,
        }
    }

    /// Evaluates the predicate on a scene.
    pub fn evaluate(&self, scene: &SceneState) -> Result<f64, RewardError> {
        use rewards::*;
        Ok(match self {
            Predicate::Touch => touch_reward(&scene.hand.finger_forces),
            Predicate::NoTouch => notouch_reward(&scene.hand.finger_forces),
            Predicate::Move(i) => move_reward(&scene.object(*i)?.velocity),
            Predicate::Close(a, b) => close_reward(&scene.bounds(*a)?, &scene.bounds(*b)?),
            Predicate::Relation(r, a, b) => r.eval(&scene.bounds(*a)?, &scene.bounds(*b)?),
            Predicate::RelationClose(r, a, b) => combined_relation_reward(&scene.bounds(*a)?, &scene.bounds(*b)?, *r),
            Predicate::AboveCloseBox(i) => combined_relation_reward(
                &scene.bounds(Entity::Object(*i))?,
                &scene.bounds(Entity::Box)?,
                Relation::Above,
            ),
            Predicate::Stack(i) => stack_reward(scene.object(*i)?),
            Predicate::InBox(i) => {
                let b = box_rewards(scene)?;
                *b.inbox.get(*i).ok_or(RewardError::NoSuchObject { index: *i, count: b.inbox.len() })?
            }
            Predicate::InBoxAll => box_rewards(scene)?.inbox_all,
            Predicate::OpenBox => box_rewards(scene)?.openbox,
            Predicate::Opened => opened_reward(scene.hand.finger_angle),
            Predicate::Closed => closed_reward(scene.hand.finger_angle),
            Predicate::Lifted(i) => lifted_reward(scene.object(*i)?.extent_min[2]),
            Predicate::ShapedClose { from, to, epsilon } => {
                let d = euclidean(&scene.bounds(*from)?.center, &scene.bounds(*to)?.center);
                shaped_close_reward(d, *epsilon)
            }
            Predicate::HandNear { site, epsilon } => {
                sparse_goal_reward(&scene.hand.tcp_position, site, *epsilon, euclidean)?
            }
            Predicate::ChainAt(_) => {
                return Err(RewardError::PredicateUnavailable(self.to_string()));
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDef {
    pub id: TaskId,
    pub name: String,
    pub predicate: Predicate,
}

/// Auxiliary tasks followed by external tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    tasks: Vec<TaskDef>,
    n_auxiliary: usize,
}

impl TaskSet {
    pub fn new(auxiliary: Vec<Predicate>, external: Vec<Predicate>) -> Result<Self, TaskError> {
        if external.is_empty() {
            return Err(TaskError::NoExternalTask);
        }
        let n_auxiliary = auxiliary.len();
        let tasks = auxiliary
            .into_iter()
            .map(|p| (TaskKind::Auxiliary, p))
            .chain(external.into_iter().map(|p| (TaskKind::External, p)))
            .enumerate()
            .map(|(index, (kind, predicate))| TaskDef {
                id: TaskId { index, kind },
                name: predicate.to_string(),
                predicate,
            })
            .collect();
        Ok(Self { tasks, n_auxiliary })
    }

    /// Builds a task set from predicate names such as `ABOVE(1,2)` or `STACK(1)`.
    pub fn parse<S: AsRef<str>>(auxiliary: &[S], external: &[S]) -> Result<Self, TaskError> {
        let parse_all =
            |names: &[S]| -> Result<Vec<Predicate>, TaskError> { names.iter().map(|n| n.as_ref().parse()).collect() };
        Self::new(parse_all(auxiliary)?, parse_all(external)?)
    }

    /// The 13 general auxiliary tasks over two objects plus `STACK(1)`.
    pub fn stack_two_blocks() -> Self {
        Self::parse(&standard_auxiliary_names(), &["STACK(1)".to_string()]).expect("static task names")
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[TaskDef] {
        &self.tasks
    }

    pub fn get(&self, index: usize) -> Option<&TaskDef> {
        self.tasks.get(index)
    }

    pub fn ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.iter().map(|t| t.id)
    }

    pub fn auxiliary(&self) -> &[TaskDef] {
        &self.tasks[..self.n_auxiliary]
    }

    pub fn external(&self) -> &[TaskDef] {
        &self.tasks[self.n_auxiliary..]
    }

    pub fn find(&self, name: &str) -> Result<TaskId, TaskError> {
        let wanted: Predicate = name.parse()?;
        self.tasks
            .iter()
            .find(|t| t.predicate == wanted)
            .map(|t| t.id)
            .ok_or_else(|| TaskError::NoSuchTask(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }
}

/// TOUCH, NOTOUCH, MOVE, CLOSE and the eight relational tasks over objects 1 and 2.
pub fn standard_auxiliary_names() -> Vec<String> {
    [
        "TOUCH",
        "NOTOUCH",
        "MOVE(1)",
        "MOVE(2)",
        "CLOSE(1,2)",
        "ABOVE(1,2)",
        "BELOW(1,2)",
        "LEFT(1,2)",
        "RIGHT(1,2)",
        "ABOVECLOSE(1,2)",
        "BELOWCLOSE(1,2)",
        "LEFTCLOSE(1,2)",
        "RIGHTCLOSE(1,2)",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Evaluates every task of `task_set` on one scene.
///
/// Rewards are a function of the scene reached after the action; the action
/// is accepted for interface symmetry with `r(s, a)` and is currently unused by
/// every predicate.
pub fn evaluate_reward_vector(
    scene: &SceneState,
    _action: &[f64],
    task_set: &TaskSet,
) -> Result<RewardVector, RewardError> {
    task_set.tasks().iter().map(|t| t.predicate.evaluate(scene)).collect::<Result<Vec<_>, _>>().map(RewardVector)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in standard_auxiliary_names().into_iter().chain(
            ["STACK(1)", "INBOX(2)", "INBOXALL", "OPENBOX", "ABOVECLOSEBOX(1)", "LIFTED(1)", "CHAIN_AT(4)"]
                .map(String::from),
        ) {
            let p: Predicate = name.parse().unwrap();
            assert_eq!(p.to_string(), name);
        }
        let p: Predicate = "CLOSE_X(hand,1,0.02)".parse().unwrap();
        assert_eq!(p, Predicate::ShapedClose { from: Entity::Hand, to: Entity::Object(0), epsilon: 0.02 });
        assert_eq!("above_close(1,2)".parse::<Predicate>().unwrap(), "ABOVECLOSE(1,2)".parse().unwrap());
    }

    #[test]
    fn unknown_and_malformed_names() {
        assert!(matches!("SPIN(1)".parse::<Predicate>(), Err(TaskError::UnknownPredicate(_))));
        assert!(matches!("ABOVE(1)".parse::<Predicate>(), Err(TaskError::Malformed { .. })));
        assert!(matches!("STACK(0)".parse::<Predicate>(), Err(TaskError::Malformed { .. })));
        assert!(matches!("STACK(1".parse::<Predicate>(), Err(TaskError::Malformed { .. })));
    }

    #[test]
    fn ids_are_dense_and_ordered() {
        let set = TaskSet::stack_two_blocks();
        assert_eq!(set.len(), 14);
        assert_eq!(set.auxiliary().len(), 13);
        for (i, t) in set.tasks().iter().enumerate() {
            assert_eq!(t.id.index, i);
            let expect = if i < 13 { TaskKind::Auxiliary } else { TaskKind::External };
            assert_eq!(t.id.kind, expect);
        }
        assert_eq!(set.find("STACK(1)").unwrap().index, 13);
        assert!(TaskSet::parse::<&str>(&["TOUCH"], &[]).is_err());
    }
}
