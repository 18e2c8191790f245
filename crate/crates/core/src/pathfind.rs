//! Low-level policy: expands a chosen `(object, primitive)` pair into a
//! concrete collision-free waypoint path.
//!
//! Five primitives exist: four directional sweeps that push the object one
//! cell at a time until the next placement would collide or leave the grid,
//! and an A* route from the object's current pose to its own target. All of
//! them are pure functions of `(scenario, state)`.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::gridworld::{Pose, Scenario, WorldState};

/// The five path primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PrimitiveKind {
    Up,
    Down,
    Left,
    Right,
    Astar,
}

impl PrimitiveKind {
    /// All kinds in canonical (action-index) order.
    pub const ALL: [PrimitiveKind; 5] = [
        PrimitiveKind::Up,
        PrimitiveKind::Down,
        PrimitiveKind::Left,
        PrimitiveKind::Right,
        PrimitiveKind::Astar,
    ];

    pub fn index(self) -> usize {
        match self {
            PrimitiveKind::Up => 0,
            PrimitiveKind::Down => 1,
            PrimitiveKind::Left => 2,
            PrimitiveKind::Right => 3,
            PrimitiveKind::Astar => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<PrimitiveKind> {
        PrimitiveKind::ALL.get(i).copied()
    }

    /// Cell delta for directional kinds; `None` for astar.
    pub fn delta(self) -> Option<(i32, i32)> {
        match self {
            PrimitiveKind::Up => Some((0, -1)),
            PrimitiveKind::Down => Some((0, 1)),
            PrimitiveKind::Left => Some((-1, 0)),
            PrimitiveKind::Right => Some((1, 0)),
            PrimitiveKind::Astar => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Up => "up",
            PrimitiveKind::Down => "down",
            PrimitiveKind::Left => "left",
            PrimitiveKind::Right => "right",
            PrimitiveKind::Astar => "astar",
        }
    }
}

/// A `(object, primitive)` pair: which object to actuate and how.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrimitiveAction {
    pub object: usize,
    pub kind: PrimitiveKind,
}

impl PrimitiveAction {
    /// Index into the flat `n_max x 5` action space.
    pub fn flat_index(self) -> usize {
        self.object * 5 + self.kind.index()
    }

    pub fn from_flat_index(i: usize) -> PrimitiveAction {
        PrimitiveAction {
            object: i / 5,
            kind: PrimitiveKind::from_index(i % 5).expect("kind index < 5"),
        }
    }
}

/// An ordered list of 4-connected waypoint poses; the first waypoint is the
/// object's current pose. A path of `len() == 0` means "no motion".
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Path {
    pub waypoints: Vec<Pose>,
}

impl Path {
    /// Number of single-cell moves along the path.
    pub fn len(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> Pose {
        *self.waypoints.last().expect("path has a start waypoint")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PathError {
    #[error("object id {0} out of range")]
    UnknownObject(usize),
}

/// Static collision mask for moving one object: every cell covered by some
/// other object or an immovable obstacle.
pub(crate) struct Blockers {
    m: usize,
    occupied: Vec<bool>,
}

impl Blockers {
    pub(crate) fn for_object(scenario: &Scenario, state: &WorldState, object: usize) -> Blockers {
        let m = scenario.m;
        let mut occupied = vec![false; m * m];
        for r in &scenario.immovable {
            for dy in 0..r.h {
                for dx in 0..r.w {
                    occupied[(r.y as usize + dy) * m + r.x as usize + dx] = true;
                }
            }
        }
        for other in 0..scenario.n_objects() {
            if other == object {
                continue;
            }
            for (x, y) in scenario.footprint(other, state.poses[other]) {
                occupied[y as usize * m + x as usize] = true;
            }
        }
        Blockers { m, occupied }
    }

    /// True iff the object's whole footprint fits on free cells at `pose`.
    fn placement_free(&self, scenario: &Scenario, object: usize, pose: Pose) -> bool {
        let (w, h) = scenario.objects[object].extent(pose.phi);
        if pose.x < 0
            || pose.y < 0
            || pose.x as usize + w > self.m
            || pose.y as usize + h > self.m
        {
            return false;
        }
        for dy in 0..h {
            for dx in 0..w {
                if self.occupied[(pose.y as usize + dy) * self.m + pose.x as usize + dx] {
                    return false;
                }
            }
        }
        true
    }
}

/// Sweeps the object one cell at a time in the given direction until the
/// next placement collides or leaves the grid. The returned path may have
/// length zero, which callers treat as an illegal action.
pub fn directional_sweep(
    scenario: &Scenario,
    state: &WorldState,
    object: usize,
    kind: PrimitiveKind,
) -> Path {
    let blockers = Blockers::for_object(scenario, state, object);
    sweep_with_blockers(scenario, state, object, kind, &blockers)
}

fn sweep_with_blockers(
    scenario: &Scenario,
    state: &WorldState,
    object: usize,
    kind: PrimitiveKind,
    blockers: &Blockers,
) -> Path {
    let (dx, dy) = kind.delta().expect("directional kind");
    let mut waypoints = vec![state.poses[object]];
    let mut cur = state.poses[object];
    loop {
        let next = Pose {
            x: cur.x + dx,
            y: cur.y + dy,
            phi: cur.phi,
        };
        if !blockers.placement_free(scenario, object, next) {
            break;
        }
        waypoints.push(next);
        cur = next;
    }
    Path { waypoints }
}

/// A* route from the object's current pose to its own target, treating every
/// other object and all immovables as obstacles. Returns `None` when the
/// object already sits on its target or no route exists.
///
/// Unit move cost with a Manhattan-distance heuristic, so returned paths are
/// length-minimal. Equal-cost frontier entries pop in insertion order and
/// neighbors expand up/down/left/right, which pins the tie-break.
pub fn astar_path(scenario: &Scenario, state: &WorldState, object: usize) -> Option<Path> {
    let blockers = Blockers::for_object(scenario, state, object);
    astar_with_blockers(scenario, state, object, &blockers)
}

fn astar_with_blockers(
    scenario: &Scenario,
    state: &WorldState,
    object: usize,
    blockers: &Blockers,
) -> Option<Path> {
    let m = scenario.m;
    let start = state.poses[object];
    let goal = scenario.target[object];
    if start == goal {
        return None;
    }
    let cell = |p: Pose| p.y as usize * m + p.x as usize;
    let manhattan =
        |p: Pose| ((p.x - goal.x).abs() + (p.y - goal.y).abs()) as u32;

    let mut g: Vec<u32> = vec![u32::MAX; m * m];
    let mut parent: Vec<u32> = vec![u32::MAX; m * m];
    let mut open: BinaryHeap<Reverse<(u32, u64, u32)>> = BinaryHeap::new();
    let mut seq: u64 = 0;

    g[cell(start)] = 0;
    open.push(Reverse((manhattan(start), seq, cell(start) as u32)));

    while let Some(Reverse((_, _, c))) = open.pop() {
        let c = c as usize;
        let cur = Pose {
            x: (c % m) as i32,
            y: (c / m) as i32,
            phi: start.phi,
        };
        if cur.x == goal.x && cur.y == goal.y {
            let mut cells = vec![c];
            let mut back = c;
            while parent[back] != u32::MAX {
                back = parent[back] as usize;
                cells.push(back);
            }
            cells.reverse();
            let waypoints = cells
                .into_iter()
                .map(|cc| Pose {
                    x: (cc % m) as i32,
                    y: (cc / m) as i32,
                    phi: start.phi,
                })
                .collect();
            return Some(Path { waypoints });
        }
        let g_cur = g[c];
        for (dx, dy) in [(0, -1), (0, 1), (-1, 0), (1, 0)] {
            let next = Pose {
                x: cur.x + dx,
                y: cur.y + dy,
                phi: cur.phi,
            };
            if !blockers.placement_free(scenario, object, next) {
                continue;
            }
            let nc = cell(next);
            if g_cur + 1 < g[nc] {
                g[nc] = g_cur + 1;
                parent[nc] = c as u32;
                seq += 1;
                open.push(Reverse((g_cur + 1 + manhattan(next), seq, nc as u32)));
            }
        }
    }
    None
}

/// Dispatches an action to its primitive expansion. Returns `Ok(None)` for
/// zero-displacement sweeps, unreachable astar routes, finished-object astar,
/// and immovable objects; the returned path is exactly what the simulator
/// step executes.
pub fn expand_primitive(
    scenario: &Scenario,
    state: &WorldState,
    action: PrimitiveAction,
) -> Result<Option<Path>, PathError> {
    if action.object >= scenario.n_objects() {
        return Err(PathError::UnknownObject(action.object));
    }
    let blockers = Blockers::for_object(scenario, state, action.object);
    Ok(expand_with_blockers(scenario, state, action, &blockers))
}

pub(crate) fn expand_with_blockers(
    scenario: &Scenario,
    state: &WorldState,
    action: PrimitiveAction,
    blockers: &Blockers,
) -> Option<Path> {
    if !scenario.objects[action.object].movable {
        return None;
    }
    match action.kind {
        PrimitiveKind::Astar => astar_with_blockers(scenario, state, action.object, blockers),
        _ => {
            let path = sweep_with_blockers(scenario, state, action.object, action.kind, blockers);
            if path.is_empty() {
                None
            } else {
                Some(path)
            }
        }
    }
}
