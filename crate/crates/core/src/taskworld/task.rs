use serde::{Deserialize, Serialize};

/// Default distance within which the success predicate fires.
pub const SUCCESS_RADIUS: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Push,
    Reach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalSide {
    Left,
    Right,
    Top,
    Bottom,
}

impl Verb {
    pub fn word(self) -> &'static str {
        match self {
            Verb::Push => "push",
            Verb::Reach => "reach",
        }
    }
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];
    pub fn word(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];
    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }
    /// Object fill color, quantized to u8 levels.
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 60, 60],
            Color::Green => [60, 200, 70],
            Color::Blue => [60, 90, 220],
            Color::Yellow => [230, 220, 60],
        }
    }
}

impl GoalSide {
    pub const ALL: [GoalSide; 4] = [
        GoalSide::Left,
        GoalSide::Right,
        GoalSide::Top,
        GoalSide::Bottom,
    ];
    pub fn word(self) -> &'static str {
        match self {
            GoalSide::Left => "left",
            GoalSide::Right => "right",
            GoalSide::Top => "top",
            GoalSide::Bottom => "bottom",
        }
    }
    /// Center of the goal region in world coordinates. The inset is smaller
    /// than the success radius so an object pinned against the wall can still
    /// satisfy the predicate.
    pub fn goal_pos(self) -> [f64; 2] {
        match self {
            GoalSide::Left => [0.06, 0.5],
            GoalSide::Right => [0.94, 0.5],
            GoalSide::Top => [0.5, 0.94],
            GoalSide::Bottom => [0.5, 0.06],
        }
    }
}

/// A parameterized manipulation task: what to move, where, and the caption
/// describing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub verb: Verb,
    pub object_shape: Shape,
    pub object_color: Color,
    pub goal_side: GoalSide,
    pub caption: String,
    pub success_radius: f64,
}

impl TaskSpec {
    fn push(color: Color, shape: Shape, side: GoalSide) -> TaskSpec {
        TaskSpec {
            task_id: format!("push-{}-{}-{}", color.word(), shape.word(), side.word()),
            verb: Verb::Push,
            object_shape: shape,
            object_color: color,
            goal_side: side,
            caption: format!(
                "push the {} {} to the {} goal",
                color.word(),
                shape.word(),
                side.word()
            ),
            success_radius: SUCCESS_RADIUS,
        }
    }

    fn reach(color: Color, shape: Shape) -> TaskSpec {
        TaskSpec {
            task_id: format!("reach-{}-{}", color.word(), shape.word()),
            verb: Verb::Reach,
            object_shape: shape,
            object_color: color,
            // Reach tasks carry a nominal side; the predicate and caption ignore it.
            goal_side: GoalSide::Left,
            caption: format!("reach the {} {}", color.word(), shape.word()),
            success_radius: SUCCESS_RADIUS,
        }
    }
}

/// The full 60-task family: 48 push combinations (3 shapes x 4 colors x 4
/// sides) plus 12 reach combinations (3 shapes x 4 colors), in alphabetical
/// task-id order.
pub fn enumerate_tasks() -> Vec<TaskSpec> {
    let mut tasks = Vec::with_capacity(60);
    for color in Color::ALL {
        for shape in Shape::ALL {
            for side in GoalSide::ALL {
                tasks.push(TaskSpec::push(color, shape, side));
            }
            tasks.push(TaskSpec::reach(color, shape));
        }
    }
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    debug_assert_eq!(tasks.len(), 60);
    tasks
}

/// Look up one task by id.
pub fn task_by_id(task_id: &str) -> crate::Result<TaskSpec> {
    enumerate_tasks()
        .into_iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| crate::Error::UnknownTask(task_id.to_string()))
}
