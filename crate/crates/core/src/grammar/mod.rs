//! Tag-structured agent trajectories (`<analy>`, `<action>`, `<obs>`, `<ans>`)
//! and the call syntax used inside action blocks.

mod action;
mod answer;
mod balance;
mod trajectory;

pub use action::{parse_action_call, render_calls, ActionCall, ArgValue, SyntaxError, SyntaxErrorKind};
pub use answer::{extract_answer, normalize_answer, AnswerError, AnswerKind, NormalizedAnswer};
pub use balance::{check_tag_balance, BalanceReport, TagCounts};
pub use trajectory::{
    parse_trajectory, parse_trajectory_bytes, render_trajectory, GrammarConfig, GrammarError, Trajectory, Turn,
    TurnKind,
};

/// Tag names of the default grammar, in order.
pub const DEFAULT_TAGS: [&str; 4] = ["analy", "action", "obs", "ans"];
