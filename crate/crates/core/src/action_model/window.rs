use super::TrajectoryEntry;

pub const WINDOW_MARKER: &str = "### Iteration ";

/// The last `size` entries, oldest first.
pub fn render_window(trajectory: &[TrajectoryEntry], size: usize) -> String {
    let start = trajectory.len().saturating_sub(size);
    let shown = &trajectory[start..];
    if shown.is_empty() {
        return "(no previous iterations)".into();
    }
    let mut out = String::new();
    for e in shown {
        out.push_str(&format!("{WINDOW_MARKER}{} (cluster {}: {})\n", e.iteration, e.cluster_index + 1, e.cluster_title));
        out.push_str(&format!("Thought: {}\n", e.thought));
        out.push_str(&format!("Actions: {}\n", e.action_verbal));
        if let Some(err) = &e.execution_error {
            out.push_str(&format!("Execution error: {err}\n"));
        }
        out.push_str(&format!("Reflection: {}\n", e.reflection));
        out.push_str(&format!("Result: {}\n", e.classification.as_str()));
        if e.advance_confirmed {
            out.push_str("Cluster completed.\n");
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}
