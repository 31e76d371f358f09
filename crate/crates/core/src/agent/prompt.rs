use super::{AgentState, ProposedAction, SessionConfig, Thoughts};
use crate::gateway::Completion;

pub const CRITIQUE_FRAGMENT: &str =
    "Critically evaluate tool outputs, challenge them when warranted, reconcile inconsistencies, and explain your confidence.";

/// A reply starting with this marker asks the user a question instead of answering.
pub const CLARIFY_MARKER: &str = "CLARIFY:";

pub fn orchestrator_system_prompt(config: &SessionConfig, retrieval_tool: Option<&str>) -> String {
    let mut p = String::from(
        "You are the orchestrator of a dental assistant. Each request arrives labelled with the user's intents \
         and with the imaging modality of every uploaded image. You also see the memory of earlier steps and \
         fresh observations from tools.\n\
         Call the expert tools when they help; independent tools may be called together in one step. \
         Pass image ids exactly as given and only use a tool on images of a modality it supports.\n",
    );
    if let Some(tool) = retrieval_tool {
        p.push_str(&format!(
            "Use {tool} to ground medical facts in the indexed textbooks, and cite what you use as (book title, p. page).\n"
        ));
    }
    if config.critique_prompt_enabled {
        p.push_str(CRITIQUE_FRAGMENT);
        p.push_str(
            " Results marked tool_error, timeout or schema_violation are unreliable evidence; say so if you rely on them.\n",
        );
    }
    p.push_str(&format!(
        "If you cannot proceed without more information from the user, reply with a single line starting with \
         {CLARIFY_MARKER} followed by your question.\n\
         When you have enough evidence, reply with the final answer as plain text and call no tools. \
         Answer in the language of the request.",
    ));
    p
}

pub(crate) fn render_state(state: &AgentState, context: &str) -> String {
    let mut out = String::new();
    if context.is_empty() {
        out.push_str("## Current request\n");
        out.push_str(state.current_instruction.render().trim_end());
    } else {
        out.push_str(context);
    }
    out.push_str(&format!("\n\n## Step {}\n", state.iteration + 1));
    out.push_str("## Observations\n");
    if state.pending_observations.is_empty() {
        out.push_str("(none)\n");
    } else {
        for (i, o) in state.pending_observations.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, o));
        }
    }
    out
}

/// Maps a completion onto thoughts. `None` means the completion was empty
/// or carried unparseable tool arguments.
pub fn parse_completion(completion: &Completion) -> Option<Thoughts> {
    let text = completion.text.as_deref().unwrap_or("").trim().to_string();
    if !completion.tool_calls.is_empty() {
        let mut actions = Vec::with_capacity(completion.tool_calls.len());
        for call in &completion.tool_calls {
            let args = call.parsed_arguments().ok()?;
            if !args.is_object() {
                return None;
            }
            actions.push(ProposedAction { tool_name: call.name.clone(), raw_args: args });
        }
        return Some(Thoughts { text, proposed_actions: actions, ..Thoughts::default() });
    }
    if text.is_empty() {
        return None;
    }
    let upper: String = text.chars().take(CLARIFY_MARKER.len()).collect::<String>().to_ascii_uppercase();
    if upper == CLARIFY_MARKER {
        let question = text[CLARIFY_MARKER.len()..].trim().to_string();
        return Some(Thoughts {
            draft_response: Some(if question.is_empty() { text.clone() } else { question }),
            text,
            needs_user_input: true,
            ..Thoughts::default()
        });
    }
    Some(Thoughts { draft_response: Some(text.clone()), text, ready_to_respond: true, ..Thoughts::default() })
}

pub(crate) const REPAIR_PROMPT: &str = "Your previous reply was empty or its tool arguments were not a JSON object. \
Either call tools with valid JSON object arguments, reply with the final answer as plain text, \
or ask the user a question on a line starting with CLARIFY:.";
