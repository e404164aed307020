//! Prompt rendering for the three model families: base models driven by a
//! plain-text conversation sketch, tuned models with a system input, and
//! tuned models without one.
//!
//! Rendering is a pure function of (template, side, persona, transcript,
//! final query). The same plan is exposed both as a flat string (completions
//! endpoints, base models) and as a role-tagged message list (chat
//! endpoints). Canonical joins are fixed here and snapshot-tested: a single
//! newline between turns, `PREFIX: text` turn lines for base models.

use crate::domain::{Persona, Role, Transcript};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which prompt family the target model expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Base,
    TunedWithSystem,
    TunedWithoutSystem,
}

/// Which conversation participant a prompt is rendered for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Tested,
    Interlocutor,
}

/// Structural markers for tuned-model templates. Models define their own
/// keywords, so these come from the backend configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateTags {
    pub system_prefix: String,
    pub system_suffix: String,
    pub user_prefix: String,
    pub user_suffix: String,
    pub assistant_prefix: String,
    pub assistant_suffix: String,
}

impl Default for TemplateTags {
    fn default() -> TemplateTags {
        TemplateTags {
            system_prefix: "<|system|>\n".into(),
            system_suffix: "\n".into(),
            user_prefix: "<|user|>\n".into(),
            user_suffix: "\n".into(),
            assistant_prefix: "<|assistant|>\n".into(),
            assistant_suffix: "\n".into(),
        }
    }
}

/// Literal cue appended after the final query so that the next token is an
/// answer letter.
pub const DEFAULT_QUERY_STRING: &str = "Answer:\n(";

/// Acknowledgment turn inserted after the persona instruction for tuned
/// models without a system input.
pub fn persona_acknowledgment(persona_name: &str) -> String {
    format!("I understand. I will answer as {persona_name}.")
}

const INTERLOCUTOR_ACKNOWLEDGMENT: &str = "I understand.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub tags: TemplateTags,
    pub query_string: String,
}

impl PromptTemplate {
    pub fn new(kind: TemplateKind) -> PromptTemplate {
        PromptTemplate {
            kind,
            tags: TemplateTags::default(),
            query_string: DEFAULT_QUERY_STRING.to_string(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("persona has an empty name")]
    MissingPersonaName,
    #[error("transcript is malformed: {0}")]
    MalformedTranscript(String),
}

/// Message role in the rendered plan, from the prompted model's perspective:
/// the prompted side is the assistant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    fn new(role: ChatRole, content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// A fully rendered prompt: the flat string for completion-style endpoints
/// and the equivalent message list for chat-style endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub messages: Vec<ChatMessage>,
    /// True when a final query (with the answer cue) terminates the prompt.
    pub expects_answer: bool,
    /// Sequences marking the end of the generated turn, for completion-style
    /// endpoints that would otherwise keep writing the conversation.
    pub stop: Vec<String>,
}

/// The instruction handed to the interlocutor model instance.
///
/// The persona sentence, when a persona is set, becomes the second sentence
/// of the instruction.
pub fn interlocutor_instruction(persona: Option<&Persona>) -> Result<String, PromptError> {
    match persona {
        None => Ok(
            "You are simulating a human using a chatbot. Your every reply must be in one \
             sentence only."
                .to_string(),
        ),
        Some(p) => {
            if p.name.is_empty() {
                return Err(PromptError::MissingPersonaName);
            }
            Ok(format!(
                "You are simulating a human using a chatbot. The chatbot is pretending to be \
                 {}. Your every reply must be in one sentence only.",
                p.name
            ))
        }
    }
}

/// The `CONTEXT:` preamble for base models.
fn base_context(side: Side, persona: Option<&Persona>) -> String {
    match (side, persona) {
        (Side::Tested, Some(p)) => format!(
            "CONTEXT: The following is a conversation with {}",
            p.instruction
        ),
        (Side::Tested, None) => {
            "CONTEXT: The following is a conversation with a chatbot.".to_string()
        }
        (Side::Interlocutor, Some(p)) => format!(
            "CONTEXT: The following is a conversation between a human and a chatbot. The \
             chatbot is pretending to be {}. The human's every reply must be in one sentence \
             only.",
            p.name
        ),
        (Side::Interlocutor, None) => "CONTEXT: The following is a conversation between a human \
                                       and a chatbot. The human's every reply must be in one \
                                       sentence only."
            .to_string(),
    }
}

/// Turn prefixes for base models: (prompted side, other side).
fn base_prefixes(side: Side, persona: Option<&Persona>) -> (String, String) {
    match side {
        Side::Tested => {
            let own = persona.map(|p| p.name.clone()).unwrap_or_else(|| "CHATBOT".into());
            (own, "USER".to_string())
        }
        Side::Interlocutor => {
            let other = persona
                .map(|p| format!("{} (CHATBOT)", p.name))
                .unwrap_or_else(|| "CHATBOT".into());
            ("HUMAN".to_string(), other)
        }
    }
}

fn plan_role(side: Side, role: Role) -> ChatRole {
    match (side, role) {
        (_, Role::System) => ChatRole::System,
        (Side::Tested, Role::TestedModel) => ChatRole::Assistant,
        (Side::Tested, Role::Interlocutor) => ChatRole::User,
        (Side::Interlocutor, Role::Interlocutor) => ChatRole::Assistant,
        (Side::Interlocutor, Role::TestedModel) => ChatRole::User,
    }
}

/// Builds the role-tagged message plan shared by both render targets.
fn message_plan(
    kind: TemplateKind,
    side: Side,
    persona: Option<&Persona>,
    transcript: &Transcript,
    final_query: Option<&str>,
) -> Result<Vec<ChatMessage>, PromptError> {
    if let Some(p) = persona {
        if p.name.is_empty() {
            return Err(PromptError::MissingPersonaName);
        }
    }
    transcript
        .check()
        .map_err(PromptError::MalformedTranscript)?;

    let mut plan = Vec::new();
    match (kind, side) {
        (TemplateKind::Base, _) => {} // the CONTEXT preamble is not a message
        (TemplateKind::TunedWithSystem, Side::Tested) => {
            if let Some(p) = persona {
                plan.push(ChatMessage::new(ChatRole::System, p.instruction.clone()));
            }
        }
        (TemplateKind::TunedWithSystem, Side::Interlocutor) => {
            plan.push(ChatMessage::new(
                ChatRole::System,
                interlocutor_instruction(persona)?,
            ));
        }
        (TemplateKind::TunedWithoutSystem, Side::Tested) => {
            if let Some(p) = persona {
                plan.push(ChatMessage::new(ChatRole::User, p.instruction.clone()));
                plan.push(ChatMessage::new(
                    ChatRole::Assistant,
                    persona_acknowledgment(&p.name),
                ));
            }
        }
        (TemplateKind::TunedWithoutSystem, Side::Interlocutor) => {
            plan.push(ChatMessage::new(
                ChatRole::User,
                interlocutor_instruction(persona)?,
            ));
            plan.push(ChatMessage::new(
                ChatRole::Assistant,
                INTERLOCUTOR_ACKNOWLEDGMENT,
            ));
        }
    }
    for m in &transcript.messages {
        plan.push(ChatMessage::new(plan_role(side, m.role), m.text.clone()));
    }
    if let Some(q) = final_query {
        plan.push(ChatMessage::new(ChatRole::User, q));
    }
    Ok(plan)
}

/// Renders a prompt for `side`, ready for the model to continue.
///
/// Without a final query the prompt ends with the prompted side's own turn
/// cue (the model is about to produce its next conversation message). With a
/// final query the query becomes the last user message and the template's
/// query string is appended so that next-token mass concentrates on the
/// answer letters.
pub fn render(
    template: &PromptTemplate,
    side: Side,
    persona: Option<&Persona>,
    transcript: &Transcript,
    final_query: Option<&str>,
) -> Result<RenderedPrompt, PromptError> {
    let plan = message_plan(template.kind, side, persona, transcript, final_query)?;
    let stop = match template.kind {
        TemplateKind::Base => {
            let (own, other) = base_prefixes(side, persona);
            vec![format!("\n{own}:"), format!("\n{other}:")]
        }
        _ => vec![
            template.tags.user_prefix.clone(),
            template.tags.assistant_prefix.clone(),
        ],
    };
    let text = match template.kind {
        TemplateKind::Base => {
            let (own, other) = base_prefixes(side, persona);
            let mut lines = vec![base_context(side, persona)];
            for m in &plan {
                match m.role {
                    ChatRole::System => lines.push(m.content.clone()),
                    ChatRole::Assistant => lines.push(format!("{own}: {}", m.content)),
                    ChatRole::User => lines.push(format!("{other}: {}", m.content)),
                }
            }
            if final_query.is_some() {
                lines.push(format!("{own}: {}", template.query_string));
            } else {
                lines.push(format!("{own}:"));
            }
            lines.join("\n")
        }
        TemplateKind::TunedWithSystem | TemplateKind::TunedWithoutSystem => {
            let tags = &template.tags;
            let mut out = String::new();
            for m in &plan {
                let (prefix, suffix) = match m.role {
                    ChatRole::System => (&tags.system_prefix, &tags.system_suffix),
                    ChatRole::User => (&tags.user_prefix, &tags.user_suffix),
                    ChatRole::Assistant => (&tags.assistant_prefix, &tags.assistant_suffix),
                };
                out.push_str(prefix);
                out.push_str(&m.content);
                out.push_str(suffix);
            }
            out.push_str(&tags.assistant_prefix);
            if final_query.is_some() {
                out.push_str(&template.query_string);
            }
            out
        }
    };
    Ok(RenderedPrompt {
        text,
        messages: plan,
        expects_answer: final_query.is_some(),
        stop,
    })
}

/// Recovers the conversation turns from a flat rendered prompt using the
/// template's own delimiters. Instruction preambles, acknowledgment turns
/// and the trailing cue are stripped; what remains is the transcript's
/// message sequence (plus the final query, when one was rendered).
pub fn parse_rendered(
    template: &PromptTemplate,
    side: Side,
    persona: Option<&Persona>,
    rendered: &str,
) -> Vec<(Role, String)> {
    let own_role = match side {
        Side::Tested => Role::TestedModel,
        Side::Interlocutor => Role::Interlocutor,
    };
    let other_role = match side {
        Side::Tested => Role::Interlocutor,
        Side::Interlocutor => Role::TestedModel,
    };
    let mut turns: Vec<(Role, String)> = Vec::new();
    match template.kind {
        TemplateKind::Base => {
            let (own, other) = base_prefixes(side, persona);
            let own_tag = format!("{own}: ");
            let other_tag = format!("{other}: ");
            for line in rendered.lines() {
                if line.starts_with("CONTEXT: ") {
                    continue;
                }
                if let Some(rest) = line.strip_prefix(&own_tag) {
                    turns.push((own_role, rest.to_string()));
                } else if let Some(rest) = line.strip_prefix(&other_tag) {
                    turns.push((other_role, rest.to_string()));
                } else if line == format!("{own}:") {
                    continue; // trailing generation cue
                } else if let Some((_, last)) = turns.last_mut() {
                    last.push('\n');
                    last.push_str(line); // continuation of a multi-line turn
                }
            }
        }
        TemplateKind::TunedWithSystem | TemplateKind::TunedWithoutSystem => {
            let tags = &template.tags;
            let mut rest = rendered;
            while !rest.is_empty() {
                let candidates = [
                    (&tags.system_prefix, None),
                    (&tags.user_prefix, Some(other_role)),
                    (&tags.assistant_prefix, Some(own_role)),
                ];
                let Some((prefix, role)) = candidates
                    .iter()
                    .find(|(p, _)| rest.starts_with(p.as_str()))
                    .map(|(p, r)| (p.as_str(), *r))
                else {
                    break;
                };
                rest = &rest[prefix.len()..];
                // Content runs until the next known prefix.
                let next = [
                    &tags.system_prefix,
                    &tags.user_prefix,
                    &tags.assistant_prefix,
                ]
                .iter()
                .filter_map(|p| rest.find(p.as_str()))
                .min()
                .unwrap_or(rest.len());
                let raw = &rest[..next];
                rest = &rest[next..];
                if let Some(role) = role {
                    let content = raw.strip_suffix(match role == own_role {
                        true => tags.assistant_suffix.as_str(),
                        false => tags.user_suffix.as_str(),
                    });
                    turns.push((role, content.unwrap_or(raw).to_string()));
                }
            }
            // Drop the persona instruction + acknowledgment preamble.
            if template.kind == TemplateKind::TunedWithoutSystem {
                let has_preamble = match side {
                    Side::Tested => persona.is_some(),
                    Side::Interlocutor => true,
                };
                if has_preamble && turns.len() >= 2 {
                    turns.drain(..2);
                }
            }
            // Drop the empty trailing generation cue, if present.
            if let Some((role, content)) = turns.last() {
                if *role == own_role && content.is_empty() {
                    turns.pop();
                }
            }
        }
    }
    turns
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{self, Message, PopulationKind, TopicId, Transcript};

    fn gandalf() -> Persona {
        domain::population(PopulationKind::FictionalCharacters)[0].clone()
    }

    fn joke_transcript(n: usize) -> Transcript {
        let topic = domain::topic(&TopicId::Joke).unwrap();
        let mut t = Transcript::opener_only(Some(gandalf()), topic, 0);
        for i in 0..n {
            let role = if i % 2 == 0 {
                Role::TestedModel
            } else {
                Role::Interlocutor
            };
            t.messages.push(Message::new(role, format!("turn {i}")));
        }
        t.n_exchanged = n;
        t
    }

    #[test]
    fn base_tested_snapshot() {
        let template = PromptTemplate::new(TemplateKind::Base);
        let t = joke_transcript(0);
        let r = render(&template, Side::Tested, Some(&gandalf()), &t, None).unwrap();
        assert_eq!(
            r.text,
            "CONTEXT: The following is a conversation with You are Gandalf from J. R. R. \
             Tolkien's Middle-earth legendarium.\nUSER: Tell me a joke.\nGandalf:"
        );
    }

    #[test]
    fn base_tested_with_query_snapshot() {
        let template = PromptTemplate::new(TemplateKind::Base);
        let t = joke_transcript(2);
        let r = render(
            &template,
            Side::Tested,
            Some(&gandalf()),
            &t,
            Some("Pick one."),
        )
        .unwrap();
        assert_eq!(
            r.text,
            "CONTEXT: The following is a conversation with You are Gandalf from J. R. R. \
             Tolkien's Middle-earth legendarium.\nUSER: Tell me a joke.\nGandalf: turn 0\n\
             USER: turn 1\nUSER: Pick one.\nGandalf: Answer:\n("
        );
        assert!(r.expects_answer);
    }

    #[test]
    fn base_interlocutor_prefixes() {
        let template = PromptTemplate::new(TemplateKind::Base);
        let t = joke_transcript(1);
        let r = render(&template, Side::Interlocutor, Some(&gandalf()), &t, None).unwrap();
        assert!(r.text.starts_with(
            "CONTEXT: The following is a conversation between a human and a chatbot. The \
             chatbot is pretending to be Gandalf. The human's every reply must be in one \
             sentence only."
        ));
        assert!(r.text.contains("\nHUMAN: Tell me a joke.\n"));
        assert!(r.text.contains("\nGandalf (CHATBOT): turn 0\n"));
        assert!(r.text.ends_with("\nHUMAN:"));
    }

    #[test]
    fn interlocutor_instruction_variants() {
        assert_eq!(
            interlocutor_instruction(None).unwrap(),
            "You are simulating a human using a chatbot. Your every reply must be in one \
             sentence only."
        );
        assert_eq!(
            interlocutor_instruction(Some(&gandalf())).unwrap(),
            "You are simulating a human using a chatbot. The chatbot is pretending to be \
             Gandalf. Your every reply must be in one sentence only."
        );
        let mut nameless = gandalf();
        nameless.name = String::new();
        assert_eq!(
            interlocutor_instruction(Some(&nameless)),
            Err(PromptError::MissingPersonaName)
        );
    }

    #[test]
    fn tuned_with_system_puts_instruction_in_system_slot() {
        let template = PromptTemplate::new(TemplateKind::TunedWithSystem);
        let t = joke_transcript(0);
        let r = render(&template, Side::Interlocutor, None, &t, None).unwrap();
        assert_eq!(r.messages[0].role, ChatRole::System);
        assert_eq!(
            r.messages[0].content,
            "You are simulating a human using a chatbot. Your every reply must be in one \
             sentence only."
        );
        // The opener is the interlocutor's own (assistant) message here.
        assert_eq!(r.messages[1].role, ChatRole::Assistant);
    }

    #[test]
    fn tuned_without_system_uses_acknowledgment_turn() {
        let template = PromptTemplate::new(TemplateKind::TunedWithoutSystem);
        let t = joke_transcript(0);
        let r = render(&template, Side::Tested, Some(&gandalf()), &t, None).unwrap();
        assert_eq!(r.messages[0].role, ChatRole::User);
        assert_eq!(r.messages[0].content, gandalf().instruction);
        assert_eq!(r.messages[1].role, ChatRole::Assistant);
        assert_eq!(r.messages[1].content, "I understand. I will answer as Gandalf.");
    }

    #[test]
    fn render_is_pure() {
        let template = PromptTemplate::new(TemplateKind::TunedWithSystem);
        let t = joke_transcript(3);
        let a = render(&template, Side::Tested, Some(&gandalf()), &t, Some("q")).unwrap();
        let b = render(&template, Side::Tested, Some(&gandalf()), &t, Some("q")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sides_never_see_each_others_instructions() {
        for kind in [
            TemplateKind::Base,
            TemplateKind::TunedWithSystem,
            TemplateKind::TunedWithoutSystem,
        ] {
            let template = PromptTemplate::new(kind);
            let t = joke_transcript(2);
            let persona = gandalf();
            let tested = render(&template, Side::Tested, Some(&persona), &t, None).unwrap();
            let inter = render(&template, Side::Interlocutor, Some(&persona), &t, None).unwrap();
            assert!(
                !tested.text.contains("You are simulating a human"),
                "{kind:?}: tested prompt leaks the interlocutor instruction"
            );
            assert!(
                !inter.text.contains(&persona.instruction),
                "{kind:?}: interlocutor prompt leaks the persona instruction"
            );
        }
    }

    #[test]
    fn final_query_is_last_content_before_cue() {
        for kind in [
            TemplateKind::Base,
            TemplateKind::TunedWithSystem,
            TemplateKind::TunedWithoutSystem,
        ] {
            let template = PromptTemplate::new(kind);
            let t = joke_transcript(2);
            let r = render(&template, Side::Tested, Some(&gandalf()), &t, Some("THE QUERY"))
                .unwrap();
            let query_pos = r.text.rfind("THE QUERY").unwrap();
            let cue_pos = r.text.rfind(DEFAULT_QUERY_STRING).unwrap();
            assert!(query_pos < cue_pos);
            assert_eq!(r.messages.last().unwrap().content, "THE QUERY");
        }
    }

    #[test]
    fn round_trip_recovers_turns() {
        for kind in [
            TemplateKind::Base,
            TemplateKind::TunedWithSystem,
            TemplateKind::TunedWithoutSystem,
        ] {
            for side in [Side::Tested, Side::Interlocutor] {
                let template = PromptTemplate::new(kind);
                let t = joke_transcript(3);
                let r = render(&template, side, Some(&gandalf()), &t, None).unwrap();
                let turns = parse_rendered(&template, side, Some(&gandalf()), &r.text);
                let expected: Vec<(Role, String)> = t
                    .messages
                    .iter()
                    .map(|m| (m.role, m.text.clone()))
                    .collect();
                assert_eq!(turns, expected, "{kind:?}/{side:?}");
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn turn_text() -> impl Strategy<Value = String> {
            // Message content that cannot collide with turn prefixes or tags.
            "[a-z][a-z0-9 ,.!?']{0,60}"
        }

        proptest! {
            #[test]
            fn round_trip_any_transcript(
                texts in proptest::collection::vec(turn_text(), 0..8),
                with_persona in proptest::bool::ANY,
                kind_sel in 0usize..3,
                tested_side in proptest::bool::ANY,
            ) {
                let kind = [
                    TemplateKind::Base,
                    TemplateKind::TunedWithSystem,
                    TemplateKind::TunedWithoutSystem,
                ][kind_sel];
                let side = if tested_side { Side::Tested } else { Side::Interlocutor };
                let persona = with_persona.then(gandalf);
                let topic = domain::topic(&TopicId::Joke).unwrap();
                let mut t = Transcript::opener_only(persona.clone(), topic, 1);
                for (i, text) in texts.iter().enumerate() {
                    let role = if i % 2 == 0 { Role::TestedModel } else { Role::Interlocutor };
                    t.messages.push(Message::new(role, text.clone()));
                }
                t.n_exchanged = texts.len();
                let template = PromptTemplate::new(kind);
                let r = render(&template, side, persona.as_ref(), &t, None).unwrap();
                let turns = parse_rendered(&template, side, persona.as_ref(), &r.text);
                let expected: Vec<(Role, String)> =
                    t.messages.iter().map(|m| (m.role, m.text.clone())).collect();
                prop_assert_eq!(turns, expected);
            }
        }
    }
}
