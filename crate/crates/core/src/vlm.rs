//! Prompt text and request manifests for a vision-language model, with a
//! pluggable transport.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROMPT_PREAMBLE: &str = "Be definitive in your answers. Avoid hedging words like \"potentially\", \"possibly\", or \"probably\", and other speculative language. Also, answer concisely; one or a few sentences at most. I am giving you a video clip with audio of a scene.";

/// Included only when the acoustic field video is part of the input.
pub const PROMPT_ACOUSTIC_FIELD: &str = "The video clip has two synchronized visualizations of the same camera view. The top is the standard video of the scene. Bottom is the same video, but overlaid with a sound pressure map (jet color scheme, e.g., blue is no or low sound, and oranges and reds are louder sound sources). The sound pressure map shows where sounds are coming from. Your answer should not explicitly mention the video or the sound pressure map.";

pub const PROMPT_QUESTION_LEAD: &str = "Using this information, I want you to answer the following question:";

/// Separator between prompt blocks and before the question.
pub const PROMPT_SEPARATOR: &str = "\n";

pub const REQUEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// RGB video and stereo audio only.
    Conventional,
    /// Stacked RGB + acoustic field video and stereo audio.
    ConventionalPlusAf,
    /// Streaming variant of `ConventionalPlusAf` without the closing
    /// question lead; the user's request follows directly.
    Live,
}

impl PromptMode {
    pub fn includes_acoustic_field(self) -> bool {
        !matches!(self, PromptMode::Conventional)
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Conventional => "conventional",
            PromptMode::ConventionalPlusAf => "conventional_plus_af",
            PromptMode::Live => "live",
        })
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conventional" => Ok(PromptMode::Conventional),
            "conventional_plus_af" | "conventional+af" => Ok(PromptMode::ConventionalPlusAf),
            "live" => Ok(PromptMode::Live),
            other => Err(Error::Argument(format!("unknown prompt mode {other:?}"))),
        }
    }
}

pub fn build_prompt(mode: PromptMode, question: &str) -> Result<String> {
    let question = question.trim();
    if question.is_empty() {
        return Err(Error::Argument("question must not be empty".into()));
    }
    let mut blocks = vec![PROMPT_PREAMBLE];
    if mode.includes_acoustic_field() {
        blocks.push(PROMPT_ACOUSTIC_FIELD);
    }
    if mode != PromptMode::Live {
        blocks.push(PROMPT_QUESTION_LEAD);
    }
    blocks.push(question);
    Ok(blocks.join(PROMPT_SEPARATOR))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaRefs {
    /// Frame-sequence manifest (conventional or stacked frames).
    pub frames: PathBuf,
    /// Stereo WAV.
    pub audio: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestManifest {
    pub schema: u32,
    pub mode: PromptMode,
    pub prompt: String,
    pub question: String,
    pub media: MediaRefs,
}

impl RequestManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RequestManifest = serde_json::from_str(text).map_err(|e| Error::Json {
            path: "request".into(),
            message: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    /// Schema version and prompt/mode consistency.
    pub fn validate(&self) -> Result<()> {
        if self.schema != REQUEST_SCHEMA_VERSION {
            return Err(Error::Packaging(format!("unsupported schema {}", self.schema)));
        }
        let expected = build_prompt(self.mode, &self.question)?;
        if self.prompt != expected {
            return Err(Error::Packaging(format!(
                "prompt does not match the {} template",
                self.mode
            )));
        }
        Ok(())
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Packaging(format!("missing media file {}", path.display())))
    }
}

pub fn package_request(mode: PromptMode, media: MediaRefs, question: &str) -> Result<RequestManifest> {
    require_file(&media.frames)?;
    require_file(&media.audio)?;
    let prompt = build_prompt(mode, question)?;
    Ok(RequestManifest {
        schema: REQUEST_SCHEMA_VERSION,
        mode,
        prompt,
        question: question.trim().to_string(),
        media,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub session: usize,
    pub question: String,
    pub text: String,
}

/// One inference session; consumed by a single request.
pub trait Session {
    fn send(self: Box<Self>, request: &RequestManifest) -> Result<Response>;
}

/// Factory for independent inference sessions.
pub trait Transport: Sync {
    fn open_session(&self) -> Result<Box<dyn Session + '_>>;
}

/// Opens a fresh session for every manifest and returns responses in order.
pub fn dispatch_all(transport: &dyn Transport, requests: &[RequestManifest]) -> Result<Vec<Response>> {
    requests
        .iter()
        .map(|r| transport.open_session()?.send(r))
        .collect()
}

/// Offline transport returning canned answers keyed by question.
#[derive(Debug, Default)]
pub struct MockTransport {
    answers: HashMap<String, String>,
    sessions: AtomicUsize,
}

impl MockTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_answer(mut self, question: impl Into<String>, answer: impl Into<String>) -> Self {
        self.answers.insert(question.into(), answer.into());
        self
    }

    pub fn sessions_opened(&self) -> usize {
        self.sessions.load(Ordering::SeqCst)
    }
}

struct MockSession<'a> {
    id: usize,
    answers: &'a HashMap<String, String>,
    used: bool,
}

impl Session for MockSession<'_> {
    fn send(mut self: Box<Self>, request: &RequestManifest) -> Result<Response> {
        debug_assert!(!self.used);
        self.used = true;
        request.validate()?;
        let text = self
            .answers
            .get(&request.question)
            .cloned()
            .unwrap_or_else(|| format!("[mock:{}] {}", request.mode, request.question));
        Ok(Response {
            session: self.id,
            question: request.question.clone(),
            text,
        })
    }
}

impl Transport for MockTransport {
    fn open_session(&self) -> Result<Box<dyn Session + '_>> {
        let id = self.sessions.fetch_add(1, Ordering::SeqCst);
        Ok(Box::new(MockSession {
            id,
            answers: &self.answers,
            used: false,
        }))
    }
}
