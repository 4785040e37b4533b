use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};

use spatial_core::eval::{Agent, AgentError, AgentView};
use spatial_core::grammar::{render_trajectory, GrammarConfig, Trajectory, Turn, TurnKind};
use spatial_core::image::{ImageRef, ImageStore};
use spatial_core::tools::encode_png_b64;

/// Environment variable naming the chat-completions endpoint.
pub const AGENT_ENDPOINT_ENV: &str = "SPATIALBOX_AGENT";

/// Instructions sent as the system message of every conversation.
pub const SYSTEM_PROMPT: &str = r#"You answer spatial questions about an image, and you may call visual tools.
Write your reasoning inside <analy></analy>. To call tools, write one or more calls inside <action></action>, for example:
<action>CountObjects(img_path="image-0", text_labels=["table"])</action>
Tool results come back inside <obs></obs>. Each rendered result is a new image (image-1, image-2, ...) that later calls may use.
Available tools:
SegmentObjects(img_path, text_labels, threshold=0.1): centroids and masks of the named objects.
EstimateDepth(img_path, text_labels=[]): relative depth (0 near, 1 far) averaged over each named object.
EstimateSize(img_path, text_labels, threshold=0.1): centroid and pixel extent of each named object.
CountObjects(img_path, text_labels, threshold=0.1): number of instances and their centroids.
ZoomCrop(img_path, box=[x1, y1, x2, y2] or center=[x, y], zoom_factor=1.0): crop and enlarge a region.
Get3DPoint(img_path, text_labels): [X, Y, Z] in meters relative to the camera.
If a tool fails or misses objects, fall back on the original image.
Finish with the answer alone inside <ans></ans>: an option letter for multiple choice, a number otherwise."#;

fn image_part(store: &ImageStore, image: ImageRef) -> Option<Value> {
    let stored = store.get(image)?;
    let url = format!("data:image/png;base64,{}", encode_png_b64(&stored.raster));
    Some(json!({ "type": "image_url", "image_url": { "url": url } }))
}

fn text_part(text: &str) -> Value {
    json!({ "type": "text", "text": text })
}

fn flush_assistant(messages: &mut Vec<Value>, pending: &mut Vec<Turn>, grammar: &GrammarConfig) {
    if pending.is_empty() {
        return;
    }
    let text = render_trajectory(&Trajectory::new(std::mem::take(pending)), grammar);
    messages.push(json!({ "role": "assistant", "content": text }));
}

/// The conversation so far in chat-completions form. Observation turns
/// become user messages carrying their rendered images.
pub fn chat_messages(view: &AgentView<'_>) -> Vec<Value> {
    let grammar = GrammarConfig::default();
    let mut first = vec![text_part(&view.qa.prompt())];
    first.extend(image_part(view.store, ImageRef::INPUT));
    let mut messages = vec![
        json!({ "role": "system", "content": SYSTEM_PROMPT }),
        json!({ "role": "user", "content": first }),
    ];
    let mut pending = Vec::new();
    for turn in &view.transcript.turns {
        if turn.kind != TurnKind::Observation {
            pending.push(turn.clone());
            continue;
        }
        flush_assistant(&mut messages, &mut pending, &grammar);
        let text = render_trajectory(&Trajectory::new(vec![turn.clone()]), &grammar);
        let mut parts = vec![text_part(&text)];
        parts.extend(turn.attachments.iter().filter_map(|r| image_part(view.store, *r)));
        messages.push(json!({ "role": "user", "content": parts }));
    }
    flush_assistant(&mut messages, &mut pending, &grammar);
    messages
}

/// Agent backed by an OpenAI-style `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteAgent {
    base: String,
    model: String,
    api_key: Option<String>,
    client: Client,
    max_tokens: u32,
}

impl RemoteAgent {
    pub fn new(endpoint: &str, model: impl Into<String>) -> Result<Self, reqwest::Error> {
        Ok(Self {
            base: endpoint.trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: None,
            client: Client::builder().timeout(Duration::from_secs(120)).build()?,
            max_tokens: 1024,
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

impl Agent for RemoteAgent {
    fn name(&self) -> &str {
        &self.model
    }

    fn act(&mut self, view: &AgentView<'_>) -> Result<String, AgentError> {
        let body = json!({
            "model": self.model,
            "messages": chat_messages(view),
            "temperature": 0.0,
            "max_tokens": self.max_tokens,
        });
        let mut request = self.client.post(format!("{}/chat/completions", self.base)).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| AgentError(format!("agent endpoint unreachable: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            return Err(AgentError(format!("agent endpoint returned HTTP {status}")));
        }
        let reply: Value = response.json().map_err(|e| AgentError(format!("unreadable agent reply: {e}")))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AgentError("agent reply has no message content".into()))
    }
}
